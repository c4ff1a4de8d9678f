"""Episodes, prototype classification, and the training losses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import geometry as geo
from .model import embed_batch

N_CLASSES = 2


@dataclass
class Sample:
    id: str
    label: int
    modalities: dict  # name -> (L, d_m) float array

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class EpisodeSpec:
    k: int  # shots per class
    b: int  # queries per class

    def __post_init__(self):
        if self.k < 1 or self.b < 1:
            raise ValueError(f"episode spec needs k >= 1 and b >= 1, got {self}")


@dataclass
class Episode:
    support: list
    query: list

    def validate(self, spec):
        sup_ids = {s.id for s in self.support}
        qry_ids = {s.id for s in self.query}
        assert len(self.support) == 2 * spec.k
        assert len(self.query) == 2 * spec.b
        assert not (sup_ids & qry_ids), "support and query sets overlap"
        for c in (0, 1):
            assert sum(1 for s in self.support if s.label == c) == spec.k
            assert sum(1 for s in self.query if s.label == c) == spec.b


@dataclass
class LossConfig:
    gamma: float = 0.2
    lam: float = 1.0
    mode: str = "combined"  # combined | proto-only | angular-only
    angular_form: str = "corrected"  # corrected | literal

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be nonnegative")
        if self.mode not in ("combined", "proto-only", "angular-only"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.angular_form not in ("corrected", "literal"):
            raise ValueError(f"unknown angular form {self.angular_form!r}")


class EpisodeError(ValueError):
    pass


def sample_episode(pool, spec, rng):
    """Draw K support + B query samples per class, uniformly without replacement."""
    by_class = {0: [s for s in pool if s.label == 0], 1: [s for s in pool if s.label == 1]}
    need = spec.k + spec.b
    for c, members in by_class.items():
        if len(members) < need:
            raise EpisodeError(
                f"class {c} has {len(members)} samples but the episode needs {need} (K={spec.k}, B={spec.b})"
            )
    support, query = [], []
    for c in (0, 1):
        members = by_class[c]
        idx = rng.choice(len(members), size=need, replace=False)
        support += [members[i] for i in idx[: spec.k]]
        query += [members[i] for i in idx[spec.k :]]
    return Episode(support=support, query=query)


def batch_arrays(samples, modality_configs):
    """Stack sample modalities into per-modality (S, L, d_m) arrays."""
    return {
        cfg.name: np.stack([s.modalities[cfg.name] for s in samples])
        for cfg in modality_configs
    }


def embed(sample, model, train=False, rng=None):
    """Embed a single sample; returns a (d',) Tensor."""
    batch = batch_arrays([sample], model.modality_configs)
    out = embed_batch(batch, model, train=train, rng=rng)
    return T.reshape(out, (-1,))


def compute_prototypes(support_embs, support_labels, space="hyperbolic"):
    """One prototype per class from the (S, d') support embeddings.

    Hyperbolic mode uses the distance-softmax weighted combination; the
    euclidean baseline uses the plain per-class mean.
    """
    protos = []
    labels = np.asarray(support_labels)
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise EpisodeError(f"no support samples for class {c}")
        pts = T.getitem(support_embs, idx)
        if space == "euclidean":
            protos.append(T.tmean(pts, axis=0))
        else:
            proto, _ = geo.weighted_prototype(pts)
            protos.append(proto)
    return T.stack(protos, axis=0)  # (2, d')


def _query_proto_distances(query_embs, prototypes, space):
    q = T.reshape(query_embs, (query_embs.data.shape[0], 1, query_embs.data.shape[1]))
    p = T.reshape(prototypes, (1,) + prototypes.data.shape)
    if space == "euclidean":
        return T.l2norm(T.sub(q, p))  # (Q, 2)
    return geo.poincare_distance(q, p)  # (Q, 2)


def classify(query_embs, prototypes, space="hyperbolic"):
    """Softmax over negative query-prototype distances; rows sum to 1."""
    d = _query_proto_distances(query_embs, prototypes, space)
    return T.softmax(T.neg(d), axis=-1)


def proto_loss(query_probs, labels):
    """Mean negative log-probability of the true class."""
    labels = np.asarray(labels)
    p_true = T.getitem(query_probs, (np.arange(labels.size), labels))
    return T.neg(T.tmean(T.log(p_true)))


def _cosines(query_embs, prototypes):
    dots = T.matmul(query_embs, T.transpose(prototypes, (1, 0)))  # (Q, 2)
    qn = T.l2norm(query_embs, keepdims=True)  # (Q, 1)
    pn = T.reshape(T.l2norm(prototypes), (1, -1))  # (1, 2)
    denom = T.clamp_min(T.mul(qn, pn), 1e-12)
    return T.div(dots, denom)


def angular_loss(query_embs, prototypes, labels, gamma, angular_form="corrected"):
    """Hinge on the cosine gap between correct and incorrect prototypes.

    corrected: mean max(0, gamma - cos_correct + cos_incorrect)
    literal:   mean max(0, cos_correct + gamma - cos_incorrect)
    With two classes the best incorrect prototype is just the other one.
    """
    labels = np.asarray(labels)
    cos = _cosines(query_embs, prototypes)
    rows = np.arange(labels.size)
    cos_true = T.getitem(cos, (rows, labels))
    cos_wrong = T.getitem(cos, (rows, 1 - labels))
    if angular_form == "corrected":
        hinge = T.relu(T.add(T.sub(gamma, cos_true), cos_wrong))
    else:
        hinge = T.relu(T.sub(T.add(cos_true, gamma), cos_wrong))
    return T.tmean(hinge)


def total_loss(proto, angular, lam, mode="combined"):
    if mode == "proto-only":
        return proto
    if mode == "angular-only":
        return T.mul(lam, angular)
    return T.add(proto, T.mul(lam, angular))


@dataclass
class EpisodeResult:
    loss: object  # scalar Tensor
    probs: object  # (Q, 2) Tensor
    labels: np.ndarray
    n_correct: int = field(init=False)

    def __post_init__(self):
        preds = np.argmax(self.probs.data, axis=-1)
        self.n_correct = int((preds == self.labels).sum())

    @property
    def accuracy(self):
        return self.n_correct / self.labels.size


def run_episode(episode, model, loss_cfg, train=False, rng=None):
    """Embed support+query in one batch, classify queries, compute the loss."""
    samples = episode.support + episode.query
    batch = batch_arrays(samples, model.modality_configs)
    embs = embed_batch(batch, model, train=train, rng=rng)
    n_sup = len(episode.support)
    sup = T.getitem(embs, slice(0, n_sup))
    qry = T.getitem(embs, slice(n_sup, None))
    sup_labels = np.array([s.label for s in episode.support])
    qry_labels = np.array([s.label for s in episode.query])
    protos = compute_prototypes(sup, sup_labels, space=model.space)
    probs = classify(qry, protos, space=model.space)
    lp = proto_loss(probs, qry_labels)
    la = angular_loss(qry, protos, qry_labels, loss_cfg.gamma, loss_cfg.angular_form)
    loss = total_loss(lp, la, loss_cfg.lam, loss_cfg.mode)
    return EpisodeResult(loss=loss, probs=probs, labels=qry_labels)
