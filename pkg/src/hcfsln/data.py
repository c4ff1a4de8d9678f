"""Synthetic multimodal data, (N, L, D) file I/O, scaling, and pad/trim.

The synthetic generator draws a latent anchor per class, perturbs it into a
tree of sub-clusters, and renders each sample as per-modality sequences:
a modality-specific linear view of its sub-cluster latent plus smooth
temporal drift plus Gaussian noise. The hierarchy gives the within-class
tree structure that hyperbolic embeddings are suited to.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import ModalityConfig
from .fewshot import Sample


@dataclass
class DatasetMeta:
    modalities: list  # list of (name, d_m) in declared order
    seq_len: int
    n_samples: int
    class_counts: dict

    @property
    def total_dim(self):
        return sum(d for _, d in self.modalities)

    def modality_configs(self):
        return [ModalityConfig(name, d, self.seq_len) for name, d in self.modalities]


@dataclass
class SynthSpec:
    n_per_class: int = 100
    modalities: list = field(default_factory=lambda: [("audio", 4), ("ppg", 3), ("eda", 2)])
    seq_len: int = 120
    separation: float = 8.0
    noise_sigma: float = 0.5
    hierarchy_depth: int = 2
    seed: int = 0
    latent_dim: int = 6

    def __post_init__(self):
        if self.separation < 0:
            raise ValueError("separation must be nonnegative")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.hierarchy_depth < 1:
            raise ValueError("hierarchy_depth must be >= 1")


class DatasetFormatError(ValueError):
    pass


def generate_synthetic(spec):
    """Deterministic hierarchical two-class multimodal dataset."""
    rng = np.random.default_rng(spec.seed)
    d_lat = spec.latent_dim
    # class anchors `separation` apart in latent space
    direction = rng.standard_normal(d_lat)
    direction /= np.linalg.norm(direction)
    anchors = {0: -0.5 * spec.separation * direction, 1: 0.5 * spec.separation * direction}
    # fixed per-modality projections of the latent onto feature space
    proj = {name: rng.standard_normal((d_lat, d)) / np.sqrt(d_lat) for name, d in spec.modalities}

    # binary sub-cluster tree: level i shrinks the perturbation by 2^-i.
    # The offsets are shared by both classes (rooted at each class anchor), so
    # separation=0 makes the class-conditional distributions truly identical.
    n_leaves = 2 ** (spec.hierarchy_depth - 1)
    offsets = [np.zeros(d_lat)]
    for level in range(1, spec.hierarchy_depth):
        offsets = [
            parent + rng.standard_normal(d_lat) * (1.5 / 2.0 ** (level - 1))
            for parent in offsets
            for _ in (0, 1)
        ]

    samples = []
    for c in (0, 1):
        leaf_latents = [anchors[c] + off for off in offsets]
        for i in range(spec.n_per_class):
            leaf = leaf_latents[i % n_leaves]
            latent = leaf + rng.standard_normal(d_lat) * 0.3
            mods = {}
            for name, d in spec.modalities:
                base = latent @ proj[name]  # (d,)
                # smooth drift: one low-frequency sinusoid per feature
                t = np.arange(spec.seq_len) / spec.seq_len
                phase = rng.uniform(0, 2 * np.pi, d)
                freq = rng.uniform(0.5, 2.0, d)
                drift = 0.5 * np.sin(2 * np.pi * freq[None, :] * t[:, None] + phase[None, :])
                noise = rng.standard_normal((spec.seq_len, d)) * spec.noise_sigma
                mods[name] = base[None, :] + drift + noise
            samples.append(Sample(id=f"c{c}_{i:04d}", label=c, modalities=mods))
    meta = DatasetMeta(
        modalities=list(spec.modalities),
        seq_len=spec.seq_len,
        n_samples=len(samples),
        class_counts={0: spec.n_per_class, 1: spec.n_per_class},
    )
    return samples, meta


def pad_trim(seq, target_len):
    """Trim to the first target_len rows, or zero-pad up to it."""
    seq = np.asarray(seq, dtype=np.float64)
    L = seq.shape[0]
    if L >= target_len:
        return seq[:target_len].copy()
    pad = np.zeros((target_len - L, seq.shape[1]))
    return np.concatenate([seq, pad], axis=0)


# ---------------------------------------------------------------------------
# dataset file format: text header then N*L lines of D floats


def save_dataset(path, samples, meta):
    dims = ",".join(f"{name}:{d}" for name, d in meta.modalities)
    labels = ",".join(str(s.label) for s in samples)
    with open(path, "w") as fh:
        fh.write(f"M2ADX1 N={len(samples)} L={meta.seq_len} D={meta.total_dim} labels={labels} dims={dims}\n")
        for s in samples:
            row_block = np.concatenate([s.modalities[name] for name, _ in meta.modalities], axis=1)
            for row in row_block:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path):
    with open(path) as fh:
        header = fh.readline().strip()
        fields = header.split(" ")
        if not fields or fields[0] != "M2ADX1":
            raise DatasetFormatError(f"bad dataset header magic: {header[:40]!r}")
        kv = dict(f.split("=", 1) for f in fields[1:])
        n, L, D = int(kv["N"]), int(kv["L"]), int(kv["D"])
        labels = [int(x) for x in kv["labels"].split(",")] if kv["labels"] else []
        modalities = []
        for part in kv["dims"].split(","):
            name, d = part.split(":")
            modalities.append((name, int(d)))
        dsum = sum(d for _, d in modalities)
        if dsum != D:
            raise DatasetFormatError(f"header D={D} but modality dims sum to {dsum}")
        if len(labels) != n:
            raise DatasetFormatError(f"header N={n} but {len(labels)} labels")
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (n * L, D):
        raise DatasetFormatError(f"expected {n * L} rows of {D} values, got {data.shape}")
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DatasetFormatError(f"non-finite value at data row {r}, column {c}")
    samples = []
    counts = {0: 0, 1: 0}
    for i in range(n):
        block = data[i * L : (i + 1) * L]
        mods = {}
        off = 0
        for name, d in modalities:
            mods[name] = block[:, off : off + d].copy()
            off += d
        samples.append(Sample(id=f"s{i:05d}", label=labels[i], modalities=mods))
        counts[labels[i]] += 1
    meta = DatasetMeta(modalities=modalities, seq_len=L, n_samples=n, class_counts=counts)
    return samples, meta


# ---------------------------------------------------------------------------
# z-score standardization (population std, per feature over train timesteps)


@dataclass
class Scaler:
    mean: dict  # modality -> (d_m,)
    std: dict  # modality -> (d_m,), guarded below by eps

    EPS = 1e-8

    def transform_sample(self, sample):
        mods = {
            name: (arr - self.mean[name]) / self.std[name]
            for name, arr in sample.modalities.items()
        }
        return Sample(id=sample.id, label=sample.label, modalities=mods)

    def transform(self, pool):
        return [self.transform_sample(s) for s in pool]


def standardize_fit(pool):
    """Fit per-feature mean/std over all timesteps of all train samples."""
    if not pool:
        raise ValueError("cannot fit a scaler on an empty pool")
    names = list(pool[0].modalities)
    mean, std = {}, {}
    for name in names:
        stacked = np.concatenate([s.modalities[name] for s in pool], axis=0)
        mean[name] = stacked.mean(axis=0)
        sd = stacked.std(axis=0)  # population (n) convention
        std[name] = np.maximum(sd, Scaler.EPS)
    return Scaler(mean=mean, std=std)


def standardize_fit_transform(pool):
    scaler = standardize_fit(pool)
    return scaler, scaler.transform(pool)
