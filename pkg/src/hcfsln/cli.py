"""Command-line surface: gen-data, train, eval, ablate, export-embeddings, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Every run directory receives the fully resolved config; re-running that config
with --threads 1 reproduces all numeric artifacts byte-exactly.
"""
from __future__ import annotations

import difflib
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import config as cfg
from . import serialize
from .checks import run_suite
from .config import ConfigError
from .data import DatasetFormatError, generate_synthetic, load_dataset, save_dataset
from .fewshot import EpisodeError, batch_arrays
from .geometry import BallViolation
from .model import embed_batch
from .serialize import BlobFormatError
from .stats import AblationGrid, DEFAULT_AXIS_VALUES, run_ablation
from .tensor import NumericError
from .train import NonFiniteError, TrainedModel, evaluate, run_repeats, split_stratified

VERBS = ("gen-data", "train", "eval", "ablate", "export-embeddings", "gradcheck")

USAGE = """\
usage: hcfsln VERB [--config FILE] [--out DIR] [--model FILE] [--threads N] [key=value ...]

verbs:
  gen-data            write a synthetic dataset (data.* keys)
  train               train on data.path, write model blob + metrics
  eval                evaluate a saved model blob on data.path
  ablate              run an ablation axis (ablate.* keys), write report
  export-embeddings   write id,label,split,coord_* rows for a saved model
  gradcheck           run the gradient check suite, print max relative errors

overrides are flat dotted keys, e.g. train.k=5; precedence: defaults < --config file < overrides.
exit codes: 0 ok, 1 usage error, 2 data/format error, 3 numeric failure.
"""


class UsageError(ValueError):
    pass


@dataclass
class CommandPlan:
    verb: str
    config_path: str = ""
    overrides: list = field(default_factory=list)
    out_dir: str = "out"
    model_path: str = ""
    threads: int = 1


def parse_args(argv):
    if not argv:
        raise UsageError(USAGE.rstrip())
    verb = argv[0]
    if verb in ("-h", "--help"):
        raise UsageError(USAGE.rstrip())
    if verb not in VERBS:
        near = difflib.get_close_matches(verb, VERBS, n=1)
        hint = f"; did you mean {near[0]!r}?" if near else ""
        raise UsageError(f"unknown verb {verb!r}{hint}")
    plan = CommandPlan(verb=verb)
    it = iter(argv[1:])
    for arg in it:
        if arg in ("--config", "--out", "--model", "--threads"):
            try:
                value = next(it)
            except StopIteration:
                raise UsageError(f"flag {arg} needs a value") from None
            if arg == "--config":
                plan.config_path = value
            elif arg == "--out":
                plan.out_dir = value
            elif arg == "--model":
                plan.model_path = value
            else:
                try:
                    plan.threads = int(value)
                except ValueError:
                    raise UsageError(f"--threads needs an integer, got {value!r}") from None
                if plan.threads < 1:
                    raise UsageError("--threads must be >= 1")
        elif arg.startswith("--"):
            raise UsageError(f"unknown flag {arg!r}")
        elif "=" in arg:
            plan.overrides.append(arg)
        else:
            raise UsageError(f"unexpected argument {arg!r} (overrides look like key=value)")
    return plan


def _load_samples(resolved):
    path = resolved["data.path"]
    if not path:
        raise UsageError("data.path must be set for this verb")
    if not os.path.exists(path):
        raise DatasetFormatError(f"dataset file not found: {path}")
    return load_dataset(path)


def _write_resolved(plan, resolved):
    os.makedirs(plan.out_dir, exist_ok=True)
    with open(os.path.join(plan.out_dir, "config.resolved.cfg"), "w") as fh:
        fh.write(cfg.format_config(resolved))


def _cmd_gen_data(plan, resolved):
    spec = cfg.synth_spec(resolved)
    samples, meta = generate_synthetic(spec)
    path = resolved["data.path"] or os.path.join(plan.out_dir, "dataset.txt")
    save_dataset(path, samples, meta)
    print(f"wrote {meta.n_samples} samples ({meta.total_dim} features, L={meta.seq_len}) to {path}")
    return 0


def _cmd_train(plan, resolved):
    samples, meta = _load_samples(resolved)
    train_config = cfg.train_config(resolved)
    report = run_repeats(samples, train_config, meta.modality_configs(),
                         threads=plan.threads, keep_models=True)
    serialize.write_metrics(os.path.join(plan.out_dir, "metrics.txt"),
                            serialize.run_report_metrics(report))
    if report.models:
        first = report.models[0]
        serialize.save_model(os.path.join(plan.out_dir, "model.bin"), first.params, first.scaler)
    if report.failed:
        raise NonFiniteError(report.failure_reason)
    print(f"mean accuracy {report.mean:.4f} (std {report.std:.4f}) over {len(report.accuracies)} repeat(s)")
    return 0


def _trained_from_blob(plan, resolved):
    if not plan.model_path:
        plan.model_path = os.path.join(plan.out_dir, "model.bin")
    if not os.path.exists(plan.model_path):
        raise BlobFormatError(f"model blob not found: {plan.model_path}")
    model, scaler = serialize.load_model(plan.model_path)
    train_config = cfg.train_config(resolved)
    return TrainedModel(params=model, scaler=scaler, config=train_config, loss_curve=[])


def _cmd_eval(plan, resolved):
    samples, meta = _load_samples(resolved)
    trained = _trained_from_blob(plan, resolved)
    blob_mods = [(c.name, c.input_dim) for c in trained.params.modality_configs]
    if blob_mods != meta.modalities:
        raise BlobFormatError(
            f"model expects modalities {blob_mods} but dataset has {meta.modalities}")
    acc = evaluate(trained, samples, seed=resolved["train.seed"])
    serialize.write_metrics(os.path.join(plan.out_dir, "eval_metrics.txt"),
                            {"accuracy": acc, "n_eval_episodes": trained.config.n_eval_episodes})
    print(f"accuracy {acc:.4f}")
    return 0


def _cmd_ablate(plan, resolved):
    if resolved["data.path"]:
        samples, meta = _load_samples(resolved)
        modality_configs = meta.modality_configs()
    else:
        samples, meta = generate_synthetic(cfg.synth_spec(resolved))
        modality_configs = meta.modality_configs()
    axis = resolved["ablate.axis"]
    raw_values = resolved["ablate.values"]
    if raw_values:
        parts = [p.strip() for p in raw_values.split(",") if p.strip()]
        values = parts if axis == "loss_mode" else [float(p) for p in parts]
    else:
        values = DEFAULT_AXIS_VALUES.get(axis)
    grid = AblationGrid(axis=axis, values=values, base_config=cfg.train_config(resolved),
                        dataset=samples, modality_configs=modality_configs)
    report = run_ablation(grid)
    serialize.write_metrics(os.path.join(plan.out_dir, "ablation.txt"),
                            serialize.ablation_metrics(report))
    for row in report.rows:
        print(f"{axis}={row.value}: mean {row.mean:.4f} (std {row.std:.4f})")
    for (va, vb), res in report.tests.items():
        print(f"{va} vs {vb}: t={res.t_statistic:.4f} dof={res.degrees_of_freedom:.3f} p={res.p_value:.6f}")
    return 0


def _cmd_export_embeddings(plan, resolved):
    samples, meta = _load_samples(resolved)
    trained = _trained_from_blob(plan, resolved)
    train_pool, test_pool = split_stratified(samples, resolved["train.test_fraction"],
                                             resolved["train.seed"])
    split_of = {s.id: "train" for s in train_pool}
    split_of.update({s.id: "test" for s in test_pool})
    scaled = trained.scaler.transform(samples)
    path = os.path.join(plan.out_dir, "embeddings.csv")
    d = trained.params.embed_dim
    with open(path, "w") as fh:
        fh.write("id,label,split," + ",".join(f"coord_{j}" for j in range(d)) + "\n")
        for start in range(0, len(scaled), 64):
            chunk = scaled[start : start + 64]
            batch = batch_arrays(chunk, trained.params.modality_configs)
            embs = embed_batch(batch, trained.params, train=False).data
            for s, row in zip(chunk, embs):
                norm = float(np.sqrt((row * row).sum()))
                if trained.params.space == "hyperbolic" and norm >= 1.0:
                    raise BallViolation(f"exported embedding for {s.id} has norm {norm}")
                coords = ",".join(repr(float(v)) for v in row)
                fh.write(f"{s.id},{s.label},{split_of[s.id]},{coords}\n")
    print(f"wrote {len(scaled)} embedding rows to {path}")
    return 0


def _cmd_gradcheck(plan, resolved):
    rows = run_suite(step=resolved["gradcheck.step"], tol=resolved["gradcheck.tol"])
    lines = []
    ok = True
    for name, err, passed in rows:
        ok &= passed
        status = "pass" if passed else "FAIL"
        lines.append(f"{name}: max relative error {err:.3e} [{status}]")
        print(lines[-1])
    with open(os.path.join(plan.out_dir, "gradcheck.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if not ok:
        raise NumericError("gradient check failed; see report above")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "export-embeddings": _cmd_export_embeddings,
    "gradcheck": _cmd_gradcheck,
}


def execute(plan):
    resolved = cfg.resolve(plan.config_path or None, plan.overrides)
    _write_resolved(plan, resolved)
    return _HANDLERS[plan.verb](plan, resolved)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        plan = parse_args(argv)
        return execute(plan)
    except (UsageError, ConfigError) as exc:
        msg = str(exc)
        if msg.startswith("usage:"):
            print(msg, file=sys.stderr)
        else:
            print(f"error: usage: {msg}", file=sys.stderr)
        return 1
    except (DatasetFormatError, BlobFormatError, EpisodeError, FileNotFoundError, OSError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, NumericError, BallViolation, ArithmeticError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
