"""Model blob and metrics report serialization.

Model blob: magic b"HCFSLN1", one format-version byte, a 4-byte little-endian
header length, a JSON header (dims, modality layout, parameter shapes), then
raw little-endian float64 values: all parameters in declared order followed
by the scaler mean/std per modality. Eval fails fast on magic/version or
dimension drift.

Metrics report: line-oriented text, first line `schema=1`, then one
`key<TAB>value` per line. Float values are written with repr so reports
round-trip bit-exactly.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .data import Scaler
from .encoder import ModalityConfig
from .model import ModelParams

MAGIC = b"HCFSLN1"
VERSION = 1


class BlobFormatError(ValueError):
    pass


def save_model(path, model, scaler):
    header = {
        "embed_dim": model.embed_dim,
        "heads": model.heads,
        "pool": model.pool,
        "space": model.space,
        "alpha_trainable": model.curvature.trainable,
        "seq_len": model.modality_configs[0].seq_len,
        "modalities": [[c.name, c.input_dim] for c in model.modality_configs],
        "params": [[name, list(p.data.shape)] for name, p in model.state_parameters()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, p in model.state_parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        for name, _ in header["modalities"]:
            fh.write(np.ascontiguousarray(scaler.mean[name], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(scaler.std[name], dtype="<f8").tobytes())


def load_model(path):
    """Returns (ModelParams, Scaler). Raises BlobFormatError on drift."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise BlobFormatError(f"bad model blob magic in {path}")
    version = raw[len(MAGIC)]
    if version != VERSION:
        raise BlobFormatError(f"model blob format version {version}, expected {VERSION}")
    off = len(MAGIC) + 1
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen].decode())
    off += hlen
    configs = [ModalityConfig(name, d, header["seq_len"]) for name, d in header["modalities"]]
    model = ModelParams(
        configs,
        embed_dim=header["embed_dim"],
        heads=header["heads"],
        pool=header["pool"],
        space=header["space"],
        alpha_trainable=header["alpha_trainable"],
        seed=0,
    )
    declared = model.state_parameters()
    if [[n, list(p.data.shape)] for n, p in declared] != header["params"]:
        raise BlobFormatError("parameter layout in blob does not match this build")
    for name, p in declared:
        n = p.data.size
        vals = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
        off += 8 * n
        p.data = vals.reshape(p.data.shape).astype(np.float64)
    mean, std = {}, {}
    for name, d in header["modalities"]:
        mean[name] = np.frombuffer(raw, dtype="<f8", count=d, offset=off).astype(np.float64)
        off += 8 * d
        std[name] = np.frombuffer(raw, dtype="<f8", count=d, offset=off).astype(np.float64)
        off += 8 * d
    if off != len(raw):
        raise BlobFormatError(f"model blob has {len(raw) - off} trailing byte(s)")
    return model, Scaler(mean=mean, std=std)


# ---------------------------------------------------------------------------
# metrics reports


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def write_metrics(path, items):
    with open(path, "w") as fh:
        fh.write("schema=1\n")
        for key, value in items.items():
            fh.write(f"{key}\t{_fmt(value)}\n")


def read_metrics(path):
    with open(path) as fh:
        first = fh.readline().strip()
        if first != "schema=1":
            raise ValueError(f"unexpected metrics schema line {first!r} in {path}")
        out = {}
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, value = line.split("\t", 1)
            out[key] = value
        return out


def run_report_metrics(report):
    items = {
        "accuracies": report.accuracies,
        "mean_accuracy": report.mean,
        "std_accuracy": report.std,
        "repeats": len(report.accuracies),
        "single_run": report.single_run,
        "failed": report.failed,
    }
    if report.failure_reason:
        items["failure_reason"] = report.failure_reason
    for r, curve in enumerate(report.loss_curves):
        items[f"loss_curve.{r}"] = curve
    return items


def ablation_metrics(report):
    items = {"axis": report.axis, "rows": len(report.rows)}
    for i, row in enumerate(report.rows):
        items[f"row.{i}.value"] = row.value
        items[f"row.{i}.accuracies"] = row.accuracies
        items[f"row.{i}.mean"] = row.mean
        items[f"row.{i}.std"] = row.std
    for (va, vb), res in report.tests.items():
        key = f"test.{va}__vs__{vb}"
        items[f"{key}.t"] = res.t_statistic
        items[f"{key}.dof"] = res.degrees_of_freedom
        items[f"{key}.p"] = res.p_value
    for i, note in enumerate(report.notes):
        items[f"note.{i}"] = note
    return items
