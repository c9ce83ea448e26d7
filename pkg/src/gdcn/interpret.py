"""Static (cross-matrix) and dynamic (gate) explanations of a trained model."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .crossnet import GateMode
from .errors import ShapeError, UndefinedMetricError, UnsupportedModeError
from .model import Model

IMPORTANT = 0.5


def block_norms(W_c, dims) -> np.ndarray:
    """Frobenius norm of each field-by-field block of a cross matrix."""
    W = np.asarray(W_c, dtype=np.float64)
    dims = [int(d) for d in dims]
    D = sum(dims)
    if W.shape != (D, D):
        raise ShapeError(f"cross matrix {W.shape} does not tile into dims summing to {D}")
    edges = np.concatenate([[0], np.cumsum(dims)])
    F = len(dims)
    out = np.empty((F, F))
    for i in range(F):
        for j in range(F):
            block = W[edges[i]:edges[i + 1], edges[j]:edges[j + 1]]
            out[i, j] = np.sqrt(np.sum(block * block))
    return out


def field_average(bits, dims) -> np.ndarray:
    """Average each field's slice of a bit-wise vector (last axis)."""
    bits = np.asarray(bits, dtype=np.float64)
    edges = np.concatenate([[0], np.cumsum(dims)])
    if bits.shape[-1] != edges[-1]:
        raise ShapeError(f"bit vector width {bits.shape[-1]} != sum of dims {edges[-1]}")
    return np.stack([bits[..., a:b].mean(axis=-1) for a, b in zip(edges[:-1], edges[1:])],
                    axis=-1)


def _cross_dims(model: Model) -> list[int]:
    return [model.d_max] * model.F if model.topology.align else list(model.dims)


@dataclass
class GateProfile:
    layer: int
    instance_id: object
    bitwise: np.ndarray  # (D,)
    fieldwise: np.ndarray  # (F,)

    @property
    def important_fields(self) -> list[int]:
        return [int(f) for f in np.flatnonzero(self.fieldwise > IMPORTANT)]


def _require_gates(model: Model):
    if model.topology.gate_mode is not GateMode.LEARNED:
        raise UnsupportedModeError(
            "gate profiles need a model with learned gates; this one has the gate off")


def gate_profile(instance, model: Model, instance_id=None) -> list[GateProfile]:
    """One profile per cross layer for a single instance."""
    _require_gates(model)
    trace = model.forward(instance)
    dims = _cross_dims(model)
    return [
        GateProfile(l, instance_id, g[0].copy(), field_average(g[0], dims))
        for l, g in enumerate(trace.gates)
    ]


def aggregate_importance(data, model: Model, n: int | None = None,
                         batch_size: int = 4096) -> np.ndarray:
    """Mean field-wise gate vector per layer over the first ``n`` instances.

    Returns an array of shape ``(layers, F)``.
    """
    _require_gates(model)
    idx = np.asarray(getattr(data, "indices", data), dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[None, :]
    n = len(idx) if n is None else int(n)
    if n < 1 or len(idx) == 0:
        raise UndefinedMetricError("aggregate importance needs at least one instance")
    idx = idx[:n]
    dims = _cross_dims(model)
    total = np.zeros((model.topology.cross_layers, model.F))
    for start in range(0, len(idx), batch_size):
        trace = model.forward(idx[start:start + batch_size])
        for l, g in enumerate(trace.gates):
            total[l] += field_average(g, dims).sum(axis=0)
    return total / len(idx)


def cosine_similarity(A, B) -> float:
    a = np.asarray(A, dtype=np.float64).ravel()
    b = np.asarray(B, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {np.shape(A)} vs {np.shape(B)}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedMetricError("cosine similarity is undefined for a zero matrix")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def pearson(x, y) -> tuple[float, float]:
    """Sample correlation and its two-sided p-value under a Student-t null."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("pearson needs two equal-length 1-D sequences")
    n = len(x)
    if n < 3:
        raise UndefinedMetricError("pearson needs at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("pearson is undefined for a constant sequence")
    r = float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = r * r * df / (1.0 - r * r)
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    p = float(special.betainc(0.5 * df, 0.5, df / (df + t2)))
    return r, p


# --- exports ---------------------------------------------------------------

def _write_matrix(path, matrix, header=None, row_labels=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for i, row in enumerate(np.atleast_2d(matrix)):
            cells = [repr(float(v)) for v in row]
            w.writerow(([row_labels[i]] if row_labels is not None else []) + cells)


def write_block_norms(out_dir, model: Model, layer: int = 0) -> np.ndarray:
    dims = _cross_dims(model)
    bn = block_norms(model.params[f"cross.{layer}.W_c"], dims)
    _write_matrix(Path(out_dir) / f"block_norms_layer{layer + 1}.csv", bn,
                  header=["field"] + model.field_names, row_labels=model.field_names)
    return bn


def write_gates(out_dir, profiles: list[GateProfile], field_names) -> Path:
    iid = profiles[0].instance_id if profiles else "none"
    path = Path(out_dir) / f"gates_{iid}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        width = len(profiles[0].bitwise) if profiles else 0
        w.writerow(["section", "layer"] + [f"bit{i}" for i in range(width)])
        for p in profiles:
            w.writerow(["bitwise", p.layer + 1] + [repr(float(v)) for v in p.bitwise])
        w.writerow(["section", "layer"] + list(field_names))
        for p in profiles:
            w.writerow(["fieldwise", p.layer + 1] + [repr(float(v)) for v in p.fieldwise])
    return path


def write_field_importance(out_dir, importance: np.ndarray, field_names) -> None:
    _write_matrix(Path(out_dir) / "field_importance.csv", importance,
                  header=["layer"] + list(field_names),
                  row_labels=[str(l + 1) for l in range(len(importance))])


def explain(model: Model, data, out_dir, instance_ids=(), n: int = 1000,
            fdo_dims=None, compare: Model | None = None) -> dict:
    """Write every explanation file into ``out_dir`` and return the stats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats: dict = {"n": None, "cosine_similarity": None, "pearson_r": None,
                   "pearson_p": None}
    layers = model.topology.cross_layers
    block = [write_block_norms(out, model, l) for l in range(layers)]
    if compare is not None and layers and compare.topology.cross_layers:
        other = block_norms(compare.params["cross.0.W_c"], _cross_dims(compare))
        stats["cosine_similarity"] = cosine_similarity(block[0], other)
    if model.topology.gate_mode is GateMode.LEARNED and layers:
        for iid in instance_ids:
            write_gates(out, gate_profile(data.indices[int(iid)], model, iid), model.field_names)
        importance = aggregate_importance(data, model, min(n, len(data)))
        stats["n"] = int(min(n, len(data)))
        write_field_importance(out, importance, model.field_names)
        if fdo_dims is not None:
            try:
                r, p = pearson(np.asarray(fdo_dims, dtype=float), importance[0])
                stats["pearson_r"], stats["pearson_p"] = r, p
            except UndefinedMetricError as exc:
                stats["pearson_error"] = str(exc)
    elif instance_ids:
        raise UnsupportedModeError(
            "gate profiles need a model with learned gates; this one has the gate off")
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True))
    return stats
