"""Field-level dimension optimization.

A model trained with a uniform embedding width is inspected field by field:
each table's singular-value spectrum decides how many dimensions that field
needs to keep a requested share of its information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .embedding import EmbeddingTables
from .errors import ConfigError, FormatError
from .model import Model


def singular_values(table, center: bool = True) -> np.ndarray:
    """Descending singular values of a field's table, length ``min(rows, cols)``.

    With ``center`` the per-column mean is removed first, so the squared values
    are the table's variance along its principal directions.
    """
    E = np.asarray(table, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1 or E.shape[1] < 1:
        raise ConfigError(f"expected a non-empty matrix, got shape {E.shape}")
    if not np.all(np.isfinite(E)):
        raise ConfigError("embedding table contains non-finite values")
    if center:
        E = E - E.mean(axis=0)
    if E.shape[0] == 1 and center:
        return np.zeros(1)
    s = np.linalg.svd(E, compute_uv=False)
    return np.sort(np.abs(s))[::-1]


def choose_dim(sigma, ratio: float, energy: str = "squared") -> int:
    """Smallest ``k`` whose leading values hold at least ``ratio`` of the total.

    ``energy="squared"`` measures information as sigma**2, ``"raw"`` as sigma.
    A zero spectrum yields 1.
    """
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"information ratio must be in (0, 1], got {ratio}")
    s = np.asarray(sigma, dtype=np.float64)
    if s.size == 0:
        raise ConfigError("empty spectrum")
    if energy not in ("squared", "raw"):
        raise ConfigError(f"energy must be 'squared' or 'raw', got {energy!r}")
    w = s * s if energy == "squared" else np.abs(s)
    cum = np.cumsum(w)
    total = cum[-1]
    if total <= 0:
        return 1
    k = int(np.searchsorted(cum / total >= ratio, True)) + 1
    return min(max(k, 1), s.size)


class ParamCount(NamedTuple):
    P_e: int
    D_bar: Fraction  # weighted by feature count
    K_bar: Fraction  # plain mean over fields


def param_count(sizes, dims) -> ParamCount:
    """Embedding parameter accounting, exact."""
    sizes = [int(n) for n in getattr(sizes, "sizes", sizes)]
    dims = [int(d) for d in dims]
    if len(sizes) != len(dims):
        raise ConfigError(f"{len(dims)} dims for {len(sizes)} fields")
    if not sizes:
        raise ConfigError("no fields")
    P_e = sum(d * n for d, n in zip(dims, sizes))
    return ParamCount(P_e, Fraction(P_e, sum(sizes)), Fraction(sum(dims), len(dims)))


def formula_dims(sizes, exponent: float = 0.25, rounding: str = "nearest") -> list[int]:
    """Feature-count rule of thumb ``|E_f| ** 0.25``, floored at 1.

    ``rounding`` is ``"nearest"`` (halves round up), ``"floor"`` or ``"ceil"``.
    """
    ops = {
        "nearest": lambda x: int(np.floor(x + 0.5)),
        "floor": lambda x: int(np.floor(x)),
        "ceil": lambda x: int(np.ceil(x)),
    }
    if rounding not in ops:
        raise ConfigError(f"unknown rounding {rounding!r}")
    sizes = getattr(sizes, "sizes", sizes)
    return [max(1, ops[rounding](float(n) ** exponent)) for n in sizes]


@dataclass
class FieldSpectrum:
    name: str
    size: int
    singular_values: list[float]
    dims: dict[float, int] = field(default_factory=dict)


@dataclass
class FdoReport:
    ratios: list[float]
    fields: list[FieldSpectrum]
    center: bool = True
    energy: str = "squared"
    source_checkpoint: str | None = None

    def dims(self, ratio: float) -> list[int]:
        return [f.dims[ratio] for f in self.fields]

    def accounting(self, ratio: float) -> ParamCount:
        return param_count([f.size for f in self.fields], self.dims(ratio))

    def to_json(self) -> dict:
        per_ratio = []
        for r in self.ratios:
            pc = self.accounting(r)
            per_ratio.append({
                "ratio": r,
                "dims": self.dims(r),
                "P_e": pc.P_e,
                "D_bar": float(pc.D_bar),
                "K_bar": float(pc.K_bar),
            })
        return {
            "source_checkpoint": self.source_checkpoint,
            "center": self.center,
            "energy": self.energy,
            "ratios": self.ratios,
            "fields": [
                {"field": f.name, "size": f.size, "singular_values": f.singular_values}
                for f in self.fields
            ],
            "plans": per_ratio,
        }

    def dims_file(self, ratio: float) -> dict:
        return {
            "source_checkpoint": self.source_checkpoint,
            "ratio": ratio,
            "fields": [
                {"field": f.name, "dim": f.dims[ratio], "singular_values": f.singular_values}
                for f in self.fields
            ],
        }


def fdo_plan(tables, ratios, names=None, center: bool = True, energy: str = "squared",
             source_checkpoint: str | None = None) -> FdoReport:
    """Spectrum and chosen dimension of every field for every ratio.

    ``tables`` is a list of matrices, an :class:`EmbeddingTables`, or a
    :class:`~gdcn.model.Model`.
    """
    if isinstance(tables, Model):
        tables = tables.tables
    if isinstance(tables, EmbeddingTables):
        names = names or tables.names
        tables = tables.tables
    if not len(tables):
        raise FormatError("no embedding tables to analyse")
    ratios = [float(r) for r in ratios]
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ConfigError(f"information ratio must be in (0, 1], got {r}")
    names = list(names) if names else [str(f) for f in range(len(tables))]
    spectra = []
    for name, E in zip(names, tables):
        s = singular_values(E, center)
        fs = FieldSpectrum(name, int(np.shape(E)[0]), [float(x) for x in s])
        for r in ratios:
            fs.dims[r] = choose_dim(s, r, energy)
        spectra.append(fs)
    return FdoReport(ratios, spectra, center, energy, source_checkpoint)


def tables_from_checkpoint(tensors: dict, field_names) -> list[np.ndarray]:
    missing = [n for n in field_names if f"emb.{n}" not in tensors]
    if missing:
        raise FormatError(f"checkpoint lacks embedding tensors for fields {missing}")
    return [tensors[f"emb.{n}"] for n in field_names]


def write_dims_file(path, report: FdoReport, ratio: float) -> None:
    Path(path).write_text(json.dumps(report.dims_file(ratio), indent=1))


def read_dims_file(path) -> tuple[list[str], list[int]]:
    try:
        obj = json.loads(Path(path).read_text())
        names = [str(f["field"]) for f in obj["fields"]]
        dims = [int(f["dim"]) for f in obj["fields"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a dims file ({exc})") from exc
    if any(d < 1 for d in dims):
        raise ConfigError(f"{path}: dimensions must be >= 1")
    return names, dims
