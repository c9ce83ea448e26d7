"""Per-field embedding tables with heterogeneous widths and the alignment layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmbeddingLookupError, ShapeError
from .seeding import rng_for


@dataclass
class EmbeddingTables:
    tables: list[np.ndarray]
    names: list[str] | None = None

    def __post_init__(self):
        if self.names is None:
            self.names = [str(f) for f in range(len(self.tables))]

    @property
    def dims(self) -> list[int]:
        return [t.shape[1] for t in self.tables]

    @property
    def sizes(self) -> list[int]:
        return [t.shape[0] for t in self.tables]

    @property
    def D(self) -> int:
        return sum(self.dims)

    @property
    def F(self) -> int:
        return len(self.tables)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    def param_count(self) -> int:
        return sum(t.size for t in self.tables)


def _schema_sizes(schema) -> tuple[list[int], list[str] | None]:
    if hasattr(schema, "sizes"):
        return list(schema.sizes), list(getattr(schema, "names", None) or [])
    return [int(s) for s in schema], None


def init_tables(schema, dims, seed: int = 0) -> EmbeddingTables:
    """Uniform(-1/sqrt(d_f), 1/sqrt(d_f)) tables, one stream per field.

    ``schema`` is a :class:`~gdcn.features.DatasetSchema` or a list of
    per-field vocabulary sizes.
    """
    sizes, names = _schema_sizes(schema)
    dims = [int(d) for d in dims]
    if len(dims) != len(sizes):
        raise ConfigError(f"got {len(dims)} dims for {len(sizes)} fields")
    if any(d < 1 for d in dims):
        raise ConfigError(f"every field dimension must be >= 1, got {dims}")
    tables = []
    for f, (n, d) in enumerate(zip(sizes, dims)):
        bound = 1.0 / np.sqrt(d)
        tables.append(rng_for(seed, "emb", f).uniform(-bound, bound, size=(n, d)))
    return EmbeddingTables(tables, names or None)


def _as_batch(indices) -> tuple[np.ndarray, bool]:
    if hasattr(indices, "indices"):
        indices = indices.indices
    arr = np.asarray(indices, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def lookup_concat(indices, tables: EmbeddingTables) -> np.ndarray:
    """Concatenate each field's selected row into c0.

    Accepts one instance (returns shape ``(D,)``) or an ``(B, F)`` index
    matrix (returns ``(B, D)``).
    """
    idx, single = _as_batch(indices)
    if idx.shape[1] != tables.F:
        raise ShapeError(f"instance has {idx.shape[1]} fields, tables have {tables.F}")
    parts = []
    for f, table in enumerate(tables.tables):
        col = idx[:, f]
        if col.size and (col.min() < 0 or col.max() >= table.shape[0]):
            bad = col[(col < 0) | (col >= table.shape[0])][0]
            raise EmbeddingLookupError(
                f"field {tables.names[f]!r}: index {bad} outside [0, {table.shape[0]})")
        parts.append(table[col])
    c0 = np.concatenate(parts, axis=1) if parts else np.zeros((len(idx), 0))
    return c0[0] if single else c0


def scatter_gradient(indices, grad_c0, accumulator: list[np.ndarray], dims=None) -> None:
    """Add each field's segment of ``grad_c0`` into its accumulator row.

    ``accumulator`` is a list of dense arrays shaped like the tables and is
    updated in place; rows not referenced by ``indices`` are left alone.
    """
    idx, single = _as_batch(indices)
    grad = np.asarray(grad_c0, dtype=np.float64)
    if single:
        grad = grad[None, :]
    dims = dims if dims is not None else [a.shape[1] for a in accumulator]
    if grad.shape != (idx.shape[0], sum(dims)):
        raise ShapeError(f"gradient shape {grad.shape} does not match "
                         f"({idx.shape[0]}, {sum(dims)})")
    start = 0
    for f, d in enumerate(dims):
        np.add.at(accumulator[f], idx[:, f], grad[:, start:start + d])
        start += d


def sparse_row_gradients(indices, grad_c0, dims) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per field: (unique touched rows, summed gradient of those rows)."""
    idx, _ = _as_batch(indices)
    out = []
    start = 0
    for f, d in enumerate(dims):
        rows, inverse = np.unique(idx[:, f], return_inverse=True)
        g = np.zeros((len(rows), d))
        np.add.at(g, inverse.reshape(-1), grad_c0[:, start:start + d])
        out.append((rows, g))
        start += d
    return out


# --- dimension alignment ---------------------------------------------------

@dataclass
class AlignmentLayer:
    """Per-field projections ``M_f`` of shape ``(d_f, d_max)``."""

    matrices: list[np.ndarray]

    @property
    def d_max(self) -> int:
        return self.matrices[0].shape[1] if self.matrices else 0

    @property
    def dims(self) -> list[int]:
        return [m.shape[0] for m in self.matrices]

    @property
    def out_width(self) -> int:
        return self.d_max * len(self.matrices)

    def param_count(self) -> int:
        return sum(m.size for m in self.matrices)

    def forward(self, c0: np.ndarray) -> np.ndarray:
        """Map ``(B, sum d_f)`` to ``(B, F * d_max)``."""
        parts, start = [], 0
        for m in self.matrices:
            d = m.shape[0]
            parts.append(c0[:, start:start + d] @ m)
            start += d
        return np.concatenate(parts, axis=1)

    def backward(self, c0: np.ndarray, grad_out: np.ndarray):
        """Returns (grad wrt c0, list of grads wrt each M_f)."""
        grad_in, grads, start = [], [], 0
        dm = self.d_max
        for f, m in enumerate(self.matrices):
            d = m.shape[0]
            seg = c0[:, start:start + d]
            g = grad_out[:, f * dm:(f + 1) * dm]
            grads.append(seg.T @ g)
            grad_in.append(g @ m.T)
            start += d
        return np.concatenate(grad_in, axis=1), grads


def align_param_count(dims) -> int:
    d_max = max(dims)
    return sum(d_max * d for d in dims)


def init_alignment(dims, seed: int = 0) -> AlignmentLayer:
    d_max = max(dims)
    mats = []
    for f, d in enumerate(dims):
        bound = 1.0 / np.sqrt(d)
        mats.append(rng_for(seed, "align", f).uniform(-bound, bound, size=(d, d_max)))
    return AlignmentLayer(mats)


def align(e_f, m_f) -> np.ndarray:
    e_f = np.asarray(e_f, dtype=np.float64)
    m_f = np.asarray(m_f, dtype=np.float64)
    if m_f.ndim != 2 or e_f.shape[-1] != m_f.shape[0]:
        raise ShapeError(f"cannot align width {e_f.shape[-1]} with matrix {m_f.shape}")
    return e_f @ m_f
