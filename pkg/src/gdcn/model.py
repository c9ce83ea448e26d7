"""DNN tower, GCN / GDCN-S / GDCN-P assembly, logistic head and LogLoss."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .crossnet import CrossStack, GateMode, GatedCrossParams, sigmoid, stack_backward, stack_forward
from .embedding import AlignmentLayer, EmbeddingTables, lookup_concat, sparse_row_gradients
from .errors import ConfigError, NumericError, ShapeError
from .seeding import rng_for

LOGIT_CLAMP = 35.0
PROB_EPS = 1e-15


class Variant(str, Enum):
    GCN = "gcn"
    STACKED = "gdcn-s"
    PARALLEL = "gdcn-p"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        aliases = {"gcn_only": cls.GCN, "stacked": cls.STACKED, "parallel": cls.PARALLEL}
        try:
            return aliases.get(str(value).lower()) or cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown variant {value!r}; use gcn, gdcn-s or gdcn-p") from None


# --- MLP -------------------------------------------------------------------

@dataclass
class MlpParams:
    weights: list[np.ndarray]  # W_l has shape (n_{l+1}, n_l)
    biases: list[np.ndarray]
    dropout_rate: float = 0.5

    @property
    def widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights]


@dataclass
class MlpCache:
    inputs: list[np.ndarray]  # input to each layer
    active: list[np.ndarray]  # pre-activation > 0
    masks: list[np.ndarray | None]  # scaled dropout masks


def init_mlp(n_in: int, widths, dropout_rate=0.5, seed: int = 0) -> MlpParams:
    weights, biases = [], []
    for l, n_out in enumerate(widths):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng_for(seed, "dnn", l).uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
        n_in = n_out
    return MlpParams(weights, biases, dropout_rate)


def dropout_mask(shape, rate: float, seed: int, step: int, layer: int) -> np.ndarray:
    """Inverted-dropout mask keyed by (seed, step, layer)."""
    keep = 1.0 - rate
    u = rng_for(seed, "dropout", step, layer).random(shape)
    return (u < keep) / keep


def mlp_forward(h0, p: MlpParams, training: bool = False, seed: int = 0, step: int = 0,
                masks=None):
    """ReLU layers with inverted dropout after each activation while training.

    ``masks`` overrides the generated dropout masks (used to freeze them).
    """
    h = np.asarray(h0, dtype=np.float64)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    cache = MlpCache([], [], [])
    for l, (W, b) in enumerate(zip(p.weights, p.biases)):
        if h.shape[1] != W.shape[1]:
            raise ShapeError(f"dnn layer {l} expects width {W.shape[1]}, got {h.shape[1]}")
        cache.inputs.append(h)
        z = h @ W.T + b
        act = z > 0
        h = np.where(act, z, 0.0)
        mask = None
        if masks is not None:
            mask = masks[l]
        elif training and p.dropout_rate > 0:
            mask = dropout_mask(h.shape, p.dropout_rate, seed, step, l)
        if mask is not None:
            h = h * mask
        cache.active.append(act)
        cache.masks.append(mask)
    return (h[0] if single else h), cache


def mlp_backward(cache: MlpCache, p: MlpParams, grad_out):
    """Returns ``(grad_h0, [(grad_W, grad_b), ...])``."""
    g = np.asarray(grad_out, dtype=np.float64)
    single = g.ndim == 1
    if single:
        g = g[None, :]
    grads = [None] * len(p.weights)
    for l in range(len(p.weights) - 1, -1, -1):
        if cache.masks[l] is not None:
            g = g * cache.masks[l]
        g = np.where(cache.active[l], g, 0.0)
        grads[l] = (g.T @ cache.inputs[l], g.sum(axis=0))
        g = g @ p.weights[l]
    return (g[0] if single else g), grads


# --- loss ------------------------------------------------------------------

def logloss(y_hat, y):
    """Binary cross-entropy.

    Returns ``(loss, grad_logit)``; for arrays the loss is the mean and
    ``grad_logit`` holds the per-instance ``y_hat - y``.
    """
    p = np.asarray(y_hat, dtype=np.float64)
    t = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise NumericError("predicted probabilities must lie in [0, 1]")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    losses = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    grad = p - t
    if losses.ndim == 0:
        return float(losses), float(grad)
    return float(losses.mean()), grad


# --- assembled model -------------------------------------------------------

@dataclass
class Topology:
    variant: Variant = Variant.PARALLEL
    cross_layers: int = 3
    dnn_widths: tuple = (400, 400, 400)
    gate_mode: GateMode = GateMode.LEARNED
    dropout: float = 0.5
    align: bool = False

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.gate_mode = GateMode.parse(self.gate_mode)
        self.dnn_widths = tuple(int(w) for w in self.dnn_widths)
        if self.cross_layers < 0:
            raise ConfigError("cross_layers must be >= 0")
        if any(w <= 0 for w in self.dnn_widths):
            raise ConfigError(f"dnn widths must be positive, got {self.dnn_widths}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_json(self) -> dict:
        return {
            "variant": self.variant.value,
            "cross_layers": self.cross_layers,
            "dnn_widths": list(self.dnn_widths),
            "gate_mode": self.gate_mode.value,
            "dropout": self.dropout,
            "align": self.align,
        }

    @classmethod
    def from_json(cls, obj) -> "Topology":
        return cls(obj["variant"], int(obj["cross_layers"]), tuple(obj["dnn_widths"]),
                   obj["gate_mode"], float(obj["dropout"]), bool(obj.get("align", False)))


def parameter_shapes(field_names, field_sizes, dims, topology: "Topology") -> dict[str, tuple]:
    """Name -> shape of every parameter, in canonical order."""
    F, d_max = len(dims), max(dims)
    D = F * d_max if topology.align else sum(dims)
    shapes = {}
    for name, n, d in zip(field_names, field_sizes, dims):
        shapes[f"emb.{name}"] = (n, d)
    if topology.align:
        for name, d in zip(field_names, dims):
            shapes[f"align.{name}"] = (d, d_max)
    for l in range(topology.cross_layers):
        shapes[f"cross.{l}.W_c"] = (D, D)
        shapes[f"cross.{l}.W_g"] = (D, D)
        shapes[f"cross.{l}.b"] = (D,)
    n_in = D
    if topology.variant is not Variant.GCN:
        for l, w in enumerate(topology.dnn_widths):
            shapes[f"dnn.{l}.W"] = (w, n_in)
            shapes[f"dnn.{l}.b"] = (w,)
            n_in = w
    if topology.variant is Variant.GCN:
        head = D
    elif topology.variant is Variant.STACKED:
        head = n_in
    else:
        head = D + n_in
    shapes["head.w"] = (head,)
    return shapes


def count_parameters(field_sizes, dims, topology: "Topology") -> int:
    names = [str(f) for f in range(len(dims))]
    return sum(int(np.prod(s)) for s in parameter_shapes(names, field_sizes, dims, topology).values())


@dataclass
class Trace:
    indices: np.ndarray
    c0_raw: np.ndarray
    c0: np.ndarray
    cross_caches: list
    gates: list[np.ndarray]
    c_cross: np.ndarray
    mlp_cache: MlpCache | None
    c_final: np.ndarray
    logit: np.ndarray
    in_clamp: np.ndarray
    prob: np.ndarray


class Model:
    """Parameters live in ``self.params`` (ordered name -> float64 array).

    Names: ``emb.{field}``, ``align.{field}``, ``cross.{l}.W_c|W_g|b``,
    ``dnn.{l}.W|b`` and ``head.w``. The structured views below share memory
    with that dict, so optimizers can update it in place.
    """

    def __init__(self, field_names, field_sizes, dims, topology: Topology, params=None,
                 seed: int = 0):
        self.field_names = [str(n) for n in field_names]
        self.field_sizes = [int(s) for s in field_sizes]
        self.dims = [int(d) for d in dims]
        self.topology = topology
        if not (len(self.field_names) == len(self.field_sizes) == len(self.dims)):
            raise ConfigError("field names, sizes and dims must have equal length")
        if len(set(self.field_names)) != len(self.field_names):
            raise ConfigError("field names must be unique")
        self.params = params if params is not None else self._init_params(seed)
        self._check_params()

    # widths ---------------------------------------------------------------
    @property
    def F(self) -> int:
        return len(self.dims)

    @property
    def d_max(self) -> int:
        return max(self.dims)

    @property
    def D(self) -> int:
        """Width of the vector entering the cross network."""
        return self.F * self.d_max if self.topology.align else sum(self.dims)

    @property
    def dnn_in(self) -> int:
        return self.D

    @property
    def head_width(self) -> int:
        t = self.topology
        n_last = t.dnn_widths[-1] if t.dnn_widths else self.D
        if t.variant is Variant.GCN:
            return self.D
        if t.variant is Variant.STACKED:
            return n_last
        return self.D + n_last

    def expected_shapes(self) -> dict[str, tuple]:
        return parameter_shapes(self.field_names, self.field_sizes, self.dims, self.topology)

    def _init_params(self, seed):
        params = {}
        for f, (name, n, d) in enumerate(zip(self.field_names, self.field_sizes, self.dims)):
            bound = 1.0 / np.sqrt(d)
            params[f"emb.{name}"] = rng_for(seed, "emb", f).uniform(-bound, bound, (n, d))
        if self.topology.align:
            for f, (name, d) in enumerate(zip(self.field_names, self.dims)):
                bound = 1.0 / np.sqrt(d)
                params[f"align.{name}"] = rng_for(seed, "align", f).uniform(
                    -bound, bound, (d, self.d_max))
        D = self.D
        bound = 1.0 / np.sqrt(D)
        for l in range(self.topology.cross_layers):
            rng = rng_for(seed, "cross", l)
            params[f"cross.{l}.W_c"] = rng.uniform(-bound, bound, (D, D))
            params[f"cross.{l}.W_g"] = rng.uniform(-bound, bound, (D, D))
            params[f"cross.{l}.b"] = np.zeros(D)
        if self.topology.variant is not Variant.GCN:
            n_in = D
            for l, w in enumerate(self.topology.dnn_widths):
                b = 1.0 / np.sqrt(n_in)
                params[f"dnn.{l}.W"] = rng_for(seed, "dnn", l).uniform(-b, b, (w, n_in))
                params[f"dnn.{l}.b"] = np.zeros(w)
                n_in = w
        hw = self.head_width
        params["head.w"] = rng_for(seed, "head").uniform(-1 / np.sqrt(hw), 1 / np.sqrt(hw), hw)
        return params

    def _check_params(self):
        expected = self.expected_shapes()
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError(f"parameters do not match topology (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ConfigError(f"{name}: shape {self.params[name].shape}, expected {shape}")
        # canonical order drives checkpoints and optimizer state
        self.params = {name: np.asarray(self.params[name], dtype=np.float64) for name in expected}

    # views ----------------------------------------------------------------
    @property
    def tables(self) -> EmbeddingTables:
        return EmbeddingTables([self.params[f"emb.{n}"] for n in self.field_names],
                               list(self.field_names))

    @property
    def alignment(self) -> AlignmentLayer | None:
        if not self.topology.align:
            return None
        return AlignmentLayer([self.params[f"align.{n}"] for n in self.field_names])

    @property
    def cross(self) -> CrossStack:
        layers = [
            GatedCrossParams(self.params[f"cross.{l}.W_c"], self.params[f"cross.{l}.W_g"],
                             self.params[f"cross.{l}.b"])
            for l in range(self.topology.cross_layers)
        ]
        return CrossStack(layers, self.topology.gate_mode)

    @property
    def mlp(self) -> MlpParams | None:
        if self.topology.variant is Variant.GCN:
            return None
        n = len(self.topology.dnn_widths)
        return MlpParams([self.params[f"dnn.{l}.W"] for l in range(n)],
                         [self.params[f"dnn.{l}.b"] for l in range(n)],
                         self.topology.dropout)

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def embedding_param_count(self) -> int:
        return sum(n * d for n, d in zip(self.field_sizes, self.dims))

    def copy(self) -> "Model":
        return Model(self.field_names, self.field_sizes, self.dims, self.topology,
                     {k: v.copy() for k, v in self.params.items()})

    # compute --------------------------------------------------------------
    def forward(self, indices, training: bool = False, seed: int = 0, step: int = 0,
                masks=None) -> Trace:
        idx = np.asarray(getattr(indices, "indices", indices), dtype=np.int64)
        if idx.ndim == 1:
            idx = idx[None, :]
        c0_raw = lookup_concat(idx, self.tables)
        align = self.alignment
        c0 = align.forward(c0_raw) if align is not None else c0_raw
        c_cross, caches, gates = stack_forward(c0, self.cross)
        variant = self.topology.variant
        mlp_cache = None
        if variant is Variant.GCN:
            c_final = c_cross
        elif variant is Variant.STACKED:
            c_final, mlp_cache = mlp_forward(c_cross, self.mlp, training, seed, step, masks)
        else:
            h, mlp_cache = mlp_forward(c0, self.mlp, training, seed, step, masks)
            c_final = np.concatenate([c_cross, h], axis=1)
        raw = c_final @ self.params["head.w"]
        in_clamp = np.abs(raw) <= LOGIT_CLAMP
        logit = np.clip(raw, -LOGIT_CLAMP, LOGIT_CLAMP)
        prob = sigmoid(logit)
        return Trace(idx, c0_raw, c0, caches, gates, c_cross, mlp_cache, c_final, logit,
                     in_clamp, prob)

    def predict(self, indices, batch_size: int = 8192) -> np.ndarray:
        idx = np.asarray(getattr(indices, "indices", indices), dtype=np.int64)
        out = [self.forward(idx[i:i + batch_size]).prob for i in range(0, len(idx), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def backward(self, trace: Trace, labels) -> tuple[float, dict]:
        """Mean LogLoss over the batch and its gradients.

        Embedding gradients come back sparse as ``(rows, row_grads)`` under
        their ``emb.*`` names; everything else is dense.
        """
        loss, g_logit = logloss(trace.prob, np.asarray(labels, dtype=np.float64))
        n = len(trace.prob)
        d_logit = np.where(trace.in_clamp, g_logit, 0.0) / n
        grads = {"head.w": trace.c_final.T @ d_logit}
        d_final = np.outer(d_logit, self.params["head.w"])

        variant = self.topology.variant
        D = self.D
        d_c0 = np.zeros_like(trace.c0)
        if variant is Variant.GCN:
            d_cross = d_final
        elif variant is Variant.STACKED:
            d_cross, mlp_grads = mlp_backward(trace.mlp_cache, self.mlp, d_final)
        else:
            d_cross = d_final[:, :D]
            d_h0, mlp_grads = mlp_backward(trace.mlp_cache, self.mlp, d_final[:, D:])
            d_c0 += d_h0
        if variant is not Variant.GCN:
            for l, (gW, gb) in enumerate(mlp_grads):
                grads[f"dnn.{l}.W"] = gW
                grads[f"dnn.{l}.b"] = gb

        g_c0, layer_grads = stack_backward(trace.cross_caches, self.cross, d_cross)
        d_c0 += g_c0
        for l, gr in enumerate(layer_grads):
            grads[f"cross.{l}.W_c"] = gr.W_c
            grads[f"cross.{l}.W_g"] = gr.W_g
            grads[f"cross.{l}.b"] = gr.b

        align = self.alignment
        if align is not None:
            d_c0, align_grads = align.backward(trace.c0_raw, d_c0)
            for name, g in zip(self.field_names, align_grads):
                grads[f"align.{name}"] = g
        for name, rg in zip(self.field_names,
                            sparse_row_gradients(trace.indices, d_c0, self.dims)):
            grads[f"emb.{name}"] = rg
        return loss, grads


def build_model(schema, dims=None, topology: Topology | None = None, seed: int = 0,
                dim: int = 16) -> Model:
    """Fresh model for a :class:`~gdcn.features.DatasetSchema` (or sizes list)."""
    if hasattr(schema, "sizes"):
        names, sizes = schema.names, schema.sizes
    else:
        sizes = [int(s) for s in schema]
        names = [str(f) for f in range(len(sizes))]
    dims = list(dims) if dims is not None else [dim] * len(sizes)
    if len(dims) != len(sizes):
        raise ConfigError(f"got {len(dims)} dims for {len(sizes)} fields")
    if any(int(d) < 1 for d in dims):
        raise ConfigError(f"every field dimension must be >= 1, got {dims}")
    return Model(names, sizes, dims, topology or Topology(), seed=seed)


def forward(instance, model: Model):
    """Click probability for one instance plus its trace."""
    trace = model.forward(instance)
    return float(trace.prob[0]), trace


def dense_gradients(model: Model, grads: dict) -> dict:
    """Expand sparse embedding gradients into full-size arrays."""
    out = {}
    for name, g in grads.items():
        if isinstance(g, tuple):
            full = np.zeros_like(model.params[name])
            full[g[0]] += g[1]
            out[name] = full
        else:
            out[name] = g
    return out
