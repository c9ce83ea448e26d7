"""Gated cross layers.

One layer maps ``c_l`` to ``c0 * (W_c c_l + b) * sigmoid(W_g c_l) + c_l``.
With the gate switched off (``GateMode.ALL_ONES``) the sigmoid factor is the
constant 1 and the layer is exactly the ungated DCN-V2 cross layer.

Batches are row-major: ``c0`` and ``c_l`` have shape ``(B, D)``; a 1-D vector
is treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NumericError, ShapeError
from .seeding import rng_for


class GateMode(str, Enum):
    LEARNED = "learned"
    ALL_ONES = "all_ones"

    @classmethod
    def parse(cls, value) -> "GateMode":
        if isinstance(value, cls):
            return value
        aliases = {"on": cls.LEARNED, "off": cls.ALL_ONES}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown gate mode {value!r}") from None


def sigmoid(x):
    """Overflow-free logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GatedCrossParams:
    W_c: np.ndarray
    W_g: np.ndarray
    b: np.ndarray

    @property
    def D(self) -> int:
        return self.b.shape[0]

    def param_count(self) -> int:
        return self.W_c.size + self.W_g.size + self.b.size


@dataclass
class CrossStack:
    layers: list[GatedCrossParams]
    gate_mode: GateMode = GateMode.LEARNED

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass
class CrossCache:
    c0: np.ndarray
    c_l: np.ndarray
    a: np.ndarray
    g: np.ndarray | None  # None under ALL_ONES


@dataclass
class CrossGrads:
    c_l: np.ndarray
    c0: np.ndarray
    W_c: np.ndarray
    W_g: np.ndarray
    b: np.ndarray


def init_cross_layer(D: int, rng: np.random.Generator) -> GatedCrossParams:
    bound = 1.0 / np.sqrt(D)
    return GatedCrossParams(
        W_c=rng.uniform(-bound, bound, size=(D, D)),
        W_g=rng.uniform(-bound, bound, size=(D, D)),
        b=np.zeros(D),
    )


def init_stack(D: int, depth: int, seed: int = 0, gate_mode=GateMode.LEARNED) -> CrossStack:
    layers = [init_cross_layer(D, rng_for(seed, "cross", l)) for l in range(depth)]
    return CrossStack(layers, GateMode.parse(gate_mode))


def _rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def gated_cross_forward(c0, c_l, p: GatedCrossParams, gate_mode=GateMode.LEARNED):
    """Returns ``(c_next, cache)``."""
    gate_mode = GateMode.parse(gate_mode)
    c0, single = _rows(c0)
    c_l, _ = _rows(c_l)
    D = p.D
    if c0.shape != c_l.shape or c0.shape[1] != D or p.W_c.shape != (D, D) or p.W_g.shape != (D, D):
        raise ShapeError(f"cross layer of width {D} got c0 {c0.shape}, c_l {c_l.shape}")
    a = c_l @ p.W_c.T + p.b
    if gate_mode is GateMode.LEARNED:
        g = sigmoid(c_l @ p.W_g.T)
        c_next = c0 * a * g + c_l
    else:
        g = None
        c_next = c0 * a + c_l
    cache = CrossCache(c0, c_l, a, g)
    return (c_next[0] if single else c_next), cache


def gated_cross_backward(cache: CrossCache, p: GatedCrossParams, grad_next,
                         gate_mode=GateMode.LEARNED) -> CrossGrads:
    """Exact gradients given ``grad_next = dL/dc_next`` for the cached batch."""
    gate_mode = GateMode.parse(gate_mode)
    grad_next, single = _rows(grad_next)
    c0, c_l, a, g = cache.c0, cache.c_l, cache.a, cache.g
    if grad_next.shape != c0.shape or a.shape != c0.shape or c_l.shape[1] != p.D:
        raise NumericError(
            f"stale cross cache: cached {c0.shape}, gradient {grad_next.shape}, layer width {p.D}")
    if gate_mode is GateMode.LEARNED and g is None:
        raise NumericError("cache was produced with the gate off")

    gc0 = grad_next * c0
    if gate_mode is GateMode.LEARNED:
        d_a = gc0 * g
        d_z = gc0 * a * g * (1.0 - g)
        grad_W_g = d_z.T @ c_l
        grad_c_l = grad_next + d_a @ p.W_c + d_z @ p.W_g
        grad_c0 = grad_next * a * g
    else:
        d_a = gc0
        grad_W_g = np.zeros_like(p.W_g)
        grad_c_l = grad_next + d_a @ p.W_c
        grad_c0 = grad_next * a
    grads = CrossGrads(
        c_l=grad_c_l,
        c0=grad_c0,
        W_c=d_a.T @ c_l,
        W_g=grad_W_g,
        b=d_a.sum(axis=0),
    )
    if single:
        grads.c_l = grads.c_l[0]
        grads.c0 = grads.c0[0]
    return grads


@dataclass
class StackTrace:
    caches: list[CrossCache] = field(default_factory=list)
    gates: list[np.ndarray] = field(default_factory=list)


def stack_forward(c0, stack: CrossStack):
    """Run every layer against the same ``c0``.

    Returns ``(c_L, caches, gate_trace)``; ``gate_trace`` holds one ``(B, D)``
    gate matrix per layer (all ones when the gate is off).
    """
    c0, single = _rows(c0)
    c = c0
    caches, gates = [], []
    for p in stack.layers:
        c, cache = gated_cross_forward(c0, c, p, stack.gate_mode)
        caches.append(cache)
        gates.append(cache.g if cache.g is not None else np.ones_like(c0))
    if single:
        return c[0], caches, [g[0] for g in gates]
    return c, caches, gates


def stack_backward(caches, stack: CrossStack, grad_out):
    """Backpropagate through the stack.

    Returns ``(grad_c0_total, layer_grads)`` where ``grad_c0_total`` includes
    the path through the first layer's input as well as every layer's direct
    use of ``c0``.
    """
    grad, single = _rows(grad_out)
    grad_c0 = np.zeros_like(grad)
    layer_grads = [None] * stack.depth
    for l in range(stack.depth - 1, -1, -1):
        gr = gated_cross_backward(caches[l], stack.layers[l], grad, stack.gate_mode)
        layer_grads[l] = gr
        grad_c0 += gr.c0
        grad = gr.c_l
    grad_c0 += grad
    return (grad_c0[0] if single else grad_c0), layer_grads
