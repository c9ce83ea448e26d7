"""Adam with sparse embedding updates, plateau scheduling, early stopping, metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, NumericError, UndefinedMetricError
from .model import Model, logloss
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

MONITORS = ("auc", "logloss")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4096
    plateau_patience: int = 3
    plateau_factor: float = 0.1
    early_stop_patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    monitor: str = "auc"
    min_delta: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patiences must be >= 1")
        if self.monitor not in MONITORS:
            raise ConfigError(f"monitor must be one of {MONITORS}, got {self.monitor!r}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("batch_size >= 1, max_epochs >= 0 and learning_rate > 0 required")

    @property
    def higher_is_better(self) -> bool:
        return self.monitor == "auc"


# --- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    A gradient given as ``(rows, row_grads)`` is sparse: only those rows of the
    parameter and of its moments change.
    """
    for name, g in grads.items():
        vals = g[1] if isinstance(g, tuple) else g
        if not np.all(np.isfinite(vals)):
            bad = int(np.size(vals) - np.count_nonzero(np.isfinite(vals)))
            raise NumericError(f"non-finite gradient for {name} ({bad} entries); step aborted")
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if isinstance(g, tuple):
            rows, gr = g
            m[rows] = b1 * m[rows] + (1.0 - b1) * gr
            v[rows] = b2 * v[rows] + (1.0 - b2) * gr * gr
            p[rows] -= lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + eps)
        else:
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# --- schedule / stopping ---------------------------------------------------

def _improved(value, best, higher_is_better, min_delta) -> bool:
    if best is None:
        return True
    return value > best + min_delta if higher_is_better else value < best - min_delta


def reduce_lr_on_plateau(history, cfg: TrainConfig) -> float:
    """Learning rate after replaying ``history`` (one monitored value per epoch).

    Each run of ``plateau_patience`` consecutive non-improving epochs multiplies
    the rate by ``plateau_factor`` and restarts the count.
    """
    lr = cfg.learning_rate
    best, bad = None, 0
    for value in history:
        if _improved(value, best, cfg.higher_is_better, cfg.min_delta):
            best, bad = value, 0
        else:
            bad += 1
            if bad >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                bad = 0
    return lr


class StopDecision(NamedTuple):
    stop: bool
    best_epoch: int  # 1-based; 0 for an empty history


def early_stop(history, patience: int = 5, higher_is_better: bool = True,
               min_delta: float = 1e-6) -> StopDecision:
    best, best_epoch = None, 0
    for epoch, value in enumerate(history, start=1):
        if _improved(value, best, higher_is_better, min_delta):
            best, best_epoch = value, epoch
    return StopDecision(len(history) - best_epoch >= patience and best_epoch > 0, best_epoch)


# --- metrics ---------------------------------------------------------------

def auc(scores, labels) -> float:
    """ROC AUC from tie-averaged ranks; ties between classes count one half.

    Works on doubled ranks so the rank sum is an exact integer.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    ends = np.r_[starts[1:], len(s)]
    # doubled mean rank of a tie group spanning 1-based ranks start+1..end
    doubled = np.repeat(starts + ends + 1, ends - starts)
    ranks2 = np.empty(len(s), dtype=np.int64)
    ranks2[order] = doubled
    numer = int(ranks2[y].sum()) - n_pos * (n_pos + 1)
    return numer / (2 * n_pos * n_neg)


def evaluate(model: Model, data, batch_size: int = 8192) -> dict:
    probs = model.predict(data.indices, batch_size)
    ll, _ = logloss(probs, data.labels)
    return {"auc": auc(probs, data.labels), "logloss": ll, "n": len(data)}


# --- loop ------------------------------------------------------------------

class TrainingDiverged(NumericError):
    def __init__(self, message, model, epochs):
        super().__init__(message)
        self.model = model
        self.epochs = epochs


def train(model: Model, train_data, val_data, cfg: TrainConfig, on_epoch=None):
    """Fit ``model`` in place and return ``(model, epoch_log)``.

    After the loop the parameters are those of the best validation epoch.
    ``on_epoch`` is called with each log record as it is produced.
    """
    epochs: list[dict] = []
    if cfg.max_epochs == 0:
        return model, epochs
    state = AdamState()
    lr = cfg.learning_rate
    history: list[float] = []
    best_params = {k: v.copy() for k, v in model.params.items()}
    last_good = best_params
    n = len(train_data)
    dropout_seed = derive_seed(cfg.seed, "dropout")
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        perm = rng_for(cfg.seed, "shuffle", epoch).permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            rows = perm[start:start + cfg.batch_size]
            trace = model.forward(train_data.indices[rows], training=True,
                                  seed=dropout_seed, step=step)
            loss, grads = model.backward(trace, train_data.labels[rows])
            if not np.isfinite(loss):
                _restore(model, last_good)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}",
                                       model, epochs)
            try:
                adam_step(model.params, grads, state, lr)
            except NumericError as exc:
                _restore(model, last_good)
                raise TrainingDiverged(str(exc), model, epochs) from exc
            total += loss * len(rows)
            count += len(rows)
            step += 1
        metrics = evaluate(model, val_data)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_logloss": total / max(count, 1),
            "val_logloss": metrics["logloss"],
            "val_auc": metrics["auc"],
            "seconds": round(time.perf_counter() - t0, 3),
        }
        epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
        log.info("epoch %d lr %.2e train %.5f val_ll %.5f val_auc %.5f", epoch, lr,
                 record["train_logloss"], record["val_logloss"], record["val_auc"])
        history.append(metrics[cfg.monitor])
        last_good = {k: v.copy() for k, v in model.params.items()}
        decision = early_stop(history, cfg.early_stop_patience, cfg.higher_is_better,
                              cfg.min_delta)
        if decision.best_epoch == epoch:
            best_params = last_good
        if decision.stop:
            break
        lr = reduce_lr_on_plateau(history, cfg)
    _restore(model, best_params)
    return model, epochs


def _restore(model: Model, params: dict) -> None:
    for k, v in params.items():
        model.params[k][...] = v


def write_epoch_log(path, epochs) -> None:
    with open(path, "w") as fh:
        for rec in epochs:
            fh.write(json.dumps(rec, sort_keys=False) + "\n")


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
