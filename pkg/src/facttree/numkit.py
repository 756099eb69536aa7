"""Small numeric substrate shared by the trainable models.

Everything is float64 numpy. Models own their analytic gradients; this
module only supplies the optimizer, the gradient checker, stable
log-sum-exp, seeded RNG construction and JSON checkpoint IO.
"""

from __future__ import annotations

import json
import os
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericError(ValueError):
    """Raised when a numeric invariant breaks (NaN/Inf, shape mismatch)."""


def rng(seed: int) -> np.random.Generator:
    """Deterministic generator; same seed, same stream."""
    return np.random.default_rng(int(seed))


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr


def logsumexp(v: np.ndarray, axis=None) -> np.ndarray:
    """Max-shifted log(sum(exp(v))). Empty input is an error."""
    v = as_f64(v)
    if v.size == 0:
        raise NumericError("logsumexp of empty array")
    m = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = as_f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class AdamState:
    """First/second moment buffers plus the shared step counter.

    One state instance serves one fixed list of parameter arrays; the
    slot order must match on every call.
    """

    def __init__(self, params: Sequence[np.ndarray]):
        self.m = [np.zeros_like(as_f64(p)) for p in params]
        self.v = [np.zeros_like(as_f64(p)) for p in params]
        self.t = 0


def adam_step(
    state: AdamState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    lr: float,
) -> List[np.ndarray]:
    """One bias-corrected Adam update. Returns new parameter arrays.

    The state is advanced in place; params/grads slot order must match
    the state. Non-finite gradients are a hard error.
    """
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise NumericError("adam_step: slot count mismatch with state")
    state.t += 1
    t = state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p = as_f64(p)
        g = as_f64(g)
        if p.shape != g.shape:
            raise NumericError(f"adam_step: shape mismatch in slot {i}: {p.shape} vs {g.shape}")
        ensure_finite(f"grad[{i}]", g)
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * (g * g)
        m_hat = state.m[i] / (1.0 - ADAM_BETA1 ** t)
        v_hat = state.v[i] / (1.0 - ADAM_BETA2 ** t)
        p_new = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        ensure_finite(f"param[{i}]", p_new)
        out.append(p_new)
    return out


def grad_check(
    f: Callable[[List[np.ndarray]], Tuple[float, List[np.ndarray]]],
    params: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients of f against central differences.

    f maps a parameter list to (scalar loss, gradient list). Returns the
    maximum over all coordinates of

        |analytic - central| / max(1, |central|)
    """
    params = [as_f64(p).copy() for p in params]
    _, grads = f(params)
    if len(grads) != len(params):
        raise NumericError("grad_check: gradient list length mismatch")
    worst = 0.0
    for k, p in enumerate(params):
        g = as_f64(grads[k])
        if g.shape != p.shape:
            raise NumericError(f"grad_check: gradient shape mismatch in slot {k}")
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lo_hi, _ = f(params)
            flat[j] = orig - eps
            lo_lo, _ = f(params)
            flat[j] = orig
            central = (lo_hi - lo_lo) / (2.0 * eps)
            err = abs(gflat[j] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst


def save_checkpoint(path: str, kind: str, config: Dict, params: Dict[str, np.ndarray], meta: Dict | None = None) -> None:
    """Write parameters as shape-tagged flat float lists in one JSON file."""
    blob = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "meta": meta or {},
        "params": {
            name: {"shape": list(as_f64(arr).shape), "data": as_f64(arr).reshape(-1).tolist()}
            for name, arr in params.items()
        },
    }
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)
        fh.write("\n")


def load_checkpoint(path: str, expect_kind: str | None = None) -> Tuple[Dict, Dict[str, np.ndarray], Dict]:
    """Read a checkpoint; returns (config, params, meta)."""
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise NumericError(f"unsupported checkpoint format_version in {path}")
    if expect_kind is not None and blob.get("kind") != expect_kind:
        raise NumericError(f"checkpoint kind {blob.get('kind')!r} != expected {expect_kind!r}")
    params = {}
    for name, rec in blob["params"].items():
        arr = as_f64(rec["data"]).reshape(rec["shape"])
        ensure_finite(f"checkpoint param {name}", arr)
        params[name] = arr
    return blob.get("config", {}), params, blob.get("meta", {})
