"""Adaptive per-timestep gating of feature sequences.

Each timestep's feature map is multiplied by a sigmoid gate computed from
its own spatial mean: g[t] = sigmoid(alpha[t] * mean(x[t])).  Gates default
to one value per sample; a batch-shared variant pools the mean over the
whole batch.  Two backward rules are provided: the exact derivative of the
gate product, and an approximation that treats the gate as a constant
scale on the incoming gradient (the gate parameter gradient stays exact).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .ops import as_f64


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class GateCache:
    x_seq: np.ndarray
    means: np.ndarray  # (T, N) per-sample or (T,) batch-shared
    gates: np.ndarray  # same shape as means
    per_sample: bool

    @property
    def feature_size(self) -> int:
        """Number of entries each mean was taken over (per gate)."""
        x = self.x_seq
        n_feat = int(np.prod(x.shape[2:]))
        return n_feat if self.per_sample else n_feat * x.shape[1]


def _check_seq(x_seq: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    x_seq = as_f64(x_seq)
    if x_seq.ndim < 3:
        raise ShapeError(f"gate input must be (T, N, ...), got ndim={x_seq.ndim}")
    if int(np.prod(x_seq.shape[2:])) == 0:
        raise ShapeError(f"gate input has an empty feature map: {x_seq.shape}")
    if alpha.shape != (x_seq.shape[0],):
        raise ShapeError(f"alpha shape {alpha.shape} != ({x_seq.shape[0]},)")
    return x_seq


def gate_forward(
    x_seq: np.ndarray, alpha: np.ndarray, per_sample: bool = True
) -> tuple[np.ndarray, GateCache]:
    """Returns (gated sequence, cache).  x_seq is (T, N, ...)."""
    alpha = as_f64(alpha)
    x_seq = _check_seq(x_seq, alpha)
    feat_axes = tuple(range(2, x_seq.ndim))
    if per_sample:
        means = x_seq.mean(axis=feat_axes)  # (T, N)
        gates = sigmoid(alpha[:, None] * means)
        y = x_seq * gates.reshape(gates.shape + (1,) * len(feat_axes))
    else:
        means = x_seq.mean(axis=(1,) + feat_axes)  # (T,)
        gates = sigmoid(alpha * means)
        y = x_seq * gates.reshape((-1,) + (1,) * (x_seq.ndim - 1))
    return y, GateCache(x_seq=x_seq, means=means, gates=gates, per_sample=per_sample)


def _backward(
    grad_seq: np.ndarray, cache: GateCache, alpha: np.ndarray, exact: bool
) -> tuple[np.ndarray, np.ndarray]:
    g_up = as_f64(grad_seq)
    x = cache.x_seq
    if g_up.shape != x.shape:
        raise ShapeError(f"gate grad shape {g_up.shape} != input {x.shape}")
    alpha = as_f64(alpha)
    feat_axes = tuple(range(2, x.ndim))
    m = float(cache.feature_size)
    gates = cache.gates
    if cache.per_sample:
        bshape = gates.shape + (1,) * len(feat_axes)  # (T, N, 1...)
        dot = (g_up * x).sum(axis=feat_axes)  # (T, N)
        dgate = gates * (1.0 - gates)  # (T, N)
        grad_alpha = (dot * dgate * cache.means).sum(axis=1)
        grad_x = g_up * gates.reshape(bshape)
        if exact:
            coef = dot * dgate * alpha[:, None] / m  # (T, N)
            grad_x = grad_x + coef.reshape(bshape)
    else:
        bshape = (-1,) + (1,) * (x.ndim - 1)
        dot = (g_up * x).sum(axis=(1,) + feat_axes)  # (T,)
        dgate = gates * (1.0 - gates)
        grad_alpha = dot * dgate * cache.means
        grad_x = g_up * gates.reshape(bshape)
        if exact:
            coef = dot * dgate * alpha / m
            grad_x = grad_x + coef.reshape(bshape)
    return grad_x, grad_alpha


def gate_backward_exact(
    grad_seq: np.ndarray, cache: GateCache, alpha: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Full derivative: the gate's dependence on the input mean is included."""
    return _backward(grad_seq, cache, alpha, exact=True)


def gate_backward_approx(
    grad_seq: np.ndarray, cache: GateCache, alpha: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gate treated as constant for grad_x (pure rescaling); grad_alpha is exact."""
    return _backward(grad_seq, cache, alpha, exact=False)


@dataclass(frozen=True)
class GateScalingRow:
    timestep: int
    n_elements: int
    gate_mean: float
    gate_min: float
    gate_max: float
    grad_mean_before: float
    grad_mean_after: float
    grad_var_before: float
    grad_var_after: float


def gradient_scaling_report(grad_seq: np.ndarray, cache: GateCache) -> list[GateScalingRow]:
    """Per-timestep statistics of the incoming gradient and its gated version.

    The "after" tensor is the constant-gate rescaling g * grad, i.e. what the
    approximate backward propagates.
    """
    g_up = as_f64(grad_seq)
    if g_up.shape != cache.x_seq.shape:
        raise ShapeError(f"gate grad shape {g_up.shape} != input {cache.x_seq.shape}")
    rows = []
    n_feat_axes = cache.x_seq.ndim - 2
    for t in range(g_up.shape[0]):
        gt = cache.gates[t]
        before = g_up[t]
        if cache.per_sample:
            after = before * gt.reshape((-1,) + (1,) * n_feat_axes)
            gate_vals = gt
        else:
            after = before * gt
            gate_vals = np.asarray([gt])
        rows.append(
            GateScalingRow(
                timestep=t,
                n_elements=before.size,
                gate_mean=float(np.mean(gate_vals)),
                gate_min=float(np.min(gate_vals)),
                gate_max=float(np.max(gate_vals)),
                grad_mean_before=float(before.mean()),
                grad_mean_after=float(after.mean()),
                grad_var_before=float(before.var()),
                grad_var_after=float(after.var()),
            )
        )
    return rows
