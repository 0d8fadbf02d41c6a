"""Leaky integrate-and-fire dynamics over a leading time axis.

Membrane update per step: u[t] = tau * u_post[t-1] + x[t], a spike fires
when u[t] >= v_th (ties spike), and the reset is hard: u_post = u * (1 - s).
The backward pass substitutes a triangular window for the spike derivative
and by default treats the reset indicator as a constant; set
`reset_grad_through_spike` to also differentiate the reset product term.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import as_f64


@dataclass(frozen=True)
class LIFConfig:
    tau: float = 0.5
    v_th: float = 1.0
    beta: float = 1.0
    reset_grad_through_spike: bool = False

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ConfigError(f"LIFConfig.tau must be in (0, 1], got {self.tau}")
        if self.v_th <= 0.0:
            raise ConfigError(f"LIFConfig.v_th must be > 0, got {self.v_th}")
        if self.beta <= 0.0:
            raise ConfigError(f"LIFConfig.beta must be > 0, got {self.beta}")


@dataclass
class LIFCache:
    """Pre-reset membrane trace and emitted spikes, both shaped like the input."""

    u_pre: np.ndarray
    spikes: np.ndarray


def lif_forward(x_seq: np.ndarray, cfg: LIFConfig) -> tuple[np.ndarray, LIFCache]:
    """Run the neuron over (T, ...) input current; returns (spikes, cache)."""
    x_seq = as_f64(x_seq)
    if x_seq.ndim < 2:
        raise ShapeError(f"lif_forward expects a (T, ...) array, got ndim={x_seq.ndim}")
    t_steps = x_seq.shape[0]
    u_pre = np.empty_like(x_seq)
    spikes = np.empty_like(x_seq)
    u_post = np.zeros_like(x_seq[0])
    for t in range(t_steps):
        u = cfg.tau * u_post + x_seq[t]
        s = (u >= cfg.v_th).astype(np.float64)
        u_pre[t] = u
        spikes[t] = s
        u_post = u * (1.0 - s)
    return spikes, LIFCache(u_pre=u_pre, spikes=spikes)


def surrogate_grad(u: np.ndarray, cfg: LIFConfig) -> np.ndarray:
    """Triangular window max(0, beta - |u - v_th|) used in place of ds/du."""
    return np.maximum(0.0, cfg.beta - np.abs(as_f64(u) - cfg.v_th))


def lif_backward(grad_spikes: np.ndarray, cache: LIFCache, cfg: LIFConfig) -> np.ndarray:
    """Returns grad w.r.t. the input current sequence.

    Reverse recursion: grad_u[t] = grad_spikes[t] * sg(u[t]) + grad_u[t+1] * du[t+1]/du[t]
    with du[t+1]/du[t] = tau * (1 - s[t]) under the default constant-reset rule.
    Since u[t] depends on x[t] additively, grad_x[t] = grad_u[t].
    """
    gs = as_f64(grad_spikes)
    if gs.shape != cache.u_pre.shape:
        raise ShapeError(f"lif grad_spikes shape {gs.shape} != {cache.u_pre.shape}")
    t_steps = gs.shape[0]
    grad_x = np.empty_like(gs)
    grad_u_next = np.zeros_like(gs[0])
    for t in range(t_steps - 1, -1, -1):
        sg = surrogate_grad(cache.u_pre[t], cfg)
        carry = cfg.tau * (1.0 - cache.spikes[t])
        if cfg.reset_grad_through_spike:
            carry = carry - cfg.tau * cache.u_pre[t] * sg
        grad_u = gs[t] * sg + grad_u_next * carry
        grad_x[t] = grad_u
        grad_u_next = grad_u
    return grad_x
