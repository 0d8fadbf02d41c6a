"""Gradient verification harness.

Two independent oracles check the package's backward passes:

* central finite differences on everything differentiable (dense ops,
  normalization, gating with the exact rule, the loss, and a composed
  smooth network);
* a scalar define-by-run tape that re-derives the full network gradient
  one value at a time, applying the same substitution rules the array
  code uses for the non-differentiable pieces (triangular window at the
  firing threshold, straight-through sign with a detached scale, constant
  gate in the approximate rule).  The tape shares no code with the array
  implementation, so agreement pins down the composed backward.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .data import encode_constant, synthetic_blobs
from .errors import ConfigError
from .network import (
    AvgPoolLayer,
    BatchNormLayer,
    BinaryConvLayer,
    ConvLayer,
    GateLayer,
    LIFLayer,
    LinearLayer,
    Network,
    SkipAddLayer,
    build_network,
    make_network_config,
)
from .train import cross_entropy_loss

FD_STEP = 1e-5
FD_TOL = 1e-6
TAPE_TOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_err: float
    tol: float
    passed: bool


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


def fd_gradient(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar f w.r.t. every entry of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x)
        flat[i] = keep - step
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


# --- scalar define-by-run tape ----------------------------------------------


class Var:
    """One scalar on the tape; parents carry precomputed local derivatives."""

    __slots__ = ("value", "grad", "parents")

    def __init__(self, value: float, parents: tuple = ()):
        self.value = float(value)
        self.grad = 0.0
        self.parents = parents

    def __add__(self, other):
        if isinstance(other, Var):
            return Var(self.value + other.value, ((self, 1.0), (other, 1.0)))
        return Var(self.value + float(other), ((self, 1.0),))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, -1.0),))

    def __sub__(self, other):
        if isinstance(other, Var):
            return Var(self.value - other.value, ((self, 1.0), (other, -1.0)))
        return Var(self.value - float(other), ((self, 1.0),))

    def __rsub__(self, other):
        return Var(float(other) - self.value, ((self, -1.0),))

    def __mul__(self, other):
        if isinstance(other, Var):
            return Var(
                self.value * other.value,
                ((self, other.value), (other, self.value)),
            )
        c = float(other)
        return Var(self.value * c, ((self, c),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            inv = 1.0 / other.value
            return Var(
                self.value * inv,
                ((self, inv), (other, -self.value * inv * inv)),
            )
        c = 1.0 / float(other)
        return Var(self.value * c, ((self, c),))

    def __rtruediv__(self, other):
        c = float(other)
        inv = 1.0 / self.value
        return Var(c * inv, ((self, -c * inv * inv),))

    def exp(self):
        v = math.exp(self.value)
        return Var(v, ((self, v),))

    def log(self):
        return Var(math.log(self.value), ((self, 1.0 / self.value),))

    def sqrt(self):
        v = math.sqrt(self.value)
        return Var(v, ((self, 0.5 / v),))

    def sigmoid(self):
        z = self.value
        g = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
        return Var(g, ((self, g * (1.0 - g)),))


def spike(u: Var, v_th: float, beta: float) -> Var:
    """Heaviside forward; triangular window in place of the derivative."""
    s = 1.0 if u.value >= v_th else 0.0
    window = max(0.0, beta - abs(u.value - v_th))
    return Var(s, ((u, window),))


def ste_sign(w: Var, gamma: float, limit: float = 1.0) -> Var:
    """gamma * sign(w) with the straight-through mask as the derivative."""
    s = -1.0 if w.value < 0.0 else 1.0
    coef = gamma if abs(w.value) <= limit else 0.0
    return Var(gamma * s, ((w, coef),))


def reset_detached(u: Var, s: Var) -> Var:
    """u * (1 - s) with the spike treated as a constant."""
    return Var(u.value * (1.0 - s.value), ((u, 1.0 - s.value),))


def gated_approx(x: Var, gate: Var) -> Var:
    """gate * x where the path from the product back to x stays constant-gate.

    `gate` must only depend on the gate parameter (not on x), so the exact
    parameter gradient survives while the input gradient is just the scale.
    """
    return Var(x.value * gate.value, ((x, gate.value), (gate, x.value)))


def backprop(root: Var) -> None:
    topo: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    for node in topo:
        node.grad = 0.0
    root.grad = 1.0
    for node in reversed(topo):
        g = node.grad
        if g == 0.0:
            continue
        for parent, coef in node.parents:
            parent.grad += g * coef


def make_leaves(arr: np.ndarray) -> np.ndarray:
    out = np.empty(arr.shape, dtype=object)
    flat_in = arr.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = Var(float(flat_in[i]))
    return out


def leaf_values(leaves: np.ndarray, attr: str = "value") -> np.ndarray:
    out = np.empty(leaves.shape, dtype=np.float64)
    flat_in = leaves.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = getattr(flat_in[i], attr)
    return out


def _tape_conv(x: np.ndarray, w: np.ndarray, spec: ops.ConvSpec) -> np.ndarray:
    """x, w are object arrays ((N,C,H,W) and weight shape); zero padding."""
    n, _, h, wd = x.shape
    oh, ow = spec.out_hw(h, wd)
    y = np.empty((n, spec.out_channels, oh, ow), dtype=object)
    p, s = spec.padding, spec.stride
    for b in range(n):
        for co in range(spec.out_channels):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(spec.in_channels):
                        for i in range(spec.kernel_h):
                            for j in range(spec.kernel_w):
                                yy = oy * s + i - p
                                xx = ox * s + j - p
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc = acc + w[co, ci, i, j] * x[b, ci, yy, xx]
                    y[b, co, oy, ox] = acc if isinstance(acc, Var) else Var(0.0)
    return y


@dataclass
class TapeResult:
    loss: float
    logits: np.ndarray
    param_grads: dict[str, np.ndarray]
    input_grad: np.ndarray


def tape_run(net: Network, x_seq: np.ndarray, labels: np.ndarray) -> TapeResult:
    """Re-derive loss and gradients for `net` on the scalar tape."""
    cfg = net.cfg
    t_steps, n = x_seq.shape[0], x_seq.shape[1]
    x_leaves = make_leaves(np.asarray(x_seq, dtype=np.float64))
    param_leaves: dict[str, np.ndarray] = {}
    h = x_leaves
    outputs: list[np.ndarray] = []
    for lay in net.layers:
        if isinstance(lay, (ConvLayer, BinaryConvLayer)):
            if isinstance(lay, BinaryConvLayer):
                w_leaves = make_leaves(lay.latent.data)
                param_leaves[lay.latent.name] = w_leaves
                gamma = np.abs(lay.latent.data).mean(axis=(1, 2, 3))
                eff = np.empty(w_leaves.shape, dtype=object)
                for idx in np.ndindex(w_leaves.shape):
                    eff[idx] = ste_sign(w_leaves[idx], float(gamma[idx[0]]))
            else:
                w_leaves = make_leaves(lay.weight.data)
                param_leaves[lay.weight.name] = w_leaves
                eff = w_leaves
            folded = h.reshape((t_steps * n,) + h.shape[2:])
            y = _tape_conv(folded, eff, lay.spec)
            h = y.reshape((t_steps, n) + y.shape[1:])
        elif isinstance(lay, BatchNormLayer):
            param_leaves[lay.state.scale.name] = np.array(
                [Var(float(v)) for v in lay.state.scale.data], dtype=object
            )
            param_leaves[lay.state.shift.name] = np.array(
                [Var(float(v)) for v in lay.state.shift.data], dtype=object
            )
            folded = h.reshape((t_steps * n,) + h.shape[2:])
            y = _tape_batchnorm_params(
                folded, lay, param_leaves[lay.state.scale.name],
                param_leaves[lay.state.shift.name],
            )
            h = y.reshape((t_steps, n) + y.shape[1:])
        elif isinstance(lay, LIFLayer):
            out = np.empty_like(h)
            u_post = np.full(h.shape[1:], 0.0, dtype=object)
            for t in range(t_steps):
                for idx in np.ndindex(h.shape[1:]):
                    u = h[(t,) + idx] + lay.cfg.tau * u_post[idx]
                    if not isinstance(u, Var):
                        u = Var(float(u))
                    s = spike(u, lay.cfg.v_th, lay.cfg.beta)
                    out[(t,) + idx] = s
                    if lay.cfg.reset_grad_through_spike:
                        u_post[idx] = u * (1.0 - s)
                    else:
                        u_post[idx] = reset_detached(u, s)
            h = out
        elif isinstance(lay, GateLayer):
            alpha_leaves = np.array(
                [Var(float(v)) for v in lay.alpha.data], dtype=object
            )
            param_leaves[lay.alpha.name] = alpha_leaves
            out = np.empty_like(h)
            feat = int(np.prod(h.shape[2:]))
            exact = lay.backward_rule == "exact"
            for t in range(t_steps):
                if lay.per_sample:
                    groups = [(t, b) for b in range(n)]
                else:
                    groups = [(t,)]
                for key in groups:
                    block = h[key]
                    elems = block.ravel()
                    if exact:
                        mean = elems.sum() / elems.size
                        gate = (alpha_leaves[t] * mean).sigmoid()
                        gated = [gate * e for e in elems]
                    else:
                        mean_val = float(sum(e.value for e in elems) / elems.size)
                        gate = (alpha_leaves[t] * mean_val).sigmoid()
                        gated = [gated_approx(e, gate) for e in elems]
                    out[key] = np.array(gated, dtype=object).reshape(block.shape)
            h = out
        elif isinstance(lay, AvgPoolLayer):
            k, s = lay.kernel, lay.stride
            t_, b_, c_, hh, ww = h.shape
            oh = (hh - k) // s + 1
            ow = (ww - k) // s + 1
            out = np.empty((t_, b_, c_, oh, ow), dtype=object)
            for idx in np.ndindex(t_, b_, c_, oh, ow):
                t, b, c, oy, ox = idx
                win = h[t, b, c, oy * s : oy * s + k, ox * s : ox * s + k].ravel()
                out[idx] = win.sum() / (k * k)
            h = out
        elif isinstance(lay, LinearLayer):
            w_leaves = make_leaves(lay.weight.data)
            b_leaves = np.array(
                [Var(float(v)) for v in lay.bias.data], dtype=object
            )
            param_leaves[lay.weight.name] = w_leaves
            param_leaves[lay.bias.name] = b_leaves
            flat = h.reshape(t_steps, n, -1)
            k_out, k_in = lay.weight.data.shape
            out = np.empty((t_steps, n, k_out), dtype=object)
            for t in range(t_steps):
                for b in range(n):
                    for o in range(k_out):
                        acc = b_leaves[o]
                        for i in range(k_in):
                            acc = acc + w_leaves[o, i] * flat[t, b, i]
                        out[t, b, o] = acc
            h = out
        elif isinstance(lay, SkipAddLayer):
            src = outputs[lay.source]
            out = np.empty_like(h)
            for idx in np.ndindex(h.shape):
                out[idx] = h[idx] + src[idx]
            h = out
        else:  # pragma: no cover
            raise ConfigError(f"tape cannot mirror layer kind {lay.kind!r}")
        outputs.append(h)
    k_classes = cfg.n_classes
    logits = np.empty((n, k_classes), dtype=object)
    for b in range(n):
        for o in range(k_classes):
            acc = 0.0
            for t in range(t_steps):
                acc = acc + h[t, b, o]
            logits[b, o] = acc / t_steps
    acc_loss = 0.0
    for b in range(n):
        row = logits[b]
        mx = max(v.value for v in row)
        exps = [(v - mx).exp() for v in row]
        se = exps[0]
        for e in exps[1:]:
            se = se + e
        acc_loss = acc_loss + (se.log() - (row[labels[b]] - mx))
    loss = acc_loss / n
    backprop(loss)
    return TapeResult(
        loss=loss.value,
        logits=leaf_values(logits),
        param_grads={name: leaf_values(lv, "grad") for name, lv in param_leaves.items()},
        input_grad=leaf_values(x_leaves, "grad"),
    )


def _tape_batchnorm_params(
    x: np.ndarray, lay: BatchNormLayer, scale_leaves: np.ndarray, shift_leaves: np.ndarray
) -> np.ndarray:
    c = x.shape[1]
    y = np.empty_like(x)
    count = x[:, 0].size
    for ch in range(c):
        xs = x[:, ch].ravel()
        mean = xs.sum() / count
        centered = np.array([v - mean for v in xs], dtype=object)
        var = sum(d * d for d in centered) / count
        inv_std = 1.0 / (var + lay.state.eps).sqrt()
        normed = [
            scale_leaves[ch] * (d * inv_std) + shift_leaves[ch] for d in centered
        ]
        block = np.array(normed, dtype=object).reshape(x[:, ch].shape)
        y[:, ch] = block
    return y


# --- finite-difference suites -------------------------------------------------


def _fd_check_conv(rng) -> CheckResult:
    worst = 0.0
    for spec in (
        ops.ConvSpec(2, 3, 3, 3, stride=1, padding=1),
        ops.ConvSpec(3, 2, 2, 3, stride=2, padding=0),
        ops.ConvSpec(1, 2, 1, 1, stride=1, padding=0),
    ):
        x = rng.standard_normal((2, spec.in_channels, 6, 7))
        w = rng.standard_normal(spec.weight_shape)
        oh, ow = spec.out_hw(6, 7)
        r = rng.standard_normal((2, spec.out_channels, oh, ow))
        gx, gw = ops.conv2d_backward(r, x, w, spec)
        worst = max(
            worst,
            rel_err(gx, fd_gradient(lambda v: float((ops.conv2d_forward(v, w, spec) * r).sum()), x.copy())),
            rel_err(gw, fd_gradient(lambda v: float((ops.conv2d_forward(x, v, spec) * r).sum()), w.copy())),
        )
    return CheckResult("conv2d/fd", worst, FD_TOL, worst <= FD_TOL)


def _fd_check_batchnorm(rng) -> CheckResult:
    x = rng.standard_normal((6, 3, 4, 5))
    r = rng.standard_normal(x.shape)

    def run(v, what):
        state = ops.BatchNormState.create(3)
        state.scale.data[:] = [1.2, 0.8, 1.0]
        state.shift.data[:] = [0.1, -0.2, 0.0]
        if what == "scale":
            state.scale.data[:] = v
        elif what == "shift":
            state.shift.data[:] = v
        y, cache = ops.batchnorm_forward(x if what != "x" else v, state)
        return float((y * r).sum()), state, cache

    state = ops.BatchNormState.create(3)
    state.scale.data[:] = [1.2, 0.8, 1.0]
    state.shift.data[:] = [0.1, -0.2, 0.0]
    y, cache = ops.batchnorm_forward(x, state)
    gx = ops.batchnorm_backward(r, cache, state)
    worst = rel_err(gx, fd_gradient(lambda v: run(v, "x")[0], x.copy()))
    worst = max(
        worst,
        rel_err(state.scale.grad, fd_gradient(lambda v: run(v, "scale")[0], state.scale.data.copy())),
        rel_err(state.shift.grad, fd_gradient(lambda v: run(v, "shift")[0], state.shift.data.copy())),
    )
    return CheckResult("batchnorm/fd", worst, FD_TOL, worst <= FD_TOL)


def _fd_check_linear(rng) -> CheckResult:
    x = rng.standard_normal((5, 7))
    w = rng.standard_normal((3, 7))
    b = rng.standard_normal(3)
    r = rng.standard_normal((5, 3))
    gx, gw, gb = ops.linear_backward(r, x, w, with_bias=True)
    worst = max(
        rel_err(gx, fd_gradient(lambda v: float((ops.linear_forward(v, w, b) * r).sum()), x.copy())),
        rel_err(gw, fd_gradient(lambda v: float((ops.linear_forward(x, v, b) * r).sum()), w.copy())),
        rel_err(gb, fd_gradient(lambda v: float((ops.linear_forward(x, w, v) * r).sum()), b.copy())),
    )
    return CheckResult("linear/fd", worst, FD_TOL, worst <= FD_TOL)


def _fd_check_avgpool(rng) -> CheckResult:
    worst = 0.0
    for kernel, stride in ((2, 2), (3, 1)):
        x = rng.standard_normal((2, 3, 6, 6))
        y = ops.avgpool_forward(x, kernel, stride)
        r = rng.standard_normal(y.shape)
        gx = ops.avgpool_backward(r, x.shape, kernel, stride)
        worst = max(
            worst,
            rel_err(gx, fd_gradient(lambda v: float((ops.avgpool_forward(v, kernel, stride) * r).sum()), x.copy())),
        )
    return CheckResult("avgpool/fd", worst, FD_TOL, worst <= FD_TOL)


def _fd_check_gate_exact(rng) -> CheckResult:
    from .agmm import gate_backward_exact, gate_forward

    worst = 0.0
    for per_sample in (True, False):
        x = rng.standard_normal((3, 2, 2, 3, 3))
        alpha = rng.standard_normal(3)
        r = rng.standard_normal(x.shape)
        y, cache = gate_forward(x, alpha, per_sample)
        gx, ga = gate_backward_exact(r, cache, alpha)

        def f_x(v):
            out, _ = gate_forward(v, alpha, per_sample)
            return float((out * r).sum())

        def f_a(v):
            out, _ = gate_forward(x, v, per_sample)
            return float((out * r).sum())

        worst = max(
            worst,
            rel_err(gx, fd_gradient(f_x, x.copy())),
            rel_err(ga, fd_gradient(f_a, alpha.copy())),
        )
    return CheckResult("gate-exact/fd", worst, FD_TOL, worst <= FD_TOL)


def _fd_check_cross_entropy(rng) -> CheckResult:
    logits = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, size=6)
    _, grad = cross_entropy_loss(logits, labels)
    num = fd_gradient(lambda v: cross_entropy_loss(v, labels)[0], logits.copy())
    worst = rel_err(grad, num)
    return CheckResult("cross-entropy/fd", worst, FD_TOL, worst <= FD_TOL)


def _smooth_network(seed: int) -> tuple[Network, np.ndarray, np.ndarray]:
    """A conv-norm-pool-linear network with no firing layers (T=1)."""
    from .network import LayerSpec, NetworkConfig

    cfg = NetworkConfig(
        variant="fp",
        timesteps=1,
        input_shape=(2, 6, 6),
        n_classes=3,
        layer_specs=(
            LayerSpec("conv", out_channels=3, kernel=3, stride=1, padding=1),
            LayerSpec("batchnorm"),
            LayerSpec("avgpool", kernel=2, stride=2),
            LayerSpec("linear", features=3),
        ),
        seed=seed,
    )
    net = build_network(cfg)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((1, 4, 2, 6, 6))
    labels = rng.integers(0, 3, size=4)
    return net, x, labels


def _fd_check_composed(seed: int) -> CheckResult:
    net, x, labels = _smooth_network(seed)

    def loss_of(v=None):
        logits = net.forward(x if v is None else v, training=True)
        return cross_entropy_loss(logits, labels)[0]

    net.zero_grad()
    logits = net.forward(x, training=True)
    loss, grad = cross_entropy_loss(logits, labels)
    gx = net.backward(grad)
    worst = rel_err(gx, fd_gradient(lambda v: loss_of(v), x.copy()))
    for p in net.parameters():
        analytic = p.grad.copy()
        num = fd_gradient(lambda v: loss_of(), p.data)  # p.data is mutated in place
        worst = max(worst, rel_err(analytic, num))
    return CheckResult("composed-smooth/fd", worst, FD_TOL, worst <= FD_TOL)


def _tiny_spiking_net(variant: str, seed: int, agmm_backward: str = "exact",
                      reset_through: bool = False) -> tuple[Network, np.ndarray, np.ndarray]:
    from .neuron import LIFConfig

    cfg = make_network_config(
        variant=variant,
        input_shape=(1, 4, 4),
        n_classes=3,
        timesteps=2,
        blocks=1,
        channels=2,
        kernel=3,
        pool=2,
        skip=True,
        lif=LIFConfig(reset_grad_through_spike=reset_through),
        seed=seed,
        agmm_backward=agmm_backward,
    )
    net = build_network(cfg)
    data = synthetic_blobs(n_classes=3, per_class=1, channels=1, height=4, width=4,
                           noise=0.3, seed=seed + 5)
    x = encode_constant(data.images, 2) * 2.0  # scale up so spikes occur
    return net, x, data.labels


def _tape_check(name: str, net: Network, x: np.ndarray, labels: np.ndarray) -> CheckResult:
    net.zero_grad()
    logits = net.forward(x, training=True)
    loss, grad = cross_entropy_loss(logits, labels)
    gx = net.backward(grad)
    ref = tape_run(net, x, labels)
    worst = rel_err(logits, ref.logits)
    worst = max(worst, abs(loss - ref.loss))
    worst = max(worst, rel_err(gx, ref.input_grad))
    for p in net.parameters():
        worst = max(worst, rel_err(p.grad, ref.param_grads[p.name]))
    return CheckResult(name, worst, TAPE_TOL, worst <= TAPE_TOL)


def run_all(seed: int = 20240) -> list[CheckResult]:
    """Every gradient suite; the composed checks cover all three variants."""
    rng = np.random.default_rng(seed)
    results = [
        _fd_check_conv(rng),
        _fd_check_batchnorm(rng),
        _fd_check_linear(rng),
        _fd_check_avgpool(rng),
        _fd_check_gate_exact(rng),
        _fd_check_cross_entropy(rng),
        _fd_check_composed(seed),
    ]
    for variant in ("fp", "binary", "binary-agmm"):
        net, x, labels = _tiny_spiking_net(variant, seed)
        results.append(_tape_check(f"{variant}/tape", net, x, labels))
    net, x, labels = _tiny_spiking_net("binary-agmm", seed + 1, agmm_backward="approx")
    results.append(_tape_check("binary-agmm-approx/tape", net, x, labels))
    net, x, labels = _tiny_spiking_net("binary", seed + 2, reset_through=True)
    results.append(_tape_check("binary-reset-through/tape", net, x, labels))
    return results
