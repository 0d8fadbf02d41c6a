"""Dense array operations with explicit forward/backward pairs.

Everything operates on float64 ndarrays.  Feature maps are (N, C, H, W);
sequence-aware callers fold the time axis into the batch before calling in.
Backward functions take the upstream gradient plus whatever the forward
cached, and return gradients in input-argument order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError, StateError

DTYPE = np.float64


def as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


@dataclass
class Parameter:
    """Trainable tensor with an accumulated gradient of the same shape.

    `clamp`, when set, bounds the data after each optimizer step.
    """

    name: str
    data: np.ndarray
    clamp: tuple[float, float] | None = None
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.data = as_f64(self.data)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-d correlation (no bias, square stride/padding)."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for fname in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, fname) < 1:
                raise ShapeError(f"ConvSpec.{fname} must be >= 1, got {getattr(self, fname)}")
        if self.padding < 0:
            raise ShapeError(f"ConvSpec.padding must be >= 0, got {self.padding}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv output would be {oh}x{ow} for input {h}x{w} with {self}"
            )
        return oh, ow


def _check_conv_args(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N,C,H,W), got ndim={x.ndim}")
    if w.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weight shape {w.shape} != spec {spec.weight_shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"conv2d input has {x.shape[1]} channels, spec expects {spec.in_channels}"
        )


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return as_f64(x)
    return np.pad(as_f64(x), ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    _check_conv_args(x, w, spec)
    spec.out_hw(x.shape[2], x.shape[3])
    xp = _pad(x, spec.padding)
    return kernels.conv2d_forward(xp, as_f64(w), spec.stride)


def conv2d_backward(
    grad_y: np.ndarray, x: np.ndarray, w: np.ndarray, spec: ConvSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_w) for y = conv2d_forward(x, w, spec)."""
    _check_conv_args(x, w, spec)
    oh, ow = spec.out_hw(x.shape[2], x.shape[3])
    if grad_y.shape != (x.shape[0], spec.out_channels, oh, ow):
        raise ShapeError(
            f"conv2d grad_y shape {grad_y.shape} != "
            f"{(x.shape[0], spec.out_channels, oh, ow)}"
        )
    xp = _pad(x, spec.padding)
    gy = as_f64(grad_y)
    gw = kernels.conv2d_grad_weights(gy, xp, spec.kernel_h, spec.kernel_w, spec.stride)
    gxp = kernels.conv2d_grad_input(gy, as_f64(w), spec.stride, xp.shape[2], xp.shape[3])
    p = spec.padding
    gx = gxp if p == 0 else gxp[:, :, p:-p, p:-p]
    return np.ascontiguousarray(gx), gw


def conv2d_grad_weights_only(grad_y: np.ndarray, x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Weight gradient alone; used by telemetry that slices the batch."""
    _check_conv_args(x, np.zeros(spec.weight_shape), spec)
    xp = _pad(x, spec.padding)
    return kernels.conv2d_grad_weights(
        as_f64(grad_y), xp, spec.kernel_h, spec.kernel_w, spec.stride
    )


@dataclass
class BatchNormState:
    """Per-channel affine normalization state.

    `training` selects batch statistics (and running-average updates) versus
    the stored running statistics.  Statistics are population moments.
    """

    scale: Parameter
    shift: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    training: bool = True

    @classmethod
    def create(cls, channels: int, name: str = "bn", eps: float = 1e-5, momentum: float = 0.1):
        return cls(
            scale=Parameter(f"{name}.scale", np.ones(channels)),
            shift=Parameter(f"{name}.shift", np.zeros(channels)),
            running_mean=np.zeros(channels, dtype=DTYPE),
            running_var=np.ones(channels, dtype=DTYPE),
            eps=eps,
            momentum=momentum,
        )


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    x_centered: np.ndarray
    training: bool


def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    if x.ndim == 4:
        return (0, 2, 3)
    if x.ndim == 2:
        return (0,)
    raise ShapeError(f"batchnorm input must be 2-d or 4-d, got ndim={x.ndim}")


def _bn_expand(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape(1, -1, 1, 1) if ndim == 4 else v.reshape(1, -1)


def batchnorm_forward(
    x: np.ndarray, state: BatchNormState
) -> tuple[np.ndarray, BatchNormCache]:
    x = as_f64(x)
    axes = _bn_axes(x)
    c = x.shape[1]
    if state.scale.data.shape != (c,):
        raise ShapeError(
            f"batchnorm state has {state.scale.data.shape[0]} channels, input has {c}"
        )
    if state.training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_centered = x - _bn_expand(mean, x.ndim)
    x_hat = x_centered * _bn_expand(inv_std, x.ndim)
    y = x_hat * _bn_expand(state.scale.data, x.ndim) + _bn_expand(state.shift.data, x.ndim)
    return y, BatchNormCache(x_hat, inv_std, x_centered, state.training)


def batchnorm_backward(
    grad_y: np.ndarray, cache: BatchNormCache, state: BatchNormState
) -> np.ndarray:
    """Returns grad_x; accumulates into state.scale.grad / state.shift.grad."""
    if not cache.training:
        raise StateError("batchnorm_backward requires a cache from a training-mode forward")
    gy = as_f64(grad_y)
    if gy.shape != cache.x_hat.shape:
        raise ShapeError(f"batchnorm grad_y shape {gy.shape} != {cache.x_hat.shape}")
    axes = _bn_axes(gy)
    m = float(np.prod([gy.shape[a] for a in axes]))
    state.shift.grad += gy.sum(axis=axes)
    state.scale.grad += (gy * cache.x_hat).sum(axis=axes)
    g_hat = gy * _bn_expand(state.scale.data, gy.ndim)
    # standard batch-statistics backward: centering and variance both contribute
    sum_g = g_hat.sum(axis=axes)
    sum_gx = (g_hat * cache.x_hat).sum(axis=axes)
    gx = (
        g_hat
        - _bn_expand(sum_g / m, gy.ndim)
        - cache.x_hat * _bn_expand(sum_gx / m, gy.ndim)
    ) * _bn_expand(cache.inv_std, gy.ndim)
    return gx


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """y = x @ w.T (+ b); x is (N, K_in), w is (K_out, K_in)."""
    x = as_f64(x)
    w = as_f64(w)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear expects 2-d x and w, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear input width {x.shape[1]} != weight width {w.shape[1]}")
    y = x @ w.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear bias shape {b.shape} != ({w.shape[0]},)")
        y = y + b
    return y


def linear_backward(
    grad_y: np.ndarray, x: np.ndarray, w: np.ndarray, with_bias: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    gy = as_f64(grad_y)
    if gy.shape != (x.shape[0], w.shape[0]):
        raise ShapeError(f"linear grad_y shape {gy.shape} != {(x.shape[0], w.shape[0])}")
    grad_x = gy @ w
    grad_w = gy.T @ x
    grad_b = gy.sum(axis=0) if with_bias else None
    return grad_x, grad_w, grad_b


def avgpool_forward(x: np.ndarray, kernel: int, stride: int | None = None) -> np.ndarray:
    x = as_f64(x)
    if x.ndim != 4:
        raise ShapeError(f"avgpool input must be (N,C,H,W), got ndim={x.ndim}")
    stride = kernel if stride is None else stride
    if kernel < 1 or stride < 1:
        raise ShapeError(f"avgpool kernel/stride must be >= 1, got {kernel}/{stride}")
    n, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"avgpool output would be {oh}x{ow} for input {h}x{w}")
    y = np.zeros((n, c, oh, ow), dtype=DTYPE)
    for i in range(kernel):
        for j in range(kernel):
            y += x[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride]
    return y / (kernel * kernel)


def avgpool_backward(
    grad_y: np.ndarray, in_shape: tuple[int, ...], kernel: int, stride: int | None = None
) -> np.ndarray:
    stride = kernel if stride is None else stride
    gy = as_f64(grad_y) / (kernel * kernel)
    n, c, oh, ow = gy.shape
    gx = np.zeros(in_shape, dtype=DTYPE)
    for i in range(kernel):
        for j in range(kernel):
            gx[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += gy
    return gx


def add_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_f64(a)
    b = as_f64(b)
    if a.shape != b.shape:
        raise ShapeError(f"add requires equal shapes, got {a.shape} and {b.shape}")
    return a + b


def add_backward(grad_y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy = as_f64(grad_y)
    return gy, gy.copy()
