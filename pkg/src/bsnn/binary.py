"""Channel-wise weight binarization and its straight-through backward."""

import numpy as np

from .errors import ShapeError
from .ops import ConvSpec, as_f64, conv2d_backward, conv2d_forward


def binarize(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split conv weights (Cout,Cin,kh,kw) into signs (+-1) and per-output-channel
    scales gamma[c] = mean |w[c]|.  Zero entries map to +1."""
    w = as_f64(w)
    if w.ndim != 4:
        raise ShapeError(f"binarize expects (Cout,Cin,kh,kw) weights, got ndim={w.ndim}")
    signs = np.where(w < 0.0, -1.0, 1.0)
    gamma = np.abs(w).mean(axis=(1, 2, 3))
    return signs, gamma


def effective_weights(w: np.ndarray) -> np.ndarray:
    """The binarized weights gamma * sign(w) actually applied in the forward."""
    signs, gamma = binarize(w)
    return signs * gamma[:, None, None, None]


def binary_conv_forward(
    x: np.ndarray, latent_w: np.ndarray, spec: ConvSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convolve with sign weights, then scale each output channel by gamma.

    Returns (y, signs, gamma); signs/gamma feed the backward pass.
    """
    signs, gamma = binarize(latent_w)
    if signs.shape != spec.weight_shape:
        raise ShapeError(f"latent weight shape {signs.shape} != spec {spec.weight_shape}")
    y = conv2d_forward(x, signs, spec) * gamma[None, :, None, None]
    return y, signs, gamma


def ste_backward(
    grad_wb: np.ndarray, latent_w: np.ndarray, gamma: np.ndarray
) -> np.ndarray:
    """Map the gradient w.r.t. the binarized weights back onto the latent weights.

    gamma is treated as a constant; entries with |latent| > 1 are masked out
    (the boundary |latent| == 1 passes through).
    """
    grad_wb = as_f64(grad_wb)
    latent_w = as_f64(latent_w)
    if grad_wb.shape != latent_w.shape:
        raise ShapeError(f"grad_wb shape {grad_wb.shape} != latent {latent_w.shape}")
    mask = (np.abs(latent_w) <= 1.0).astype(np.float64)
    return grad_wb * gamma[:, None, None, None] * mask


def binary_conv_backward(
    grad_y: np.ndarray,
    x: np.ndarray,
    latent_w: np.ndarray,
    signs: np.ndarray,
    gamma: np.ndarray,
    spec: ConvSpec,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_latent, grad_wb).

    grad_wb is the gradient w.r.t. the effective binarized weights; it is the
    quantity update-magnitude analyses consume.  grad_latent applies the
    straight-through rule to it.
    """
    eff = signs * gamma[:, None, None, None]
    grad_x, grad_wb = conv2d_backward(grad_y, x, eff, spec)
    grad_latent = ste_backward(grad_wb, latent_w, gamma)
    return grad_x, grad_latent, grad_wb
