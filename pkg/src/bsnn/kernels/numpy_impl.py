"""Pure-numpy convolution kernels (im2col style, no compilation)."""

import numpy as np

NAME = "numpy"


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view of all kernel windows, shape (N, C, OH, OW, kh, kw)."""
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d_forward(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    win = _windows(xp, w.shape[2], w.shape[3], stride)
    y = np.einsum("nchwij,ocij->nohw", win, w)
    return np.ascontiguousarray(y)


def conv2d_grad_weights(
    grad_y: np.ndarray, xp: np.ndarray, kh: int, kw: int, stride: int
) -> np.ndarray:
    win = _windows(xp, kh, kw, stride)
    gw = np.einsum("nohw,nchwij->ocij", grad_y, win)
    return np.ascontiguousarray(gw)


def conv2d_grad_input(
    grad_y: np.ndarray, w: np.ndarray, stride: int, hp: int, wp: int
) -> np.ndarray:
    n, _, oh, ow = grad_y.shape
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gx = np.zeros((n, cin, hp, wp), dtype=np.float64)
    # (N, Cin, kh, kw, OH, OW) contributions scattered back window by window
    cols = np.einsum("nohw,ocij->ncijhw", grad_y, w)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += cols[
                :, :, i, j
            ]
    return gx
