import os
import subprocess
import sys

import numpy as np
import pytest

from bsnn import kernels
from bsnn.kernels import numpy_impl

numba_impl = pytest.importorskip("bsnn.kernels.numba_impl")


CASES = [
    # (n, c, h, w, oc, kh, kw, stride, pad)
    (2, 3, 6, 6, 4, 3, 3, 1, 1),
    (1, 2, 7, 5, 3, 3, 2, 2, 0),
    (3, 1, 4, 4, 2, 2, 2, 2, 1),
]


def padded(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


@pytest.mark.parametrize("case", CASES)
def test_backends_agree(case, rng):
    n, c, h, w, oc, kh, kw, stride, pad = case
    x = padded(rng.standard_normal((n, c, h, w)), pad)
    wt = rng.standard_normal((oc, c, kh, kw))
    y_np = numpy_impl.conv2d_forward(x, wt, stride)
    y_nb = numba_impl.conv2d_forward(x, wt, stride)
    assert np.allclose(y_np, y_nb, rtol=1e-12, atol=1e-12)

    gy = rng.standard_normal(y_np.shape)
    gw_np = numpy_impl.conv2d_grad_weights(gy, x, kh, kw, stride)
    gw_nb = numba_impl.conv2d_grad_weights(gy, x, kh, kw, stride)
    assert np.allclose(gw_np, gw_nb, rtol=1e-12, atol=1e-12)

    gx_np = numpy_impl.conv2d_grad_input(gy, wt, stride, x.shape[2], x.shape[3])
    gx_nb = numba_impl.conv2d_grad_input(gy, wt, stride, x.shape[2], x.shape[3])
    assert np.allclose(gx_np, gx_nb, rtol=1e-12, atol=1e-12)


def test_numba_backend_is_deterministic(rng):
    x = rng.standard_normal((2, 2, 5, 5))
    wt = rng.standard_normal((3, 2, 3, 3))
    a = numba_impl.conv2d_forward(x, wt, 1)
    b = numba_impl.conv2d_forward(x, wt, 1)
    assert np.array_equal(a, b)


def test_registry_lists_both_backends():
    names = kernels.available_backends()
    assert "numpy" in names and "numba" in names


def test_set_backend_roundtrip():
    before = kernels.get_backend()
    try:
        kernels.set_backend("numpy")
        assert kernels.get_backend() == "numpy"
        kernels.set_backend("numba")
        assert kernels.get_backend() == "numba"
    finally:
        kernels.set_backend(before)


def test_set_backend_rejects_unknown():
    from bsnn.errors import ConfigError

    with pytest.raises(ConfigError):
        kernels.set_backend("cuda")


def test_env_flag_selects_backend():
    code = "import bsnn.kernels as k; print(k.get_backend())"
    for name in ("numpy", "numba"):
        env = dict(os.environ, BSNN_BACKEND=name)
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == name


def test_env_flag_rejects_unknown():
    env = dict(os.environ, BSNN_BACKEND="gpu")
    out = subprocess.run(
        [sys.executable, "-c", "import bsnn.kernels"],
        env=env,
        capture_output=True,
        text=True,
    )
    assert out.returncode != 0
    assert "BSNN_BACKEND" in out.stderr
