import numpy as np
import pytest

from bsnn import gradcheck as gc


class TestFdGradient:
    def test_exact_on_quadratic(self, rng):
        # central differences are exact for quadratics up to rounding
        a = rng.standard_normal((4, 4))
        a = a + a.T
        x0 = rng.standard_normal(4)
        fd = gc.fd_gradient(lambda v: float(0.5 * v @ a @ v), x0.copy())
        assert gc.rel_err(fd, a @ x0) < 1e-9

    def test_leaves_input_unchanged(self, rng):
        x = rng.standard_normal((3, 3))
        before = x.copy()
        gc.fd_gradient(lambda v: float((v ** 2).sum()), x)
        assert np.array_equal(x, before)


class TestRelErr:
    def test_zero_for_identical(self, rng):
        x = rng.standard_normal(10)
        assert gc.rel_err(x, x.copy()) == 0.0

    def test_scale_invariant_for_large_values(self):
        a = np.array([1e8])
        b = np.array([1e8 + 1.0])
        assert gc.rel_err(a, b) == pytest.approx(1e-8, rel=1e-3)

    def test_shape_mismatch_raises(self):
        from bsnn.errors import ConfigError

        with pytest.raises(ConfigError):
            gc.rel_err(np.zeros(3), np.zeros(4))


class TestVar:
    def grad_of(self, build, x0):
        """Backprop a scalar graph and compare to finite differences."""
        leaf = gc.Var(x0)
        root = build(leaf)
        gc.backprop(root)
        got = leaf.grad
        fd = gc.fd_gradient(lambda v: build(gc.Var(float(v[0]))).value,
                            np.array([x0]))
        return got, float(fd[0])

    @pytest.mark.parametrize("build,x0", [
        (lambda x: (x * x * x) + x * 2.0, 0.7),
        (lambda x: (x + 1.5) * (x - 0.25) / (x * x + 1.0), 0.3),
        (lambda x: (2.0 - x) * (3.0 / x), 1.7),
        (lambda x: x.exp() * x.log() + x.sqrt(), 1.9),
        (lambda x: x.sigmoid() * (1.0 - x.sigmoid()), 0.4),
        (lambda x: (-x).exp() / (x + 2.0), 0.9),
        (lambda x: 2.0 / (1.0 / x), 0.6),
    ])
    def test_derivatives_match_finite_differences(self, build, x0):
        got, want = self.grad_of(build, x0)
        assert got == pytest.approx(want, rel=1e-6, abs=1e-8)

    def test_fanout_accumulates(self):
        x = gc.Var(0.5)
        y = x * x + x * 3.0  # dy/dx = 2x + 3
        gc.backprop(y)
        assert x.grad == pytest.approx(4.0)

    def test_deep_chain_iterative(self):
        # thousands of nodes: the traversal must not hit recursion limits
        x = gc.Var(1.0)
        y = x
        for _ in range(5000):
            y = y * 1.0001
        gc.backprop(y)
        assert x.grad == pytest.approx(1.0001 ** 5000, rel=1e-9)

    def test_repeated_backprop_resets_grads(self):
        x = gc.Var(2.0)
        y = x * x
        gc.backprop(y)
        first = x.grad
        gc.backprop(y)
        assert x.grad == first


class TestSurrogateNodes:
    def test_spike_value_is_binary_with_window_grad(self):
        s = gc.spike(gc.Var(1.2), v_th=1.0, beta=1.0)
        assert s.value == 1.0
        x = gc.Var(1.2)
        out = gc.spike(x, 1.0, 1.0) * 3.0
        gc.backprop(out)
        assert x.grad == pytest.approx(3.0 * (1.0 - 0.2))

    def test_spike_outside_window_has_zero_grad(self):
        x = gc.Var(3.0)
        out = gc.spike(x, 1.0, 1.0)
        gc.backprop(out)
        assert out.value == 1.0 and x.grad == 0.0

    def test_ste_sign_value_and_mask(self):
        w = gc.Var(-0.4)
        out = gc.ste_sign(w, gamma=0.7)
        assert out.value == -0.7
        gc.backprop(out)
        assert w.grad == pytest.approx(0.7)
        w2 = gc.Var(1.5)
        out2 = gc.ste_sign(w2, gamma=0.7)
        gc.backprop(out2)
        assert out2.value == 0.7 and w2.grad == 0.0

    def test_reset_detached_blocks_spike_path(self):
        u = gc.Var(1.3)
        s = gc.spike(u, 1.0, 1.0)
        r = gc.reset_detached(u, s)
        gc.backprop(r)
        # value: u * (1 - s) = 0; grad treats s as constant: d/du = 1 - s = 0
        assert r.value == 0.0
        assert u.grad == 0.0

    def test_gated_approx_treats_gate_as_constant(self):
        x = gc.Var(2.0)
        g = gc.Var(0.6)
        out = gc.gated_approx(x, g)
        gc.backprop(out)
        assert out.value == pytest.approx(1.2)
        assert x.grad == pytest.approx(0.6)
        assert g.grad == pytest.approx(2.0)  # alpha path stays exact


class TestSuiteSmoke:
    def test_linear_fd_suite(self):
        res = gc._fd_check_linear(np.random.default_rng(0))
        assert res.passed, res

    def test_fp_tape_suite(self):
        net, x, labels = gc._tiny_spiking_net("fp", seed=123)
        res = gc._tape_check("fp/tape", net, x, labels)
        assert res.passed, res
        assert res.max_err < gc.TAPE_TOL
