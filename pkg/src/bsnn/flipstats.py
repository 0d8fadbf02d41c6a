"""Weight-sign flip telemetry and the analytic flip-probability model.

A flip is a sign change of a latent weight between two snapshots.  The
analytic model treats one plain SGD update w' = w - eta * g with
g ~ Normal(mu, sigma) and asks for the probability that w' crosses zero;
zero weights count as positive on both sides.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

_SQRT2 = math.sqrt(2.0)


def normal_cdf(z):
    """Standard normal CDF, elementwise; float in, float out for scalars."""
    if np.ndim(z) == 0:
        return 0.5 * math.erfc(-float(z) / _SQRT2)
    z = np.asarray(z, dtype=np.float64)
    out = np.array([0.5 * math.erfc(-v / _SQRT2) for v in z.ravel()])
    return out.reshape(z.shape)


def _normal_sf(z: float) -> float:
    """Upper tail 1 - CDF(z), computed without cancellation."""
    return 0.5 * math.erfc(z / _SQRT2)


@dataclass(frozen=True)
class FlipModelInput:
    """One (weight, step size, gradient moments) point of the flip model."""

    omega: float
    eta: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def flip_probability_analytic(omega: float, eta: float, mu: float, sigma: float) -> float:
    """P(sign flips in one step).  Positive weights flip when the update
    overshoots (gradient above omega/eta), negative ones when it undershoots;
    omega == 0 follows the positive branch."""
    point = FlipModelInput(omega, eta, mu, sigma)
    z = (point.omega / point.eta - point.mu) / point.sigma
    if point.omega >= 0.0:
        return _normal_sf(z)
    return normal_cdf(z)


@dataclass(frozen=True)
class MonteCarloResult:
    estimate: float
    stderr: float
    samples: int
    flips: int


def flip_probability_montecarlo(
    omega: float,
    eta: float,
    mu: float,
    sigma: float,
    samples: int = 1_000_000,
    seed: int = 0,
) -> MonteCarloResult:
    """Empirical flip frequency over `samples` independent SGD updates.

    The standard error uses the Agresti-Coull adjusted proportion so it stays
    positive when no flips (or only flips) are observed.
    """
    point = FlipModelInput(omega, eta, mu, sigma)
    if samples < 10_000:
        raise ValueError(f"samples must be >= 10000, got {samples}")
    rng = np.random.default_rng(seed)
    was_negative = point.omega < 0.0
    flips = 0
    remaining = samples
    chunk = 1_000_000
    while remaining > 0:
        n = min(chunk, remaining)
        g = point.mu + point.sigma * rng.standard_normal(n)
        w_next = point.omega - point.eta * g
        flips += int(np.count_nonzero((w_next < 0.0) != was_negative))
        remaining -= n
    est = flips / samples
    p_adj = (flips + 2.0) / (samples + 4.0)
    stderr = math.sqrt(p_adj * (1.0 - p_adj) / samples)
    return MonteCarloResult(estimate=est, stderr=stderr, samples=samples, flips=flips)


@dataclass(frozen=True)
class MonotonicityReport:
    mu_monotone: bool
    sigma_monotone_in_regime: bool
    checked_mu_pairs: int
    checked_sigma_pairs: int
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.mu_monotone and self.sigma_monotone_in_regime


def monotonicity_check(
    omega: float, eta: float, mu_grid, sigma_grid
) -> MonotonicityReport:
    """Exact (tolerance-free) directional checks of the analytic model.

    Along mu the probability must move strictly with the gradient mean: up
    for omega >= 0, down for omega < 0.  Along sigma the direction depends on
    which side of the mean the threshold omega/eta sits; pairs are only
    checked when both grid points sit strictly on the same side (the
    "in regime" subset), since the direction reverses across it.
    """
    mu_grid = sorted(float(m) for m in mu_grid)
    sigma_grid = sorted(float(s) for s in sigma_grid)
    if len(mu_grid) < 2 or len(sigma_grid) < 2:
        raise ValueError("need at least two mu and two sigma grid points")
    ratio = omega / eta
    positive = omega >= 0.0
    violations: list[str] = []
    mu_pairs = 0
    for s in sigma_grid:
        for lo, hi in zip(mu_grid, mu_grid[1:]):
            p_lo = flip_probability_analytic(omega, eta, lo, s)
            p_hi = flip_probability_analytic(omega, eta, hi, s)
            mu_pairs += 1
            wants_up = positive
            if (p_hi > p_lo) != wants_up or p_hi == p_lo:
                violations.append(
                    f"mu: P({lo},{s})={p_lo!r} vs P({hi},{s})={p_hi!r}"
                )
    sigma_pairs = 0
    # the regime is decided by which side of the mean the threshold sits on;
    # when rounding cannot resolve that sign the pair is boundary, not regime
    edge = 8.0 * np.finfo(np.float64).eps
    for m in mu_grid:
        side = ratio - m if positive else m - ratio
        if abs(side) <= edge * max(1.0, abs(ratio), abs(m)):
            continue  # threshold on the mean: probability is flat at 1/2
        for lo, hi in zip(sigma_grid, sigma_grid[1:]):
            p_lo = flip_probability_analytic(omega, eta, m, lo)
            p_hi = flip_probability_analytic(omega, eta, m, hi)
            sigma_pairs += 1
            wants_up = side > 0.0
            if (p_hi > p_lo) != wants_up or p_hi == p_lo:
                violations.append(
                    f"sigma: P({m},{lo})={p_lo!r} vs P({m},{hi})={p_hi!r}"
                )
    return MonotonicityReport(
        mu_monotone=not any(v.startswith("mu") for v in violations),
        sigma_monotone_in_regime=not any(v.startswith("sigma") for v in violations),
        checked_mu_pairs=mu_pairs,
        checked_sigma_pairs=sigma_pairs,
        violations=tuple(violations),
    )


@dataclass(frozen=True)
class SignSnapshot:
    """Packed sign bitmaps (bit 1 = weight >= 0) for a set of named tensors."""

    epoch: int
    layers: dict[str, np.ndarray]
    counts: dict[str, int]


def take_sign_snapshot(epoch: int, named_weights: dict[str, np.ndarray]) -> SignSnapshot:
    layers = {}
    counts = {}
    for name, w in named_weights.items():
        w = np.asarray(w)
        layers[name] = np.packbits(w.ravel() >= 0.0)
        counts[name] = w.size
    return SignSnapshot(epoch=epoch, layers=layers, counts=counts)


def flip_ratio(a: SignSnapshot, b: SignSnapshot) -> float:
    """Fraction of weights whose sign differs between two snapshots."""
    if a.layers.keys() != b.layers.keys():
        raise ShapeError(
            f"snapshots track different layers: {sorted(a.layers)} vs {sorted(b.layers)}"
        )
    flipped = 0
    total = 0
    for name in a.layers:
        if a.counts[name] != b.counts[name]:
            raise ShapeError(
                f"layer {name!r} size changed: {a.counts[name]} vs {b.counts[name]}"
            )
        # packbits pads with zero bits; identical padding cancels in the xor
        flipped += int(np.unpackbits(a.layers[name] ^ b.layers[name]).sum())
        total += a.counts[name]
    if total == 0:
        raise ShapeError("snapshots contain no weights")
    return flipped / total


@dataclass
class GradientStats:
    """Streaming count/mean/variance accumulator (Welford), mergeable."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            return
        other = GradientStats(
            count=n, mean=float(values.mean()), m2=float(values.var()) * n
        )
        merged = self.merge(other)
        self.count, self.mean, self.m2 = merged.count, merged.mean, merged.m2

    def merge(self, other: "GradientStats") -> "GradientStats":
        if self.count == 0:
            return GradientStats(other.count, other.mean, other.m2)
        if other.count == 0:
            return GradientStats(self.count, self.mean, self.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return GradientStats(count=n, mean=mean, m2=m2)

    @property
    def variance(self) -> float:
        """Population variance; zero until two values have been seen."""
        if self.count < 1:
            return 0.0
        return self.m2 / self.count


def collect_gradient_stats(grad_seq: np.ndarray) -> list[GradientStats]:
    """One GradientStats per leading-axis slice (e.g. per timestep)."""
    grad_seq = np.asarray(grad_seq, dtype=np.float64)
    if grad_seq.ndim < 1:
        raise ShapeError("collect_gradient_stats expects a (T, ...) array")
    out = []
    for t in range(grad_seq.shape[0]):
        st = GradientStats()
        st.update(grad_seq[t])
        out.append(st)
    return out
