"""Spike-driven operation counting and energy / model-size estimates.

Convolutions fed by spike tensors cost one accumulate per (spike, reached
output) pair; the always-full-precision layers (input stem, readout) and
the gate's elementwise multiply cost multiply-accumulates.  Fan-out is
counted exactly per input position, so border effects are included.
"""

from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .errors import ConfigError, ShapeError
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
)
from .ops import ConvSpec

PICO_TO_MILLI = 1e-9


@dataclass(frozen=True)
class EnergyModel:
    """Per-operation energies in picojoules (45 nm process figures)."""

    pj_per_accumulate: float = 0.9
    pj_per_mac: float = 4.6

    def __post_init__(self):
        if self.pj_per_accumulate <= 0 or self.pj_per_mac <= 0:
            raise ConfigError("per-operation energies must be positive")


def estimate_energy(sops: float, macs: float, model: EnergyModel) -> float:
    """Energy in millijoules for the given operation counts."""
    return (sops * model.pj_per_accumulate + macs * model.pj_per_mac) * PICO_TO_MILLI


def fanout_counts(length: int, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Per-position count of output rows each input row reaches (1-d)."""
    out_len = (length + 2 * padding - kernel) // stride + 1
    if out_len < 1:
        raise ShapeError(
            f"no output positions for length {length}, kernel {kernel}, "
            f"stride {stride}, padding {padding}"
        )
    counts = np.zeros(length, dtype=np.int64)
    for y in range(length):
        lo = -(-(y + padding - kernel + 1) // stride)  # ceil division
        hi = (y + padding) // stride
        lo = max(lo, 0)
        hi = min(hi, out_len - 1)
        counts[y] = hi - lo + 1 if hi >= lo else 0
    return counts


def fanout_map(h: int, w: int, spec: ConvSpec) -> np.ndarray:
    """(H, W) array: connections each input position feeds, all channels."""
    rows = fanout_counts(h, spec.kernel_h, spec.stride, spec.padding)
    cols = fanout_counts(w, spec.kernel_w, spec.stride, spec.padding)
    return spec.out_channels * rows[:, None] * cols[None, :]


def count_sops(spike_counts_hw: np.ndarray, spec: ConvSpec) -> int:
    """Exact accumulate count given per-position spike totals (H, W)."""
    fmap = fanout_map(spike_counts_hw.shape[0], spike_counts_hw.shape[1], spec)
    return int(np.round(float((spike_counts_hw * fmap).sum())))


def conv_macs(spec: ConvSpec, h: int, w: int) -> int:
    """Dense multiply count for one (sample, timestep) through a conv."""
    oh, ow = spec.out_hw(h, w)
    return spec.out_channels * oh * ow * spec.in_channels * spec.kernel_h * spec.kernel_w


@dataclass
class ProfileRow:
    layer: str
    type: str
    firing_rate: float | None  # output rate for fire layers, input rate for spike-fed convs
    sops: float  # per sample
    macs: float  # per sample
    param_bits: int


@dataclass
class ProfileReport:
    rows: list[ProfileRow] = field(default_factory=list)
    samples: int = 0
    total_sops: float = 0.0  # per sample
    total_macs: float = 0.0
    total_param_bits: int = 0
    energy_mj: float = 0.0
    fp_equivalent_bits: int = 0

    @property
    def size_ratio(self) -> float:
        """Full-precision bits over actual bits (compression factor)."""
        return self.fp_equivalent_bits / self.total_param_bits


def layer_param_bits(lay) -> tuple[int, int]:
    """(actual bits, bits if every trainable weight were 32-bit float).

    Binary convs store one sign bit per weight plus one 32-bit scale per
    output channel; batch-norm and gate parameters are kept at 64 bits.
    """
    if isinstance(lay, BinaryConvLayer):
        n = lay.latent.data.size
        actual = n + 32 * lay.spec.out_channels
        return actual, 32 * n
    if isinstance(lay, ConvLayer):
        n = lay.weight.data.size
        return 32 * n, 32 * n
    if isinstance(lay, LinearLayer):
        n = lay.weight.data.size + lay.bias.data.size
        return 32 * n, 32 * n
    if isinstance(lay, BatchNormLayer):
        n = lay.state.scale.data.size + lay.state.shift.data.size
        return 64 * n, 64 * n
    if isinstance(lay, GateLayer):
        n = lay.alpha.data.size
        return 64 * n, 64 * n
    return 0, 0


def model_size_report(net: Network) -> tuple[int, int, list[tuple[str, int]]]:
    """(total bits, fp-equivalent bits, per-layer [(name, bits)])."""
    total = 0
    fp_total = 0
    rows = []
    for lay in net.layers:
        bits, fp_bits = layer_param_bits(lay)
        total += bits
        fp_total += fp_bits
        rows.append((lay.name, bits))
    return total, fp_total, rows


def _is_spike_fed(net: Network, index: int) -> bool:
    """A conv costs accumulates when the layer feeding it emits spikes."""
    return index > 0 and isinstance(net.layers[index - 1], LIFLayer)


def measure_firing_rates(
    net: Network,
    dataset: data_mod.Dataset,
    batch_size: int = 64,
    encoding: str = "constant",
    seed: int = 0,
) -> dict[str, float]:
    """Mean output firing rate per fire layer over an inference sweep."""
    report = profile_network(net, dataset, EnergyModel(), batch_size, encoding, seed)
    return {
        row.layer: row.firing_rate
        for row in report.rows
        if row.type == "lif" and row.firing_rate is not None
    }


def profile_network(
    net: Network,
    dataset: data_mod.Dataset,
    model: EnergyModel,
    batch_size: int = 64,
    encoding: str = "constant",
    seed: int = 0,
) -> ProfileReport:
    """Inference sweep over `dataset` collecting exact operation counts.

    SOP totals come from the actual spike tensors entering each spike-fed
    layer; MAC totals are dense counts.  Per-sample figures divide by the
    dataset size.
    """
    n = dataset.images.shape[0]
    if n == 0:
        raise ConfigError("cannot profile an empty dataset")
    t_steps = net.cfg.timesteps
    rng = np.random.default_rng(seed)
    spike_totals: dict[int, np.ndarray] = {}  # conv index -> (H, W) counts
    lif_sum: dict[int, float] = {}
    lif_cnt: dict[int, int] = {}
    checked_binary: set[int] = set()
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        if encoding == "constant":
            x = data_mod.encode_constant(dataset.images[sl], t_steps)
        else:
            x = data_mod.encode_bernoulli(dataset.images[sl], t_steps, rng)
        net.forward(x, training=False)
        outputs = net._outputs
        for i, lay in enumerate(net.layers):
            inp = x if i == 0 else outputs[i - 1]
            if isinstance(lay, (ConvLayer, BinaryConvLayer)) and _is_spike_fed(net, i):
                if i not in checked_binary:
                    vals = np.unique(inp)
                    if not np.isin(vals, (0.0, 1.0)).all():
                        raise ShapeError(
                            f"layer {lay.name} counted as spike-fed but its input "
                            f"contains non-binary values"
                        )
                    checked_binary.add(i)
                counts = inp.sum(axis=(0, 1, 2))  # over T, N, C
                if i in spike_totals:
                    spike_totals[i] += counts
                else:
                    spike_totals[i] = counts
            if isinstance(lay, LIFLayer):
                lif_sum[i] = lif_sum.get(i, 0.0) + float(outputs[i].sum())
                lif_cnt[i] = lif_cnt.get(i, 0) + outputs[i].size
    report = ProfileReport(samples=n)
    cur = net.cfg.input_shape
    for i, lay in enumerate(net.layers):
        sops = 0.0
        macs = 0.0
        rate = None
        if isinstance(lay, (ConvLayer, BinaryConvLayer)):
            ih, iw = cur[1], cur[2]
            if i in spike_totals:
                total_sops = count_sops(spike_totals[i], lay.spec)
                sops = total_sops / n
                rate = float(spike_totals[i].sum()) / (n * t_steps * cur[0] * ih * iw)
            else:
                macs = conv_macs(lay.spec, ih, iw) * t_steps
            oh, ow = lay.spec.out_hw(ih, iw)
            cur = (lay.spec.out_channels, oh, ow)
        elif isinstance(lay, LinearLayer):
            macs = lay.weight.data.size * t_steps
            cur = (lay.weight.data.shape[0], 1, 1)
        elif isinstance(lay, GateLayer):
            macs = cur[0] * cur[1] * cur[2] * t_steps
        elif isinstance(lay, AvgPoolLayer):
            oh = (cur[1] - lay.kernel) // lay.stride + 1
            ow = (cur[2] - lay.kernel) // lay.stride + 1
            cur = (cur[0], oh, ow)
        elif isinstance(lay, LIFLayer):
            rate = lif_sum[i] / lif_cnt[i] if lif_cnt.get(i) else 0.0
        elif isinstance(lay, (SkipAddLayer, BatchNormLayer)):
            pass
        bits, fp_bits = layer_param_bits(lay)
        report.rows.append(
            ProfileRow(
                layer=lay.name,
                type=lay.kind,
                firing_rate=rate,
                sops=sops,
                macs=float(macs),
                param_bits=bits,
            )
        )
        report.total_sops += sops
        report.total_macs += float(macs)
        report.total_param_bits += bits
        report.fp_equivalent_bits += fp_bits
    report.energy_mj = estimate_energy(report.total_sops, report.total_macs, model)
    return report
