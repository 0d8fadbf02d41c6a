"""Layered sequence networks built from declarative layer specs.

Data flows as (T, N, C, H, W) sequences.  Layers that have no temporal
coupling fold T into the batch axis; the leaky-fire and gate layers act on
the time axis directly.  The readout averages the final linear layer's
output over time.  Skip-add layers reference the output of an earlier
layer by index; the backward pass routes gradients accordingly.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import agmm, binary, neuron, ops
from .errors import ConfigError, NumericsError, ShapeError

VARIANTS = ("fp", "binary", "binary-agmm")
LAYER_KINDS = (
    "conv",
    "binary-conv",
    "batchnorm",
    "lif",
    "agmm",
    "avgpool",
    "linear",
    "skip-add",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    features: int = 0
    source: int = -1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkConfig:
    variant: str
    timesteps: int
    input_shape: tuple[int, int, int]  # (C, H, W)
    n_classes: int
    layer_specs: tuple[LayerSpec, ...]
    lif: neuron.LIFConfig = neuron.LIFConfig()
    seed: int = 0
    agmm_backward: str = "exact"
    gate_per_sample: bool = True
    latent_clamp: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.agmm_backward not in ("exact", "approx"):
            raise ConfigError(f"agmm_backward must be exact|approx, got {self.agmm_backward!r}")
        specs = self.layer_specs
        if not specs or specs[0].kind != "conv" or specs[-1].kind != "linear":
            raise ConfigError(
                "layer_specs must start with a full-precision conv and end with linear"
            )
        for i, s in enumerate(specs):
            if s.kind == "binary-conv" and self.variant == "fp":
                raise ConfigError("fp variant cannot contain binary-conv layers")
            if s.kind == "agmm" and self.variant != "binary-agmm":
                raise ConfigError("agmm layers require the binary-agmm variant")
            if s.kind == "skip-add" and not (0 <= s.source < i):
                raise ConfigError(
                    f"skip-add at position {i} must reference an earlier layer, got {s.source}"
                )


class Layer:
    kind = "base"

    def __init__(self, name: str):
        self.name = name
        self.flip_tracked = False

    def params(self) -> list[ops.Parameter]:
        return []

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Non-trainable arrays that belong in checkpoints (after params)."""
        return []

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def fold_time(x: np.ndarray) -> np.ndarray:
    return x.reshape((x.shape[0] * x.shape[1],) + x.shape[2:])


def unfold_time(x: np.ndarray, t: int) -> np.ndarray:
    return x.reshape((t, x.shape[0] // t) + x.shape[1:])


class ConvLayer(Layer):
    kind = "conv"

    def __init__(self, name: str, spec: ops.ConvSpec, rng: np.random.Generator):
        super().__init__(name)
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.weight_shape)
        self.weight = ops.Parameter(f"{name}.weight", w)
        self._x = None
        self._t = 0
        self.collect_per_t = False
        self.last_per_t_grads: list[np.ndarray] | None = None

    def params(self):
        return [self.weight]

    def forward(self, x, training):
        self._t = x.shape[0]
        xf = fold_time(x)
        self._x = xf
        y = ops.conv2d_forward(xf, self.weight.data, self.spec)
        return unfold_time(y, self._t)

    def backward(self, grad):
        gf = fold_time(grad)
        gx, gw = ops.conv2d_backward(gf, self._x, self.weight.data, self.spec)
        self.weight.grad += gw
        if self.collect_per_t:
            n = self._x.shape[0] // self._t
            self.last_per_t_grads = [
                ops.conv2d_grad_weights_only(
                    gf[t * n : (t + 1) * n], self._x[t * n : (t + 1) * n], self.spec
                )
                for t in range(self._t)
            ]
        return unfold_time(gx, self._t)


class BinaryConvLayer(Layer):
    kind = "binary-conv"

    def __init__(self, name: str, spec: ops.ConvSpec, rng: np.random.Generator, clamp: bool):
        super().__init__(name)
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.weight_shape)
        self.latent = ops.Parameter(f"{name}.latent", w)
        if clamp:
            self.latent.clamp = (-1.0, 1.0)
        self._x = None
        self._t = 0
        self._signs = None
        self._gamma = None
        self.collect_per_t = False
        self.last_per_t_grads: list[np.ndarray] | None = None

    def params(self):
        return [self.latent]

    def forward(self, x, training):
        self._t = x.shape[0]
        xf = fold_time(x)
        self._x = xf
        y, self._signs, self._gamma = binary.binary_conv_forward(
            xf, self.latent.data, self.spec
        )
        return unfold_time(y, self._t)

    def backward(self, grad):
        gf = fold_time(grad)
        gx, grad_latent, _ = binary.binary_conv_backward(
            gf, self._x, self.latent.data, self._signs, self._gamma, self.spec
        )
        self.latent.grad += grad_latent
        if self.collect_per_t:
            self.last_per_t_grads = self._per_timestep_latent_grads(gf)
        return unfold_time(gx, self._t)

    def _per_timestep_latent_grads(self, grad_folded: np.ndarray) -> list[np.ndarray]:
        """Observational per-timestep split of the latent-weight gradient.

        The training gradient above is computed over the folded batch; this
        recomputes the same quantity one timestep at a time (their sum equals
        the folded result up to addition order).
        """
        n = self._x.shape[0] // self._t
        out = []
        for t in range(self._t):
            sl = slice(t * n, (t + 1) * n)
            _, grad_lat_t, _ = binary.binary_conv_backward(
                grad_folded[sl], self._x[sl], self.latent.data,
                self._signs, self._gamma, self.spec,
            )
            out.append(grad_lat_t)
        return out


class BatchNormLayer(Layer):
    kind = "batchnorm"

    def __init__(self, name: str, channels: int):
        super().__init__(name)
        self.state = ops.BatchNormState.create(channels, name=name)
        self._cache = None
        self._t = 0

    def params(self):
        return [self.state.scale, self.state.shift]

    def state_tensors(self):
        return [
            (f"{self.name}.running_mean", self.state.running_mean),
            (f"{self.name}.running_var", self.state.running_var),
        ]

    def forward(self, x, training):
        self._t = x.shape[0]
        self.state.training = training
        y, self._cache = ops.batchnorm_forward(fold_time(x), self.state)
        return unfold_time(y, self._t)

    def backward(self, grad):
        gx = ops.batchnorm_backward(fold_time(grad), self._cache, self.state)
        return unfold_time(gx, self._t)


class LIFLayer(Layer):
    kind = "lif"

    def __init__(self, name: str, cfg: neuron.LIFConfig):
        super().__init__(name)
        self.cfg = cfg
        self.cache: neuron.LIFCache | None = None
        self.spike_sum = 0.0
        self.spike_count = 0

    def forward(self, x, training):
        spikes, self.cache = neuron.lif_forward(x, self.cfg)
        self.spike_sum += float(spikes.sum())
        self.spike_count += spikes.size
        return spikes

    def backward(self, grad):
        return neuron.lif_backward(grad, self.cache, self.cfg)

    def reset_firing_counters(self):
        self.spike_sum = 0.0
        self.spike_count = 0

    @property
    def firing_rate(self) -> float:
        return self.spike_sum / self.spike_count if self.spike_count else 0.0


class GateLayer(Layer):
    kind = "agmm"

    def __init__(self, name: str, timesteps: int, backward_rule: str, per_sample: bool):
        super().__init__(name)
        self.alpha = ops.Parameter(f"{name}.alpha", np.ones(timesteps))
        self.backward_rule = backward_rule
        self.per_sample = per_sample
        self._cache: agmm.GateCache | None = None
        self.collect_scaling = False
        self.last_scaling_rows: list[agmm.GateScalingRow] | None = None

    def params(self):
        return [self.alpha]

    def forward(self, x, training):
        y, self._cache = agmm.gate_forward(x, self.alpha.data, self.per_sample)
        return y

    def backward(self, grad):
        if self.collect_scaling:
            self.last_scaling_rows = agmm.gradient_scaling_report(grad, self._cache)
        fn = (
            agmm.gate_backward_exact
            if self.backward_rule == "exact"
            else agmm.gate_backward_approx
        )
        gx, ga = fn(grad, self._cache, self.alpha.data)
        self.alpha.grad += ga
        return gx

    @property
    def gate_means(self) -> np.ndarray:
        """Mean gate per timestep for the most recent forward."""
        if self._cache is None:
            raise ConfigError("gate_means read before any forward pass")
        g = self._cache.gates
        return g.mean(axis=1) if g.ndim == 2 else g.copy()


class AvgPoolLayer(Layer):
    kind = "avgpool"

    def __init__(self, name: str, kernel: int, stride: int):
        super().__init__(name)
        self.kernel = kernel
        self.stride = stride
        self._in_shape = None
        self._t = 0

    def forward(self, x, training):
        self._t = x.shape[0]
        xf = fold_time(x)
        self._in_shape = xf.shape
        return unfold_time(ops.avgpool_forward(xf, self.kernel, self.stride), self._t)

    def backward(self, grad):
        gx = ops.avgpool_backward(fold_time(grad), self._in_shape, self.kernel, self.stride)
        return unfold_time(gx, self._t)


class LinearLayer(Layer):
    kind = "linear"

    def __init__(self, name: str, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__(name)
        w = rng.normal(0.0, np.sqrt(2.0 / in_features), size=(out_features, in_features))
        self.weight = ops.Parameter(f"{name}.weight", w)
        self.bias = ops.Parameter(f"{name}.bias", np.zeros(out_features))
        self._x = None
        self._in_shape = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, training):
        self._in_shape = x.shape
        xf = x.reshape(x.shape[0] * x.shape[1], -1)
        self._x = xf
        y = ops.linear_forward(xf, self.weight.data, self.bias.data)
        return y.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, grad):
        gf = grad.reshape(grad.shape[0] * grad.shape[1], -1)
        gx, gw, gb = ops.linear_backward(gf, self._x, self.weight.data, with_bias=True)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx.reshape(self._in_shape)


class SkipAddLayer(Layer):
    kind = "skip-add"

    def __init__(self, name: str, source: int):
        super().__init__(name)
        self.source = source

    def forward(self, x, training):  # pragma: no cover - handled by Network
        raise NotImplementedError("skip-add is evaluated by the network graph")

    def backward(self, grad):  # pragma: no cover - handled by Network
        raise NotImplementedError("skip-add is evaluated by the network graph")


class Network:
    """Executable layer graph with a time-averaged linear readout."""

    def __init__(self, cfg: NetworkConfig, layers: list[Layer]):
        self.cfg = cfg
        self.layers = layers
        self._outputs: list[np.ndarray] | None = None

    def parameters(self) -> list[ops.Parameter]:
        out = []
        for lay in self.layers:
            out.extend(lay.params())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def named_sign_weights(self) -> dict[str, np.ndarray]:
        """Latent weights of the flip-tracked layers, keyed by layer name."""
        out = {}
        for lay in self.layers:
            if lay.flip_tracked:
                w = lay.latent if isinstance(lay, BinaryConvLayer) else lay.weight
                out[lay.name] = w.data
        return out

    def forward(self, x_seq: np.ndarray, training: bool = True) -> np.ndarray:
        """x_seq is (T, N, C, H, W); returns logits (N, n_classes)."""
        t = self.cfg.timesteps
        if x_seq.ndim != 5 or x_seq.shape[0] != t:
            raise ShapeError(
                f"input must be ({t}, N, C, H, W), got {x_seq.shape}"
            )
        if x_seq.shape[2:] != self.cfg.input_shape:
            raise ShapeError(
                f"input feature shape {x_seq.shape[2:]} != config {self.cfg.input_shape}"
            )
        outputs: list[np.ndarray] = []
        h = ops.as_f64(x_seq)
        for i, lay in enumerate(self.layers):
            if isinstance(lay, SkipAddLayer):
                src = outputs[lay.source]
                if src.shape != h.shape:
                    raise ShapeError(
                        f"skip-add {lay.name}: source shape {src.shape} != {h.shape}"
                    )
                h = h + src
            else:
                h = lay.forward(h, training)
            if not np.isfinite(h).all():
                raise NumericsError(
                    f"non-finite values leaving layer {i} ({lay.name}) "
                    f"[{lay.kind}]"
                )
            outputs.append(h)
        self._outputs = outputs
        return h.mean(axis=0)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Propagate d(loss)/d(logits); returns d(loss)/d(input sequence)."""
        if self._outputs is None:
            raise ConfigError("backward called before forward")
        t = self.cfg.timesteps
        last = self._outputs[-1]
        if grad_logits.shape != last.shape[1:]:
            raise ShapeError(
                f"grad_logits shape {grad_logits.shape} != {last.shape[1:]}"
            )
        g = np.broadcast_to(ops.as_f64(grad_logits) / t, last.shape).copy()
        pending: dict[int, np.ndarray] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            if i in pending:
                g = g + pending.pop(i)
            lay = self.layers[i]
            if isinstance(lay, SkipAddLayer):
                extra = pending.get(lay.source)
                pending[lay.source] = g.copy() if extra is None else extra + g
            else:
                g = lay.backward(g)
        return g


def build_network(cfg: NetworkConfig) -> Network:
    """Instantiate layers from specs; weight draws depend only on seed and shapes."""
    rng = np.random.default_rng(cfg.seed)
    c, h, w = cfg.input_shape
    layers: list[Layer] = []
    shapes: list[tuple[int, int, int]] = []  # feature shape after each layer
    n_convs = 0
    for i, spec in enumerate(cfg.layer_specs):
        name = f"{spec.kind.replace('-', '')}{i}"
        if spec.kind in ("conv", "binary-conv"):
            cspec = ops.ConvSpec(
                in_channels=c,
                out_channels=spec.out_channels,
                kernel_h=spec.kernel,
                kernel_w=spec.kernel,
                stride=spec.stride,
                padding=spec.padding,
            )
            oh, ow = cspec.out_hw(h, w)
            if spec.kind == "conv":
                lay = ConvLayer(name, cspec, rng)
            else:
                lay = BinaryConvLayer(name, cspec, rng, clamp=cfg.latent_clamp)
            lay.flip_tracked = n_convs > 0  # every conv except the stem
            n_convs += 1
            c, h, w = spec.out_channels, oh, ow
        elif spec.kind == "batchnorm":
            lay = BatchNormLayer(name, c)
        elif spec.kind == "lif":
            lay = LIFLayer(name, cfg.lif)
        elif spec.kind == "agmm":
            lay = GateLayer(name, cfg.timesteps, cfg.agmm_backward, cfg.gate_per_sample)
        elif spec.kind == "avgpool":
            lay = AvgPoolLayer(name, spec.kernel, spec.stride or spec.kernel)
            h = (h - spec.kernel) // lay.stride + 1
            w = (w - spec.kernel) // lay.stride + 1
            if h < 1 or w < 1:
                raise ConfigError(f"avgpool at position {i} produces empty output")
        elif spec.kind == "linear":
            lay = LinearLayer(name, c * h * w, spec.features, rng)
            c, h, w = spec.features, 1, 1
        elif spec.kind == "skip-add":
            if shapes[spec.source] != (c, h, w):
                raise ConfigError(
                    f"skip-add at position {i}: source shape {shapes[spec.source]} "
                    f"!= current {(c, h, w)}"
                )
            lay = SkipAddLayer(name, spec.source)
        else:  # pragma: no cover - LayerSpec already validates
            raise ConfigError(f"unknown layer kind {spec.kind!r}")
        layers.append(lay)
        shapes.append((c, h, w))
    if cfg.layer_specs[-1].features != cfg.n_classes:
        raise ConfigError(
            f"final linear must emit n_classes={cfg.n_classes} features, "
            f"got {cfg.layer_specs[-1].features}"
        )
    return Network(cfg, layers)


def desk_layer_specs(
    variant: str,
    blocks: int = 2,
    channels: int = 8,
    kernel: int = 3,
    pool: int = 2,
    skip: bool = True,
) -> tuple[LayerSpec, ...]:
    """Standard desk-scale stack: FP stem, binary middle blocks, FP readout.

    Each middle block is conv -> norm (-> gate) -> optional residual join
    from the previous spike tensor -> fire.  The fp variant swaps binary
    convs for full-precision ones with identical shapes.
    """
    if blocks < 1:
        raise ConfigError(f"blocks must be >= 1, got {blocks}")
    mid_kind = "conv" if variant == "fp" else "binary-conv"
    pad = kernel // 2
    specs = [
        LayerSpec("conv", out_channels=channels, kernel=kernel, stride=1, padding=pad),
        LayerSpec("batchnorm"),
        LayerSpec("lif"),
    ]
    prev_spike_idx = 2
    for _ in range(blocks):
        specs.append(
            LayerSpec(mid_kind, out_channels=channels, kernel=kernel, stride=1, padding=pad)
        )
        specs.append(LayerSpec("batchnorm"))
        if variant == "binary-agmm":
            specs.append(LayerSpec("agmm"))
        if skip:
            specs.append(LayerSpec("skip-add", source=prev_spike_idx))
        specs.append(LayerSpec("lif"))
        prev_spike_idx = len(specs) - 1
    specs.append(LayerSpec("avgpool", kernel=pool, stride=pool))
    specs.append(LayerSpec("linear", features=0))
    return tuple(specs)


def make_network_config(
    variant: str,
    input_shape: tuple[int, int, int],
    n_classes: int,
    timesteps: int = 2,
    blocks: int = 2,
    channels: int = 8,
    kernel: int = 3,
    pool: int = 2,
    skip: bool = True,
    lif: neuron.LIFConfig = neuron.LIFConfig(),
    seed: int = 0,
    agmm_backward: str = "exact",
    gate_per_sample: bool = True,
    latent_clamp: bool = True,
) -> NetworkConfig:
    specs = desk_layer_specs(variant, blocks, channels, kernel, pool, skip)
    specs = specs[:-1] + (replace(specs[-1], features=n_classes),)
    return NetworkConfig(
        variant=variant,
        timesteps=timesteps,
        input_shape=tuple(input_shape),
        n_classes=n_classes,
        layer_specs=specs,
        lif=lif,
        seed=seed,
        agmm_backward=agmm_backward,
        gate_per_sample=gate_per_sample,
        latent_clamp=latent_clamp,
    )
