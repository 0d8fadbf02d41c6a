"""Training loop, optimizer, schedules, telemetry records and checkpoints."""

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as data_mod
from .errors import CheckpointError, ConfigError, ShapeError
from .flipstats import GradientStats, flip_ratio, take_sign_snapshot
from .network import (
    BinaryConvLayer,
    ConvLayer,
    GateLayer,
    LIFLayer,
    Network,
    NetworkConfig,
    build_network,
)
from .ops import Parameter, as_f64

CHECKPOINT_MAGIC = b"BSNN"
CHECKPOINT_VERSION = 1


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; returns (loss, d loss / d logits)."""
    logits = as_f64(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[rows, labels].mean())
    grad = probs
    grad[rows, labels] -= 1.0
    return loss, grad / n


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at epoch 0 toward 0 at epoch == total."""
    if total_epochs < 1:
        raise ConfigError(f"total_epochs must be >= 1, got {total_epochs}")
    if not (0 <= epoch <= total_epochs):
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    return 0.5 * lr0 * (1.0 + np.cos(np.pi * epoch / total_epochs))


class SGD:
    """Momentum SGD: v <- m*v + g; p <- p - lr*v; then clamp where requested."""

    def __init__(self, params: list[Parameter], momentum: float = 0.9):
        if not (0.0 <= momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= lr * v
            if p.clamp is not None:
                np.clip(p.data, p.clamp[0], p.clamp[1], out=p.data)


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    encoding: str = "constant"  # or "bernoulli"
    collect_gate_stats: bool = True
    collect_layer_stats: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.encoding not in ("constant", "bernoulli"):
            raise ConfigError(f"encoding must be constant|bernoulli, got {self.encoding!r}")


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    variant: str
    seed: int
    train_acc: float
    test_acc: float
    loss: float
    flip_ratio: float
    grad_mean: float
    grad_var: float
    lr: float
    gate_means: tuple[float, ...] | None = None
    wall_seconds: float = 0.0  # in-memory only, never serialized


@dataclass(frozen=True)
class GateCellRow:
    """Per (epoch, gate layer, timestep) gradient statistics around the gate."""

    epoch: int
    layer: str
    timestep: int
    gate_mean: float
    mean_before: float
    mean_after: float
    var_before: float
    var_after: float


@dataclass(frozen=True)
class LayerEpochRow:
    epoch: int
    layer: str
    firing_rate: float


@dataclass
class TrainResult:
    records: list[EpochRecord] = field(default_factory=list)
    gate_rows: list[GateCellRow] = field(default_factory=list)
    layer_rows: list[LayerEpochRow] = field(default_factory=list)


def _encode(images: np.ndarray, timesteps: int, encoding: str,
            rng: np.random.Generator) -> np.ndarray:
    if encoding == "constant":
        return data_mod.encode_constant(images, timesteps)
    return data_mod.encode_bernoulli(images, timesteps, rng)


def evaluate(
    net: Network,
    dataset: data_mod.Dataset,
    settings: TrainSettings,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Inference-mode accuracy and loss over a dataset."""
    if rng is None:
        rng = np.random.default_rng(0)
    n = dataset.images.shape[0]
    correct = 0
    loss_sum = 0.0
    for start in range(0, n, settings.batch_size):
        sl = slice(start, min(start + settings.batch_size, n))
        x = _encode(dataset.images[sl], net.cfg.timesteps, settings.encoding, rng)
        logits = net.forward(x, training=False)
        loss, _ = cross_entropy_loss(logits, dataset.labels[sl])
        loss_sum += loss * (sl.stop - sl.start)
        correct += int((logits.argmax(axis=1) == dataset.labels[sl]).sum())
    return correct / n, loss_sum / n


def _tracked_conv_layers(net: Network) -> list[ConvLayer | BinaryConvLayer]:
    return [l for l in net.layers if l.flip_tracked]


def train(
    net: Network,
    train_set: data_mod.Dataset,
    test_set: data_mod.Dataset,
    settings: TrainSettings,
    run_seed: int,
) -> TrainResult:
    """Train in place; one telemetry record per epoch.

    `run_seed` drives batch shuffling and stochastic encoding; the network's
    own weight-init seed lives in its config.
    """
    rng = np.random.default_rng(run_seed)
    opt = SGD(net.parameters(), momentum=settings.momentum)
    result = TrainResult()
    tracked = _tracked_conv_layers(net)
    gates = [l for l in net.layers if isinstance(l, GateLayer)]
    lifs = [l for l in net.layers if isinstance(l, LIFLayer)]
    for lay in tracked:
        lay.collect_per_t = True
    for lay in gates:
        lay.collect_scaling = settings.collect_gate_stats
    prev_signs = take_sign_snapshot(0, net.named_sign_weights())
    n = train_set.images.shape[0]
    for epoch in range(settings.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, settings.epochs, settings.lr)
        order = rng.permutation(n)
        grad_pool = GradientStats()
        cell_before: dict[tuple[str, int], GradientStats] = {}
        cell_after: dict[tuple[str, int], GradientStats] = {}
        cell_gate: dict[tuple[str, int], GradientStats] = {}
        gate_mean_acc: dict[int, GradientStats] = {}
        for lay in lifs:
            lay.reset_firing_counters()
        correct = 0
        loss_sum = 0.0
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            x = _encode(train_set.images[idx], net.cfg.timesteps, settings.encoding, rng)
            labels = train_set.labels[idx]
            net.zero_grad()
            logits = net.forward(x, training=True)
            loss, grad = cross_entropy_loss(logits, labels)
            net.backward(grad)
            opt.step(lr)
            loss_sum += loss * idx.size
            correct += int((logits.argmax(axis=1) == labels).sum())
            for lay in tracked:
                if lay.last_per_t_grads is not None:
                    for g in lay.last_per_t_grads:
                        grad_pool.update(g)
            for lay in gates:
                for t, gm in enumerate(lay.gate_means):
                    gate_mean_acc.setdefault(t, GradientStats()).update(
                        np.asarray([gm])
                    )
                if lay.last_scaling_rows:
                    for row in lay.last_scaling_rows:
                        key = (lay.name, row.timestep)
                        nel = row.n_elements
                        cell_before.setdefault(key, GradientStats())
                        cell_after.setdefault(key, GradientStats())
                        cell_gate.setdefault(key, GradientStats())
                        cell_before[key] = cell_before[key].merge(
                            GradientStats(nel, row.grad_mean_before,
                                          row.grad_var_before * nel)
                        )
                        cell_after[key] = cell_after[key].merge(
                            GradientStats(nel, row.grad_mean_after,
                                          row.grad_var_after * nel)
                        )
                        cell_gate[key] = cell_gate[key].merge(
                            GradientStats(1, row.gate_mean, 0.0)
                        )
        curr_signs = take_sign_snapshot(epoch + 1, net.named_sign_weights())
        ratio = flip_ratio(prev_signs, curr_signs)
        prev_signs = curr_signs
        if settings.collect_layer_stats:
            for lay in lifs:
                result.layer_rows.append(
                    LayerEpochRow(epoch + 1, lay.name, lay.firing_rate)
                )
        eval_rng = np.random.default_rng((run_seed << 20) + epoch + 1)
        test_acc, _ = evaluate(net, test_set, settings, eval_rng)
        gate_means = None
        if gates:
            gate_means = tuple(
                gate_mean_acc[t].mean for t in sorted(gate_mean_acc)
            )
        result.records.append(
            EpochRecord(
                epoch=epoch + 1,
                variant=net.cfg.variant,
                seed=run_seed,
                train_acc=correct / n,
                test_acc=test_acc,
                loss=loss_sum / n,
                flip_ratio=ratio,
                grad_mean=grad_pool.mean,
                grad_var=grad_pool.variance,
                lr=float(lr),
                gate_means=gate_means,
                wall_seconds=time.perf_counter() - t0,
            )
        )
        for key in sorted(cell_before):
            result.gate_rows.append(
                GateCellRow(
                    epoch=epoch + 1,
                    layer=key[0],
                    timestep=key[1],
                    gate_mean=cell_gate[key].mean,
                    mean_before=cell_before[key].mean,
                    mean_after=cell_after[key].mean,
                    var_before=cell_before[key].variance,
                    var_after=cell_after[key].variance,
                )
            )
    return result


# --- CSV serialization --------------------------------------------------------

TELEMETRY_COLUMNS = (
    "epoch",
    "variant",
    "seed",
    "train_acc",
    "test_acc",
    "loss",
    "flip_ratio",
    "grad_mean",
    "grad_var",
    "lr",
)


def _fmt(value) -> str:
    """Shortest round-trip decimal form; deterministic for a given float."""
    return repr(float(value))


def write_telemetry_csv(path, records: list[EpochRecord], timesteps: int) -> None:
    """Fixed column set, plus gate_t{i} columns when any record carries gates."""
    import csv

    with_gates = any(r.gate_means is not None for r in records)
    header = list(TELEMETRY_COLUMNS)
    if with_gates:
        header += [f"gate_t{i}" for i in range(timesteps)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            row = [
                str(r.epoch),
                r.variant,
                str(r.seed),
                _fmt(r.train_acc),
                _fmt(r.test_acc),
                _fmt(r.loss),
                _fmt(r.flip_ratio),
                _fmt(r.grad_mean),
                _fmt(r.grad_var),
                _fmt(r.lr),
            ]
            if with_gates:
                if r.gate_means is None:
                    row += [""] * timesteps
                else:
                    row += [_fmt(g) for g in r.gate_means]
            writer.writerow(row)


def write_gate_csv(path, tagged_rows: list[tuple[str, int, GateCellRow]]) -> None:
    """Rows tagged (variant, seed) so multi-run sweeps share one file."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["epoch", "variant", "seed", "layer", "timestep", "gate_mean",
             "mean_before", "mean_after", "var_before", "var_after"]
        )
        for variant, seed, r in tagged_rows:
            writer.writerow(
                [str(r.epoch), variant, str(seed), r.layer, str(r.timestep),
                 _fmt(r.gate_mean), _fmt(r.mean_before), _fmt(r.mean_after),
                 _fmt(r.var_before), _fmt(r.var_after)]
            )


def write_layer_csv(path, tagged_rows: list[tuple[str, int, LayerEpochRow]]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "variant", "seed", "layer", "firing_rate"])
        for variant, seed, r in tagged_rows:
            writer.writerow(
                [str(r.epoch), variant, str(seed), r.layer, _fmt(r.firing_rate)]
            )


# --- checkpoint container ---------------------------------------------------


def config_digest(cfg: NetworkConfig) -> bytes:
    """sha256 of the canonical JSON form of a network config."""
    blob = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).digest()


def checkpoint_tensors(net: Network) -> list[tuple[str, np.ndarray]]:
    """Declaration order: per layer, trainable params then state arrays."""
    out: list[tuple[str, np.ndarray]] = []
    for lay in net.layers:
        for p in lay.params():
            out.append((p.name, p.data))
        out.extend(lay.state_tensors())
    return out


def save_checkpoint(path, net: Network) -> None:
    digest = config_digest(net.cfg)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(digest)
        for _, arr in checkpoint_tensors(net):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, cfg: NetworkConfig) -> Network:
    """Rebuild a network from `cfg` and fill its tensors from the file."""
    net = build_network(cfg)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    digest = blob[8:40]
    if digest != config_digest(cfg):
        raise CheckpointError(f"{path}: checkpoint does not match the given config")
    offset = 40
    for name, arr in checkpoint_tensors(net):
        nbytes = arr.size * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated while reading tensor {name}")
        arr[...] = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return net
