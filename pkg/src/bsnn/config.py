"""Experiment configuration: an INI file with a fixed, strictly-checked schema.

Every key has a default; unknown sections or keys are rejected by name.
Command-line flags may override individual values after the file is read.
"""

import configparser
from dataclasses import dataclass, fields

from .data import Dataset, load_idx, synthetic_blobs
from .errors import ConfigError
from .network import NetworkConfig, make_network_config
from .neuron import LIFConfig
from .train import TrainSettings

# section -> key -> (python type, default, comment)
SCHEMA: dict[str, dict[str, tuple[type, object, str]]] = {
    "experiment": {
        "name": (str, "desk", "run name; output files land in <outdir>/<name>"),
        "seeds": (str, "1", "comma-separated run seeds"),
        "epochs": (int, 60, "training epochs"),
        "batch_size": (int, 64, "minibatch size"),
        "outdir": (str, "runs", "output root (BSNN_OUTDIR env overrides)"),
    },
    "data": {
        "source": (str, "blobs", "blobs | idx"),
        "classes": (int, 4, "blob classes"),
        "per_class": (int, 40, "blob training samples per class"),
        "test_per_class": (int, 20, "blob test samples per class"),
        "image_channels": (int, 1, "blob image planes"),
        "height": (int, 8, "blob image height"),
        "width": (int, 8, "blob image width"),
        "noise": (float, 0.15, "blob jitter standard deviation"),
        "prototype_seed": (int, 7, "seed for the shared class prototypes"),
        "train_seed": (int, 1001, "sampling seed for the blob training split"),
        "test_seed": (int, 2002, "sampling seed for the blob test split"),
        "train_images": (str, "", "IDX image file (source=idx)"),
        "train_labels": (str, "", "IDX label file (source=idx)"),
        "test_images": (str, "", "IDX image file (source=idx)"),
        "test_labels": (str, "", "IDX label file (source=idx)"),
        "limit": (int, 0, "keep only the first N samples of each split (0 = all)"),
        "encoding": (str, "constant", "constant | bernoulli input coding"),
    },
    "network": {
        "variant": (str, "binary-agmm", "fp | binary | binary-agmm"),
        "timesteps": (int, 2, "simulation steps"),
        "blocks": (int, 2, "middle conv blocks"),
        "channels": (int, 8, "conv channels"),
        "kernel": (int, 3, "conv kernel size"),
        "pool": (int, 2, "average-pool kernel and stride"),
        "skip": (bool, True, "residual joins around middle blocks"),
        "tau": (float, 0.5, "membrane leak factor"),
        "v_th": (float, 1.0, "firing threshold"),
        "beta": (float, 1.0, "surrogate window half-width"),
        "reset_grad_through_spike": (bool, False, "differentiate the reset product"),
        "agmm_backward": (str, "exact", "exact | approx gate backward"),
        "gate_per_sample": (bool, True, "one gate per sample (else per batch)"),
        "latent_clamp": (bool, True, "clamp binary latent weights to [-1, 1]"),
        "init_seed": (int, -1, "weight-init seed; -1 reuses the run seed"),
    },
    "optimizer": {
        "lr": (float, 0.1, "peak learning rate (cosine-annealed)"),
        "momentum": (float, 0.9, "SGD momentum"),
    },
    "telemetry": {
        "gate_stats": (bool, True, "write per-gate gradient statistics"),
        "layer_stats": (bool, True, "write per-layer firing rates"),
    },
}

_FIELD_TO_SECTION = {
    key: section for section, keys in SCHEMA.items() for key in keys
}


@dataclass
class ExperimentConfig:
    name: str = "desk"
    seeds: tuple[int, ...] = (1,)
    epochs: int = 60
    batch_size: int = 64
    outdir: str = "runs"
    source: str = "blobs"
    classes: int = 4
    per_class: int = 40
    test_per_class: int = 20
    image_channels: int = 1
    height: int = 8
    width: int = 8
    noise: float = 0.15
    prototype_seed: int = 7
    train_seed: int = 1001
    test_seed: int = 2002
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    limit: int = 0
    encoding: str = "constant"
    variant: str = "binary-agmm"
    timesteps: int = 2
    blocks: int = 2
    channels: int = 8
    kernel: int = 3
    pool: int = 2
    skip: bool = True
    tau: float = 0.5
    v_th: float = 1.0
    beta: float = 1.0
    reset_grad_through_spike: bool = False
    agmm_backward: str = "exact"
    gate_per_sample: bool = True
    latent_clamp: bool = True
    init_seed: int = -1
    lr: float = 0.1
    momentum: float = 0.9
    gate_stats: bool = True
    layer_stats: bool = True

    def __post_init__(self):
        if self.source not in ("blobs", "idx"):
            raise ConfigError(f"data.source must be blobs|idx, got {self.source!r}")
        if self.variant not in ("fp", "binary", "binary-agmm"):
            raise ConfigError(f"network.variant must be fp|binary|binary-agmm, "
                              f"got {self.variant!r}")
        if self.encoding not in ("constant", "bernoulli"):
            raise ConfigError(
                f"data.encoding must be constant|bernoulli, got {self.encoding!r}"
            )
        if not self.seeds:
            raise ConfigError("experiment.seeds must list at least one seed")
        if self.source == "idx":
            missing = [
                k
                for k in ("train_images", "train_labels", "test_images", "test_labels")
                if not getattr(self, k)
            ]
            if missing:
                raise ConfigError(f"data.source=idx requires {', '.join(missing)}")


def _coerce(section: str, key: str, raw: str):
    typ, _, _ = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}"
        ) from None


def _build(values: dict[str, object]) -> ExperimentConfig:
    seeds = values.get("seeds")
    if isinstance(seeds, str):
        try:
            values["seeds"] = tuple(int(s) for s in seeds.split(",") if s.strip())
        except ValueError:
            raise ConfigError(
                f"experiment.seeds = {seeds!r} is not a comma list of ints"
            ) from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=(";",)
    )
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"{path}: unknown section [{section}]; known: {sorted(SCHEMA)}"
            )
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}]; "
                    f"known: {sorted(SCHEMA[section])}"
                )
            values[key] = _coerce(section, key, raw)
    return _build(values)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Overrides are `key=value` or `section.key=value` pairs."""
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, raw in overrides.items():
        name = key
        wanted = None
        if "." in key:
            wanted, name = key.split(".", 1)
        section = _FIELD_TO_SECTION.get(name)
        if section is None or (wanted is not None and wanted != section):
            raise ConfigError(f"unknown config key {key!r}")
        values[name] = _coerce(section, name, raw)
        if name == "seeds":
            values[name] = raw  # reparsed below
    return _build(values)


def default_config_text() -> str:
    lines = ["# all keys optional; values below are the defaults", ""]
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, comment) in keys.items():
            shown = str(default).lower() if isinstance(default, bool) else default
            lines.append(f"{key} = {shown}  ; {comment}")
        lines.append("")
    return "\n".join(lines)


def make_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.source == "blobs":
        train = synthetic_blobs(
            n_classes=cfg.classes,
            per_class=cfg.per_class,
            channels=cfg.image_channels,
            height=cfg.height,
            width=cfg.width,
            noise=cfg.noise,
            seed=cfg.train_seed,
            prototype_seed=cfg.prototype_seed,
        )
        test = synthetic_blobs(
            n_classes=cfg.classes,
            per_class=cfg.test_per_class,
            channels=cfg.image_channels,
            height=cfg.height,
            width=cfg.width,
            noise=cfg.noise,
            seed=cfg.test_seed,
            prototype_seed=cfg.prototype_seed,
        )
    else:
        train = load_idx(cfg.train_images, cfg.train_labels)
        test = load_idx(cfg.test_images, cfg.test_labels)
    if cfg.limit > 0:
        train = train.subset(slice(0, cfg.limit))
        test = test.subset(slice(0, cfg.limit))
    return train, test


def network_config_for(
    cfg: ExperimentConfig, variant: str, run_seed: int, dataset: Dataset
) -> NetworkConfig:
    init_seed = run_seed if cfg.init_seed < 0 else cfg.init_seed
    return make_network_config(
        variant=variant,
        input_shape=tuple(dataset.images.shape[1:]),
        n_classes=dataset.n_classes,
        timesteps=cfg.timesteps,
        blocks=cfg.blocks,
        channels=cfg.channels,
        kernel=cfg.kernel,
        pool=cfg.pool,
        skip=cfg.skip,
        lif=LIFConfig(
            tau=cfg.tau,
            v_th=cfg.v_th,
            beta=cfg.beta,
            reset_grad_through_spike=cfg.reset_grad_through_spike,
        ),
        seed=init_seed,
        agmm_backward=cfg.agmm_backward,
        gate_per_sample=cfg.gate_per_sample,
        latent_clamp=cfg.latent_clamp,
    )


def train_settings(cfg: ExperimentConfig) -> TrainSettings:
    return TrainSettings(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        momentum=cfg.momentum,
        encoding=cfg.encoding,
        collect_gate_stats=cfg.gate_stats,
        collect_layer_stats=cfg.layer_stats,
    )
