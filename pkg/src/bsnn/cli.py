"""Command-line entry point.

Subcommands: train, compare, flipprob, gradcheck, profile, plot.
Exit codes: 0 success, 1 usage or configuration error, 2 failed
validation/acceptance check, 3 I/O error (missing or malformed files).
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import energy, flipstats, gradcheck, svgplot
from . import train as train_mod
from .errors import ConfigError, DataFormatError
from .network import build_network

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2
EXIT_IO = 3

VARIANT_COLORS = {"fp": "#1f77b4", "binary": "#d62728", "binary-agmm": "#2ca02c"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this package reserves 2 for
    failed checks, so remap usage errors to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> config_mod.ExperimentConfig:
    if getattr(args, "config", None):
        cfg = config_mod.load_config(args.config)
    else:
        cfg = config_mod.ExperimentConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if overrides:
        cfg = config_mod.apply_overrides(cfg, overrides)
    return cfg


def _run_dir(cfg: config_mod.ExperimentConfig, args) -> Path:
    outdir = os.environ.get("BSNN_OUTDIR") or getattr(args, "outdir", None) or cfg.outdir
    path = Path(outdir) / cfg.name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _train_runs(cfg, variants: list[str]):
    """Train every (variant, seed) pair; returns records and tagged aux rows."""
    train_set, test_set = config_mod.make_datasets(cfg)
    settings = config_mod.train_settings(cfg)
    all_records = []
    gate_rows = []
    layer_rows = []
    checkpoints = []
    for variant in variants:
        for seed in cfg.seeds:
            net_cfg = config_mod.network_config_for(cfg, variant, seed, train_set)
            net = build_network(net_cfg)
            result = train_mod.train(net, train_set, test_set, settings, seed)
            all_records.extend(result.records)
            gate_rows.extend((variant, seed, r) for r in result.gate_rows)
            layer_rows.extend((variant, seed, r) for r in result.layer_rows)
            checkpoints.append((variant, seed, net, net_cfg))
            final = result.records[-1]
            print(
                f"{variant} seed={seed}: train_acc={final.train_acc:.4f} "
                f"test_acc={final.test_acc:.4f} loss={final.loss:.4f} "
                f"flip={final.flip_ratio:.6f}"
            )
    return all_records, gate_rows, layer_rows, checkpoints


def _write_outputs(cfg, run_dir: Path, records, gate_rows, layer_rows, checkpoints):
    train_mod.write_telemetry_csv(run_dir / "telemetry.csv", records, cfg.timesteps)
    if cfg.gate_stats and gate_rows:
        train_mod.write_gate_csv(run_dir / "gates.csv", gate_rows)
    if cfg.layer_stats and layer_rows:
        train_mod.write_layer_csv(run_dir / "layers.csv", layer_rows)
    for variant, seed, net, _ in checkpoints:
        train_mod.save_checkpoint(run_dir / f"ckpt_{variant}_seed{seed}.bsnn", net)
    print(f"outputs in {run_dir}")


def cmd_train(args) -> int:
    if args.print_defaults:
        print(config_mod.default_config_text())
        return EXIT_OK
    cfg = _load_config(args)
    run_dir = _run_dir(cfg, args)
    records, gate_rows, layer_rows, checkpoints = _train_runs(cfg, [cfg.variant])
    _write_outputs(cfg, run_dir, records, gate_rows, layer_rows, checkpoints)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in ("fp", "binary", "binary-agmm"):
            raise ConfigError(f"unknown variant {v!r} in --variants")
    run_dir = _run_dir(cfg, args)
    records, gate_rows, layer_rows, checkpoints = _train_runs(cfg, variants)
    _write_outputs(cfg, run_dir, records, gate_rows, layer_rows, checkpoints)
    with open(run_dir / "compare_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["variant", "seed", "final_train_acc", "final_test_acc",
             "mean_flip_ratio", "first_decile_flip", "last_decile_flip"]
        )
        for variant in variants:
            for seed in cfg.seeds:
                rows = [r for r in records if r.variant == variant and r.seed == seed]
                flips = [r.flip_ratio for r in rows]
                k = max(1, len(flips) // 10)
                writer.writerow([
                    variant,
                    str(seed),
                    train_mod._fmt(rows[-1].train_acc),
                    train_mod._fmt(rows[-1].test_acc),
                    train_mod._fmt(float(np.mean(flips))),
                    train_mod._fmt(float(np.mean(flips[:k]))),
                    train_mod._fmt(float(np.mean(flips[-k:]))),
                ])
    print(f"summary in {run_dir / 'compare_summary.csv'}")
    return EXIT_OK


def cmd_flipprob(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg, args)
    mus = np.linspace(-1.0, 1.0, 5)
    sigmas = np.linspace(0.25, 2.0, 5)
    ratios = np.linspace(-2.0, 2.0, 5)
    eta = 0.1
    worst = 0.0
    n_outside = 0
    out_path = run_dir / "flipprob.csv"
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["omega", "eta", "mu", "sigma", "analytic", "mc_estimate",
             "mc_stderr", "abs_err", "within_3se"]
        )
        for ratio in ratios:
            omega = ratio * eta
            for mu in mus:
                for sigma in sigmas:
                    analytic = flipstats.flip_probability_analytic(omega, eta, mu, sigma)
                    mc = flipstats.flip_probability_montecarlo(
                        omega, eta, mu, sigma, samples=args.samples, seed=args.seed
                    )
                    err = abs(analytic - mc.estimate)
                    ok = err <= 3.0 * mc.stderr
                    if not ok:
                        n_outside += 1
                    if mc.stderr > 0:
                        worst = max(worst, err / mc.stderr)
                    writer.writerow([
                        train_mod._fmt(omega), train_mod._fmt(eta),
                        train_mod._fmt(mu), train_mod._fmt(sigma),
                        train_mod._fmt(analytic), train_mod._fmt(mc.estimate),
                        train_mod._fmt(mc.stderr), train_mod._fmt(err),
                        "1" if ok else "0",
                    ])
    n_cells = len(mus) * len(sigmas) * len(ratios)
    print(f"{n_cells} cells, worst |err|/se = {worst:.3f}, outside 3se: {n_outside}")
    print(f"table in {out_path}")
    return EXIT_OK if n_outside == 0 else EXIT_CHECK_FAILED


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:32s} max_err={r.max_err:.3e} tol={r.tol:.0e} {status}")
        if not r.passed:
            failed += 1
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def cmd_profile(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg, args)
    train_set, test_set = config_mod.make_datasets(cfg)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    net_cfg = config_mod.network_config_for(cfg, cfg.variant, seed, train_set)
    ckpt = Path(args.checkpoint) if args.checkpoint else (
        run_dir / f"ckpt_{cfg.variant}_seed{seed}.bsnn"
    )
    net = train_mod.load_checkpoint(ckpt, net_cfg)
    model = energy.EnergyModel(
        pj_per_accumulate=args.pj_accumulate, pj_per_mac=args.pj_mac
    )
    report = energy.profile_network(
        net, test_set, model, batch_size=cfg.batch_size, encoding=cfg.encoding
    )
    out_path = run_dir / "profile.csv"
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer", "type", "firing_rate", "sops", "macs", "param_bits"])
        for row in report.rows:
            writer.writerow([
                row.layer,
                row.type,
                "" if row.firing_rate is None else train_mod._fmt(row.firing_rate),
                train_mod._fmt(row.sops),
                train_mod._fmt(row.macs),
                str(row.param_bits),
            ])
        writer.writerow([
            "total", "network", "",
            train_mod._fmt(report.total_sops),
            train_mod._fmt(report.total_macs),
            str(report.total_param_bits),
        ])
    print(
        f"per-sample: sops={report.total_sops:.1f} macs={report.total_macs:.1f} "
        f"energy={report.energy_mj:.6e} mJ"
    )
    print(
        f"model size: {report.total_param_bits} bits "
        f"({report.total_param_bits / 8192:.2f} KiB), "
        f"fp32-equivalent ratio {report.size_ratio:.2f}x"
    )
    print(f"table in {out_path}")
    return EXIT_OK


def _read_telemetry(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise DataFormatError(f"{path}: empty telemetry file")
    required = set(train_mod.TELEMETRY_COLUMNS)
    have = set(rows[0].keys())
    if not required <= have:
        raise DataFormatError(
            f"{path}: missing telemetry columns {sorted(required - have)}"
        )
    return rows


def cmd_plot(args) -> int:
    rows = _read_telemetry(args.telemetry)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = (
        ("test_acc", "test accuracy", "accuracy.svg"),
        ("flip_ratio", "sign-flip ratio", "flip.svg"),
        ("loss", "training loss", "loss.svg"),
    )
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["variant"], row["seed"]), []).append(row)
    written = []
    for column, label, fname in metrics:
        chart = svgplot.LineChart(
            title=label, x_label="epoch", y_label=label
        )
        for (variant, seed), grp in sorted(groups.items()):
            grp = sorted(grp, key=lambda r: int(r["epoch"]))
            chart.add(
                svgplot.Series(
                    label=f"{variant} s{seed}",
                    xs=[float(r["epoch"]) for r in grp],
                    ys=[float(r[column]) for r in grp],
                    color=VARIANT_COLORS.get(variant, ""),
                    dash="" if variant != "fp" else "5,3",
                )
            )
        path = out_dir / fname
        chart.write(path)
        written.append(str(path))
    print("wrote " + ", ".join(written))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="bsnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
        p.add_argument("--outdir", help="output root (overrides config; "
                                        "BSNN_OUTDIR env wins over both)")

    p_train = sub.add_parser("train", help="train one variant, write telemetry")
    add_common(p_train)
    p_train.add_argument("--variant", choices=("fp", "binary", "binary-agmm"))
    p_train.add_argument("--print-defaults", action="store_true",
                         help="print the default config and exit")
    p_train.set_defaults(func=cmd_train)

    p_cmp = sub.add_parser("compare", help="train several variants side by side")
    add_common(p_cmp)
    p_cmp.add_argument("--variants", default="fp,binary,binary-agmm")
    p_cmp.set_defaults(func=cmd_compare)

    p_flip = sub.add_parser("flipprob",
                            help="analytic flip probability vs simulation")
    add_common(p_flip)
    p_flip.add_argument("--samples", type=int, default=200_000)
    p_flip.add_argument("--seed", type=int, default=0)
    p_flip.set_defaults(func=cmd_flipprob)

    p_gc = sub.add_parser("gradcheck", help="run every gradient verification suite")
    p_gc.add_argument("--seed", type=int, default=20240)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_prof = sub.add_parser("profile",
                            help="operation counts, energy and size for a checkpoint")
    add_common(p_prof)
    p_prof.add_argument("--checkpoint", help="checkpoint file "
                        "(default: <rundir>/ckpt_<variant>_seed<seed>.bsnn)")
    p_prof.add_argument("--seed", type=int, help="run seed of the checkpoint")
    p_prof.add_argument("--pj-accumulate", type=float, default=0.9,
                        help="picojoules per accumulate")
    p_prof.add_argument("--pj-mac", type=float, default=4.6,
                        help="picojoules per multiply-accumulate")
    p_prof.set_defaults(func=cmd_profile)

    p_plot = sub.add_parser("plot", help="render SVG curves from a telemetry CSV")
    p_plot.add_argument("--telemetry", required=True)
    p_plot.add_argument("--out", default=".", help="output directory")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse help/usage paths
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:  # pragma: no cover - thin wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
