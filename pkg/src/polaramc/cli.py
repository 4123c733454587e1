"""Command-line entry point: ``polaramc <command> [options]``.

Exit codes: 0 success, 2 usage or invalid argument, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ccn import CcnSpec, Pipeline
from .cumulants import cumulant_table_csv
from .errors import DataError, InvalidArgumentError, NumericError
from .features import ConstellationImage, write_pgm
from .harness.config import ExperimentConfig, load_config, parse_config_text, profile
from .harness.dataset import Dataset, generate_dataset, image_spec
from .harness.experiments import (
    LABELS,
    compare_convergence,
    evaluate_ccn_system,
    evaluate_image_model,
    run_fading_experiment,
    run_sweep,
    train_ccn_system,
    train_image_model,
    write_ccn_dump,
    write_confusion_csv,
    write_convergence_csv,
    write_sweep_csv,
)
from .nn import CLASSIFIER, COMPENSATOR, load_checkpoint, save_checkpoint

log = logging.getLogger("polaramc")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
TRAIN_MODES = ("polar", "iq", "ccn")


def _config(args) -> ExperimentConfig:
    cfg = profile(args.profile)
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.set:
        cfg = parse_config_text("\n".join(args.set), cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _dataset(args, cfg: ExperimentConfig) -> Dataset:
    path = Path(args.data)
    if getattr(args, "generate", False) and not (path / "manifest.json").exists():
        log.info("no dataset at %s; generating", path)
        return generate_dataset(cfg, path)
    ds = Dataset(path)
    ds.check_config(cfg)
    return ds


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plots():
    # imported lazily so data-only commands never load matplotlib
    from . import plotting

    return plotting


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    ds = generate_dataset(cfg, args.out)
    print(f"dataset written to {ds.path} (config {ds.config_hash[:12]}, counts {ds.manifest['counts']})")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    out = _out(args)
    if args.mode == "ccn":
        pipe, report = train_ccn_system(cfg, ds)
        save_checkpoint(pipe.cnn, out / "cnn.ckpt")
        save_checkpoint(pipe.ccn, out / "ccn.ckpt")
    else:
        net, report = train_image_model(cfg, ds, args.mode)
        save_checkpoint(net, out / "model.ckpt")
    report.write_csv(out / "train_report.csv")
    report.write_timing_csv(out / "timing.csv")
    print(f"trained {args.mode} model: best epoch {report.best_epoch}, outputs in {out}")
    return 0


def _load_pipeline(model_dir: Path, cfg: ExperimentConfig) -> Pipeline:
    cnn = load_checkpoint(model_dir / "cnn.ckpt", expect_kind=CLASSIFIER)
    ccn = load_checkpoint(model_dir / "ccn.ckpt", expect_kind=COMPENSATOR)
    return Pipeline(ccn, cnn, CcnSpec(), image_spec(cfg, "polar"))


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing {path}; run `polaramc train` first")
    return path


def cmd_eval(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    out = _out(args)
    model_dir = Path(args.model)
    if args.mode == "ccn":
        _require(model_dir / "cnn.ckpt")
        _require(model_dir / "ccn.ckpt")
        run = evaluate_ccn_system(_load_pipeline(model_dir, cfg), cfg, ds)
        result = run.result
        if args.dump_ccn:
            write_ccn_dump(run, ds.split("test"), out / "ccn_dump.csv")
    else:
        net = load_checkpoint(_require(model_dir / "model.ckpt"), expect_kind=CLASSIFIER)
        result = evaluate_image_model(net, cfg, ds, args.mode)
    write_sweep_csv([result], out / "eval.csv")
    write_confusion_csv(result, out / "confusion.csv")
    _print_sweep([result])
    return 0


def _print_sweep(results) -> None:
    for res in results:
        line = " ".join(f"{snr:g}:{acc:.3f}" for snr, acc in zip(res.snrs, res.accuracies))
        print(f"{res.mode:>14}  {line}")


def _figures(out: Path, stem: str, sweeps, title: str) -> None:
    plotting = _plots()
    plotting.plot_accuracy_vs_snr(sweeps, out / f"{stem}.png", title)
    for res in sweeps:
        plotting.plot_confusion_grid(res, LABELS, out / f"{stem}_confusion_{res.mode}.png")


def cmd_sweep(args) -> int:
    cfg = _config(args)
    mode = args.mode or cfg.mode
    ds = _dataset(args, cfg)
    out = _out(args)
    result, net = run_sweep(cfg, ds, mode)
    write_sweep_csv([result], out / "sweep.csv")
    write_confusion_csv(result, out / "confusion.csv")
    if net is not None:
        save_checkpoint(net, out / "model.ckpt")
        result.report.write_csv(out / "train_report.csv")
        result.report.write_timing_csv(out / "timing.csv")
    if not args.no_plots:
        _figures(out, "sweep", [result], f"{mode} accuracy vs SNR")
    _print_sweep([result])
    return 0


def cmd_compare_convergence(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    out = _out(args)
    rows, sweeps = compare_convergence(cfg, ds)
    write_convergence_csv(rows, out / "convergence.csv")
    write_sweep_csv(sweeps, out / "sweep.csv")
    for res in sweeps:
        res.report.write_csv(out / f"train_report_{res.mode}.csv")
    if not args.no_plots:
        _figures(out, "sweep", sweeps, "polar vs iq")
    for row in rows:
        print(f"{row[0]:>6}: epochs to {row[4]:.0%} = {row[1]} ({row[3]}), {row[2]} s")
    return 0


def cmd_fading_experiment(args) -> int:
    cfg = _config(args)
    if not cfg.fading:
        cfg = cfg.replace(fading=True)
    ds = _dataset(args, cfg)
    out = _out(args)
    sweeps, models = run_fading_experiment(cfg, ds)
    write_sweep_csv(sweeps, out / "fading.csv")
    for res in sweeps:
        write_confusion_csv(res, out / f"confusion_{res.mode}.csv")
    write_ccn_dump(models["polar-cnn+ccn"], ds.split("test"), out / "ccn_dump.csv")
    if not args.no_plots:
        _figures(out, "fading", sweeps, "block fading: a in [%g, %g]" % (cfg.a_min, cfg.a_max))
    _print_sweep(sweeps)
    return 0


def cmd_cumulants_table(args) -> int:
    sys.stdout.write(cumulant_table_csv())
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    ds = Dataset(args.data)
    mode = args.mode
    spec = image_spec(cfg, mode)
    shapes = ds.manifest["image_shapes"]
    if mode not in shapes or tuple(shapes[mode]) != spec.shape:
        raise DataError(f"dataset at {ds.path} has no {mode} images of shape {spec.shape}")
    images = ds.images(args.split, mode)
    if not 0 <= args.index < len(images):
        raise InvalidArgumentError(f"index {args.index} out of range [0, {len(images)})")
    grid = np.asarray(images[args.index], dtype=np.float64)
    image = ConstellationImage(grid, grid, spec, -1)
    write_pgm(image, args.out)
    if args.png:
        label = LABELS[ds.split(args.split).labels[args.index]]
        _plots().plot_image(image, args.png, f"{args.split}[{args.index}] {label}")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--profile", default="desk", choices=["paper", "desk"], help="base profile (default desk)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="polaramc", description="Polar-feature modulation classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate and persist a dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=TRAIN_MODES, default="polar")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained model per SNR")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="directory written by train")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=TRAIN_MODES, default="polar")
    p.add_argument("--dump-ccn", action="store_true", help="write per-frame (delta_r, delta_theta, a, theta0)")
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in [
        ("sweep", cmd_sweep, "train and evaluate one feature mode across SNRs"),
        ("compare-convergence", cmd_compare_convergence, "epochs and seconds to the validation threshold"),
        ("fading-experiment", cmd_fading_experiment, "iq-CNN, polar-CNN and polar-CNN+CCN under fading"),
    ]:
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--generate", action="store_true", help="generate the dataset if it is missing")
        p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
        if name == "sweep":
            p.add_argument("--mode", choices=["polar", "iq", "cumulants"])
        p.set_defaults(func=func)

    p = sub.add_parser("cumulants-table", parents=[common], help="theoretical cumulants as CSV on stdout")
    p.set_defaults(func=cmd_cumulants_table)

    p = sub.add_parser("render", parents=[common], help="export one dataset image as PGM")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--mode", choices=["polar", "iq"], default="polar")
    p.add_argument("--out", required=True, help="PGM path")
    p.add_argument("--png", help="also write a labelled PNG here")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"polaramc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"polaramc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"polaramc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
