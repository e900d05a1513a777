"""Command-line interface: one executable, one subcommand per pipeline stage."""

import argparse
import pathlib
import sys

from . import baselines, model as model_mod, pipeline, synth
from .errors import YieldNetError
from .ingest import DEFAULT_BANDS, DEFAULT_TIMESTEPS
from .pipeline import RunConfig

SUBCOMMANDS = ("synth", "fit-bins", "ingest", "train", "evaluate", "ablate", "params")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="yieldnet",
        description="Two-crop yield prediction pipeline over histogram cubes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate the synthetic raster/mask dataset"),
        ("fit-bins", "fit per-band bin edges on training-year pixels"),
        ("ingest", "convert rasters + masks into histogram cube files"),
        ("train", "train the configured model on the training years"),
        ("evaluate", "evaluate the checkpoint; write CSV reports and scatter SVGs"),
        ("ablate", "train the joint net and both single-head variants, compare"),
        ("params", "print the exact trainable parameter count and breakdown"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=pathlib.Path, default=None,
                       help="JSON run-config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker cap for parallel stages")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        cfg = cfg.override(key.strip(), raw.strip())
    if args.seed is not None:
        cfg = cfg.override("seed", str(args.seed))
    if args.jobs is not None:
        cfg = cfg.override("jobs", str(args.jobs))
    return cfg


def _cmd_synth(cfg: RunConfig) -> int:
    index = synth.gen_dataset(cfg.world_params(), cfg.data_dir, jobs=cfg.jobs)
    print(f"wrote {index}")
    return 0


def _cmd_fit_bins(cfg: RunConfig) -> int:
    path = pipeline.fit_bins_from_dir(cfg)
    print(f"wrote {path}")
    return 0


def _cmd_ingest(cfg: RunConfig) -> int:
    path = pipeline.ingest_from_dir(cfg)
    print(f"wrote {path}")
    return 0


def _cmd_train(cfg: RunConfig) -> int:
    result = pipeline.run_train(cfg)
    if hasattr(result, "loss_history"):
        history = result.loss_history
        if history:
            print(f"trained {cfg.model}: initial loss {history[0]:.6g}, "
                  f"final loss {history[-1]:.6g}")
        else:
            print(f"trained {cfg.model}: 0 iterations requested")
        print(f"checkpoint: {cfg.checkpoint}")
    else:
        paths = pipeline.tabular_checkpoint_paths(cfg.checkpoint)
        print(f"fitted {cfg.model} per crop: "
              + ", ".join(str(p) for p in paths.values()))
    return 0


def _cmd_evaluate(cfg: RunConfig) -> int:
    rows = pipeline.run_evaluate(cfg)
    report = pathlib.Path(cfg.out_dir) / "report"
    print(f"wrote {report / 'summary.csv'} ({len(rows)} rows)")
    return 0


def _cmd_ablate(cfg: RunConfig) -> int:
    _, path = pipeline.run_ablation(cfg)
    print(f"wrote {path}")
    return 0


def _cmd_params(cfg: RunConfig) -> int:
    t, b, d = DEFAULT_TIMESTEPS, cfg.bins, DEFAULT_BANDS
    if cfg.model in pipeline.NET_MODELS:
        net = pipeline.build_net(cfg.model, cfg, t, b, d)
        for name, count in model_mod.parameter_breakdown(net):
            print(f"{name:<28} {count:>12,}")
        print(f"total trainable parameters: {model_mod.count_parameters(net):,}")
    elif cfg.model in ("ridge", "lasso"):
        features = t * b * d
        print(f"{'weights':<28} {features:>12,}")
        print(f"{'intercept':<28} {1:>12,}")
        print(f"total trainable parameters: {features + 1:,}")
    elif cfg.model == "dfnn":
        net = baselines.dfnn_build(t * b * d, seed=0, width=cfg.dfnn_width,
                                   depth=cfg.dfnn_depth)
        for name, count in model_mod.parameter_breakdown(net):
            print(f"{name:<28} {count:>12,}")
        print(f"total trainable parameters: {net.trainable_count():,}")
    else:
        print(f"{cfg.model}: non-parametric (no fixed trainable parameter count)")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "fit-bins": _cmd_fit_bins,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "params": _cmd_params,
}


def dispatch(argv) -> int:
    """Run one subcommand; 0 on success, 2 on usage errors, 1 on failures."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args)
    except (ValueError, TypeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](cfg)
    except (YieldNetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
