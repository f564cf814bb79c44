"""``msif`` command line: generate, train, eval, sweep, plot.

Exit codes: 0 success, 1 usage error (bad flags, missing inputs, invalid
config), 2 runtime failure.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from msif.config import ConfigError, load_experiment_config, read_flat_config, write_flat_config
from msif.data.io import DatasetError, MissingDatasetError, load_dataset, save_dataset
from msif.data.synth import GeneratorConfig, generate_scene
from msif.flow import FlowParams, scene_flows
from msif.metrics import MetricsReport
from msif.samples import parallel_map, prepare
from msif.train import (DivergenceError, IncompatibleCheckpointError, evaluate, load_model, select,
                        split_scenes, train)

log = logging.getLogger("msif")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def scene_seed(seed, k):
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _require_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} not found: {p}")
    return p


# -- commands ----------------------------------------------------------

def cmd_generate(args):
    d = read_flat_config(args.config) if args.config else {}
    cfg = GeneratorConfig.from_dict(d)
    fp = FlowParams(window=args.flow_window, levels=args.flow_levels, iterations=args.flow_iters)

    def one(k):
        scene = generate_scene(cfg, scene_seed(args.seed, k), args.gamma)
        return scene.with_flows(scene_flows(scene.frames, fp))

    scenes = parallel_map(one, range(cfg.n_scenes))
    out = Path(args.out)
    dirs = save_dataset(out, scenes)
    write_flat_config(out / "manifest", {"seed": args.seed, "gamma": args.gamma, "n_scenes": cfg.n_scenes,
                                         "flow_window": fp.window, "flow_levels": fp.levels,
                                         "flow_iters": fp.iterations})
    print(f"wrote {len(dirs)} scenes to {out} (seed {args.seed}, gamma {args.gamma:g})")
    return [out / "manifest", *dirs]


def _experiment_config(args):
    overrides = {"seed": getattr(args, "seed", None), "epochs": getattr(args, "epochs", None)}
    if getattr(args, "channels", None):
        overrides["channels"] = args.channels
    return load_experiment_config(args.config, **overrides)


def _load_data(path):
    _require_dir(path, "dataset directory")
    try:
        return load_dataset(path)
    except MissingDatasetError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args):
    scenes = _load_data(args.data)
    cfg = _experiment_config(args)
    out = Path(args.out)
    res = train(cfg, scenes, out_dir=out, resume=args.resume)
    write_flat_config(out / "config.toml", cfg.to_dict())
    _, tr, va = res.history[-1]
    print(f"final train NLL {tr:.6f} / val NLL {va:.6f} (best epoch {res.best_epoch})")
    return [*res.artifacts, out / "config.toml"]


def _eval_split(meta, n_scenes, seed, which):
    if which == "all":
        return list(range(n_scenes))
    split = meta.get("split")
    if not split or max(sum(split.values(), [])) >= n_scenes:
        split = split_scenes(n_scenes, seed)
    return split[which]


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    scenes = _load_data(args.data)
    cfg = _experiment_config(args) if (args.config or args.channels) else None
    model, _, meta = load_model(ckpt, cfg)
    report = _evaluate(model, meta, scenes, args.k, args.seed, args.split, label=args.label or ckpt.parent.name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "metrics.json")
    with open(out / "per_sample.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "ade", "fde"])
        for i, (a, f) in enumerate(report.per_sample):
            w.writerow([i, repr(a), repr(f)])
    print(f"ADE / FDE: {report.ade:.4f} / {report.fde:.4f} px (k={args.k}, {report.n_samples} samples)")
    return [out / "metrics.json", out / "per_sample.csv"]


def _evaluate(model, meta, scenes, k, seed, which, label=""):
    prepared = prepare(scenes, model.config)
    chosen = _eval_split(meta, len(scenes), model.config.seed, which)
    samples = select(prepared.samples, chosen)
    report = evaluate(model, prepared, samples, k=k, seed=seed, label=label)
    report.loss_history = [list(r) for r in meta.get("history", [])]
    return report


def _gamma_dirs(root):
    found = {}
    for p in Path(root).glob("gamma_*"):
        try:
            found[float(p.name[len("gamma_"):])] = p
        except ValueError:
            continue
    return found


def cmd_sweep(args):
    root = _require_dir(args.data_root, "sweep data root")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    try:
        gammas = sorted({float(g) for g in args.gammas.split(",") if g.strip()})
    except ValueError:
        raise UsageError(f"--gammas must be comma-separated numbers, got {args.gammas!r}") from None
    if not gammas:
        raise UsageError("--gammas is empty")
    available = _gamma_dirs(root)
    missing = [g for g in gammas if not any(np.isclose(g, a) for a in available)]
    if missing:
        raise DatasetError(f"no dataset for gamma {', '.join(f'{g:g}' for g in missing)} under {root} "
                           f"(expected directories named gamma_<value>)")
    model, _, meta = load_model(ckpt)
    rows = []
    for g in gammas:
        path = next(p for a, p in available.items() if np.isclose(g, a))
        rep = _evaluate(model, meta, load_dataset(path), args.k, args.seed, args.split)
        rows.append((g, rep.ade, rep.fde))
        print(f"gamma {g:g}: ADE / FDE {rep.ade:.4f} / {rep.fde:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "ade", "fde"])
        for g, a, f in rows:
            w.writerow([repr(g), repr(a), repr(f)])
    from msif.plotting import sweep_svg
    sweep_svg(out / "sweep.svg", [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows])
    return [out / "sweep.csv", out / "sweep.svg"]


def cmd_plot(args):
    from msif.plotting import histogram_svg, loss_curve_svg

    reports = []
    for p in args.metrics:
        try:
            reports.append(MetricsReport.load(p))
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
    if not any(r.per_sample for r in reports):
        raise ValueError("metrics reports contain no per-sample errors")
    for r, p in zip(reports, args.metrics):
        r.label = r.label or Path(p).parent.name
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    histogram_svg(out / "errors.svg", reports)
    loss_curve_svg(out / "loss.svg", {r.label: r.loss_history for r in reports if r.loss_history})
    return [out / "errors.svg", out / "loss.svg"]


# -- parser ------------------------------------------------------------

def build_parser():
    p = _Parser(prog="msif", description="Multi-stream trajectory prediction toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic dataset with precomputed flow")
    g.add_argument("--config", help="generator config file (flat key = value)")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--gamma", type=float, default=1.0, help="exposure gamma, >1 darkens (default 1.0)")
    g.add_argument("--flow-window", type=int, default=15, help="Lucas-Kanade window (default 15)")
    g.add_argument("--flow-levels", type=int, default=3, help="pyramid levels (default 3)")
    g.add_argument("--flow-iters", type=int, default=3, help="warping iterations per level (default 3)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write checkpoints plus loss.csv")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--config", help="experiment config file (flat key = value)")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--epochs", type=int, help="override the config epoch count")
    t.add_argument("--channels", help="comma list overriding the config channels")
    t.add_argument("--resume", help="continue from a last.ckpt")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="best-of-k ADE/FDE of a checkpoint")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--k", type=int, default=20, help="samples per prediction (default 20)")
    e.add_argument("--out", default=".", help="directory for metrics.json and per_sample.csv")
    e.add_argument("--config", help="expected experiment config; must match the checkpoint")
    e.add_argument("--channels", help="expected channels; must match the checkpoint")
    e.add_argument("--split", choices=("test", "val", "train", "all"), default="test", help="scenes to score")
    e.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    e.add_argument("--label", help="name stored in the report")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="evaluate one checkpoint across gamma datasets")
    s.add_argument("--data-root", required=True, help="directory holding gamma_<value> datasets")
    s.add_argument("--gammas", default="1.0,1.4,1.8,2.0,2.5", help="comma list (default 1.0,1.4,1.8,2.0,2.5)")
    s.add_argument("--checkpoint", required=True, help="checkpoint file")
    s.add_argument("--out", default=".", help="directory for sweep.csv and sweep.svg")
    s.add_argument("--k", type=int, default=20, help="samples per prediction (default 20)")
    s.add_argument("--split", choices=("test", "val", "train", "all"), default="test", help="scenes to score")
    s.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="error histograms and loss curves as SVG")
    pl.add_argument("--metrics", nargs="+", required=True, help="metrics.json files")
    pl.add_argument("--out", required=True, help="output directory")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError, MissingDatasetError) as exc:
        print(f"msif {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"msif {args.command}: training diverged: {exc}", file=sys.stderr)
        return 2
    except IncompatibleCheckpointError as exc:
        print(f"msif {args.command}: incompatible checkpoint: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, DatasetError) as exc:
        print(f"msif {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
