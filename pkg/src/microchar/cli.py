"""``microchar`` command line.

Exit status: 0 success, 1 usage error, 2 runtime failure.  Option values
come from the command line first, then the ``--config`` JSON file (either
flat or keyed by subcommand), then built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench as bench_mod
from . import dense, evaluate, models, pipeline, synth
from .errors import MicrocharError

log = logging.getLogger("microchar")

KINDS = ("particles", "pores", "grains", "mixed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _split(text: str, n: int) -> tuple[int, int, int]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3 or any(p < 0 for p in parts):
        raise UsageError("--split takes three non-negative numbers, e.g. 0.8,0.1,0.1")
    if all(p.is_integer() for p in parts) and sum(parts) == n:
        return tuple(int(p) for p in parts)
    total = sum(parts)
    train = int(round(n * parts[0] / total))
    val = int(round(n * parts[1] / total))
    return train, val, n - train - val


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="microchar", description="Microstructure defect and grain-size characterization")
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset and manifest")
    g.add_argument("--kind", default="particles", help="particles|pores|grains|mixed|classes")
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test counts or fractions")
    g.add_argument("--out", default="data")
    g.add_argument("--no-labels", action="store_true", help="skip WCBD/PSILM label generation")

    t = sub.add_parser("train", help="train one network from a manifest")
    t.add_argument("--net", choices=("binary", "rgb", "classifier", "regressor"), default="binary")
    t.add_argument("--manifest", required=False)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--spec", help="ArchSpec JSON (binary/rgb nets)")
    t.add_argument("--out", help="checkpoint path")

    s = sub.add_parser("search", help="CMA-ES search over RGB CEDN filter sizes")
    s.add_argument("--manifest")
    s.add_argument("--gens", type=int, default=8)
    s.add_argument("--lambda", dest="lam", type=int, default=6)
    s.add_argument("--proxy-epochs", type=int, default=1)
    s.add_argument("--proxy-size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", default="search")

    e = sub.add_parser("eval", help="held-out evaluation report")
    e.add_argument("--branch", choices=("binary", "boxes", "rgb", "classifier", "regression"), default="binary")
    e.add_argument("--manifest")
    e.add_argument("--checkpoint", help="network checkpoint (boxes without one uses classical WCBD)")
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="JSON report path (default: stdout)")

    r = sub.add_parser("pipeline", help="characterize an image or a directory of images")
    r.add_argument("--input")
    r.add_argument("--mode", choices=pipeline.MODES, default="auto")
    r.add_argument("--checkpoints", default="checkpoints")
    r.add_argument("--out", default="out")
    r.add_argument("--min-confidence", type=float, default=pipeline.DEFAULT_MIN_CONFIDENCE)
    r.add_argument("--workers", type=int)

    b = sub.add_parser("bench", help="time PSILM against the network path")
    b.add_argument("--n", type=int, default=10)
    b.add_argument("--method", choices=("psilm", "ml_pipeline", "both"), default="both")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--size", type=int, default=64)
    b.add_argument("--checkpoints", default="checkpoints")
    b.add_argument("--out", default="bench")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse twice: the first pass finds --config, the second uses it as defaults."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    values = {**{k: v for k, v in cfg.items() if not isinstance(v, dict)}, **cfg.get(args.command, {})}
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def _need(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"{args.command}: --{n.replace('_', '-')} is required")


def cmd_generate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    kind = list(models.CLASSES) if args.kind == "classes" else args.kind
    if isinstance(kind, str) and kind not in KINDS:
        raise UsageError(f"unknown kind {kind!r}")
    manifest = synth.make_dataset(kind, args.n, _split(args.split, args.n), args.seed, args.out,
                                  size=args.size, labels=not args.no_labels)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    _need(args, "manifest", "out")
    opt = {k: v for k, v in {"epochs": args.epochs, "lr": args.lr, "batch": args.batch}.items() if v is not None}
    if args.net in ("binary", "rgb"):
        spec = dense.load_spec(args.spec) if args.spec else models.ArchSpec()
        spec = models.ArchSpec.from_dict({**spec.to_dict(), "out_channels": 1 if args.net == "binary" else 3})
        res = models.train_cedn(spec, args.manifest, seed=args.seed, checkpoint_path=args.out, **opt)
    elif args.net == "classifier":
        res = models.train_classifier(args.manifest, seed=args.seed, checkpoint_path=args.out, **opt)
    else:
        res = models.train_regressor(args.manifest, seed=args.seed, checkpoint_path=args.out, **opt)
    for h in res.history:
        log.info("epoch %d train %.5f val %.5f", h["epoch"], h["train_loss"], h["val_loss"])
    print(json.dumps({"checkpoint": args.out, "best_epoch": res.best_epoch, "best_val_loss": res.best_val}))
    return 0


def cmd_search(args) -> int:
    _need(args, "manifest")
    cfg = dense.DenseConfig(generations=args.gens, popsize=args.lam, proxy_epochs=args.proxy_epochs,
                            proxy_size=args.proxy_size, seed=args.seed,
                            workers=args.workers or pipeline.worker_count())
    if cfg.generations < 1 or cfg.popsize < 2:
        raise UsageError("--gens must be >= 1 and --lambda >= 2")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    task = dense.ProxyTask(args.manifest, cfg.proxy_size, cfg.proxy_epochs, cfg.lr, cfg.batch)
    res = dense.dense_search(cfg, task, out / "history.jsonl")
    dense.save_spec(out / "best_spec.json", res.best)
    print(json.dumps({"best_filters": list(res.best.filters), "best_fitness": res.best_fitness,
                      "history": str(out / "history.jsonl")}))
    return 0


def cmd_eval(args) -> int:
    _need(args, "manifest")
    net = models.load_net(args.checkpoint) if args.checkpoint else None
    if net is None and args.branch != "boxes":
        raise UsageError(f"eval --branch {args.branch} needs --checkpoint")
    fn = {"binary": evaluate.eval_binary, "rgb": evaluate.eval_rgb,
          "classifier": evaluate.eval_classifier, "regression": evaluate.eval_regression}
    if args.branch == "boxes":
        report = evaluate.eval_boxes(args.manifest, args.split, net)
    else:
        report = fn[args.branch](net, args.manifest, args.split)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_pipeline(args) -> int:
    _need(args, "input")
    if not Path(args.input).exists():
        raise UsageError(f"no such input: {args.input}")
    nets = pipeline.Checkpoints.load(args.checkpoints)
    reports = pipeline.run_pipeline(args.input, nets, args.out, args.mode, args.min_confidence, args.workers)
    for r in reports:
        status = r.error or f"{r.branch} ({r.predicted_class})"
        print(f"{r.input}: {status}")
    return 0


def cmd_bench(args) -> int:
    reports = bench_mod.bench(args.n, args.method, args.seed, args.checkpoints, args.size, args.out)
    for r in reports:
        print(f"{r.method}: {r.n} images, total {bench_mod.mmss(r.total_s)} ({r.total_s:.2f} s), "
              f"{r.per_image_mean_s:.3f} s/image")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "search": cmd_search, "eval": cmd_eval,
            "pipeline": cmd_pipeline, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MicrocharError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
