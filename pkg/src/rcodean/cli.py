"""Command-line surface: dataset generation, training, evaluation,
prediction, weight reporting, and gradient verification.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error. The RCODEAN_LOG environment variable (error, info, debug) controls
logging verbosity. Every command echoes its fully resolved configuration,
and train writes it to the output directory before touching anything
else, so a run can be reproduced from its own records.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .bundle import load_bundle, save_bundle
from .data import (AttributeDataset, DEFAULT_SPLIT_FRACTIONS, gen_synthetic,
                   load_attr_list, save_gray_image, load_gray_image,
                   split_by_counts)
from .errors import RCodeanError, UsageError
from .network import gradient_check
from .pipeline import (EpochStats, PipelineConfig, evaluate, predict,
                       train_full)

log = logging.getLogger("rcodean")


@dataclass
class RunConfig:
    """Resolved settings for a training run: data source, splits, output
    location, and every pipeline hyperparameter."""
    data: str | None = None
    images: str | None = None
    synthetic_n: int | None = None
    k: int = 4
    split_fractions: tuple = DEFAULT_SPLIT_FRACTIONS
    split_counts: tuple | None = None
    out: str = "run"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        if self.split_counts is not None:
            d["split_counts"] = list(self.split_counts)
        return d


def _setup_logging() -> None:
    level = os.environ.get("RCODEAN_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"RCODEAN_LOG must be one of {sorted(levels)}, got {level!r}")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers.clear()
    log.addHandler(handler)
    log.setLevel(levels[level])


def _fmt(value: float) -> str:
    """Shortest round-trip float text; keeps CSVs byte-stable across runs."""
    return repr(float(value))


# ---------------------------------------------------------------------------
# argument plumbing

_PIPELINE_FLAGS = [
    ("l", int), ("alpha", float), ("beta", float), ("lam", float),
    ("lr", float), ("epochs", int), ("batch_size", int), ("patience", int),
    ("seed", int), ("head_epochs", int), ("head_lr", float),
    ("weight_steps", int), ("weight_lr", float), ("forest_trees", int),
    ("forest_depth", int), ("svm_epochs", int), ("svm_reg", float),
    ("jobs", int),
]


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    for name, typ in _PIPELINE_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)


def _parse_triple(text: str, caster):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated values, got {text!r}")
    return tuple(caster(p) for p in parts)


def _resolve_run_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    settings: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        settings.update(json.loads(path.read_text()))
    pipe_fields = {f.name for f in dataclasses.fields(PipelineConfig)}
    pipe_kwargs = {k: v for k, v in settings.items() if k in pipe_fields}
    run_kwargs = {k: v for k, v in settings.items()
                  if k not in pipe_fields and k in
                  {f.name for f in dataclasses.fields(RunConfig)}}
    for name, _ in _PIPELINE_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            pipe_kwargs[name] = value
    cfg = RunConfig(**run_kwargs)
    cfg.pipeline = PipelineConfig(**pipe_kwargs)
    if args.data is not None:
        cfg.data = args.data
    if getattr(args, "images", None) is not None:
        cfg.images = args.images
    if getattr(args, "synthetic", None) is not None:
        cfg.synthetic_n = args.synthetic
    if getattr(args, "k", None) is not None:
        cfg.k = args.k
    if getattr(args, "split_fractions", None) is not None:
        cfg.split_fractions = _parse_triple(args.split_fractions, float)
    if getattr(args, "split_counts", None) is not None:
        cfg.split_counts = _parse_triple(args.split_counts, int)
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _load_dataset(cfg: RunConfig) -> AttributeDataset:
    if cfg.synthetic_n is not None:
        splits = split_by_counts(cfg.split_counts) if cfg.split_counts else None
        return gen_synthetic(cfg.synthetic_n, cfg.k, seed=cfg.pipeline.seed,
                             split_fractions=cfg.split_fractions, splits=splits)
    if not cfg.data:
        raise UsageError("dataset not found: pass --data/--images or --synthetic")
    data_path = Path(cfg.data)
    if not data_path.exists():
        raise UsageError(f"dataset not found: {data_path}")
    images_dir = Path(cfg.images) if cfg.images else data_path.parent / "images"
    if not images_dir.exists():
        raise UsageError(f"dataset not found: image directory {images_dir}")
    return load_attr_list(data_path, images_dir, cfg.split_fractions)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ds = gen_synthetic(args.n, args.k, seed=args.seed)
    lines = [str(ds.n), " ".join(ds.names)]
    for i in range(ds.n):
        name = f"img_{i:06d}.rcim"
        save_gray_image(out / "images" / name, ds.image(i))
        tokens = ["1" if v else "-1" for v in ds.labels[i]]
        lines.append(name + " " + " ".join(tokens))
    (out / "list_attr.txt").write_text("\n".join(lines) + "\n")
    config = {"command": "gen-synth", "n": args.n, "k": args.k,
              "seed": args.seed, "out": str(out)}
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    print(json.dumps(config, sort_keys=True))
    print(f"wrote {ds.n} images and list_attr.txt under {out}")
    return 0


def _write_losses_csv(path: Path, histories: list[list[EpochStats]]) -> None:
    rows = ["source,epoch,total,euc,cos,reg,lr"]
    for s, history in enumerate(histories):
        for st in history:
            rows.append(f"{s},{st.epoch},{_fmt(st.total)},{_fmt(st.euc)},"
                        f"{_fmt(st.cos)},{_fmt(st.reg)},{_fmt(st.lr)}")
    path.write_text("\n".join(rows) + "\n")


def cmd_train(args) -> int:
    cfg = _resolve_run_config(args)
    dataset = _load_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    resolved["command"] = "train"
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    print(json.dumps(resolved, sort_keys=True))
    bundle, histories = train_full(dataset, cfg.pipeline)
    _write_losses_csv(out / "losses.csv", histories)
    save_bundle(bundle, out / "model.rcbn")
    print(f"bundle written to {out / 'model.rcbn'}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    cfg = _resolve_run_config(args)
    cfg.k = bundle.k
    dataset = _load_dataset(cfg)
    report = evaluate(bundle, dataset, args.split)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    resolved.update({"command": "eval", "bundle": str(args.bundle),
                     "split": args.split})
    (out / "eval_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    print(json.dumps(resolved, sort_keys=True))
    rows = ["attribute,accuracy_pct"]
    for name, acc in zip(report.attribute_names, report.accuracy):
        rows.append(f"{name},{_fmt(100.0 * acc)}")
    rows.append(f"mean,{_fmt(100.0 * report.mean_accuracy)}")
    (out / "accuracy.csv").write_text("\n".join(rows) + "\n")
    ablation = ["classifier,mean_accuracy_pct"]
    for name, (_, mean) in sorted(report.classifier_accuracy.items()):
        ablation.append(f"{name},{_fmt(100.0 * mean)}")
    (out / "ablation.csv").write_text("\n".join(ablation) + "\n")
    print(f"mean accuracy {100.0 * report.mean_accuracy:.2f}% over "
          f"{len(report.attribute_names)} attributes; reports in {out}")
    return 0


def cmd_predict(args) -> int:
    log.info("resolved config: %s", json.dumps(
        {"command": "predict", "bundle": str(args.bundle),
         "image": str(args.image)}, sort_keys=True))
    bundle = load_bundle(args.bundle)
    image = load_gray_image(args.image)
    bits, conf = predict(bundle, image)
    print("attribute,bit,confidence")
    for name, b, c in zip(bundle.attribute_names, bits, conf):
        print(f"{name},{int(b)},{_fmt(c)}")
    return 0


def cmd_report_weights(args) -> int:
    log.info("resolved config: %s", json.dumps(
        {"command": "report-weights", "bundle": str(args.bundle),
         "out": args.out and str(args.out)}, sort_keys=True))
    bundle = load_bundle(args.bundle)
    w = bundle.patch_weights.values
    header = "attribute," + ",".join([f"patch{i + 1}" for i in range(9)] + ["full_face"])
    rows = [header]
    for name, row in zip(bundle.attribute_names, w):
        rows.append(name + "," + ",".join(_fmt(v) for v in row))
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"weights written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError("gradcheck requires trials >= 1")
    report = gradient_check(seed=args.seed, trials=args.trials,
                            corrupt_cosine=args.corrupt_cosine)
    print(json.dumps({"command": "gradcheck", "seed": args.seed,
                      "trials": args.trials}, sort_keys=True))
    for group in report.groups:
        marker = "ok" if group.passed else "FAIL"
        print(f"{marker} {group.name}: worst relative error {group.worst_rel:.3e}")
    worst = report.worst()
    print(f"worst overall: {worst.name} at {worst.worst_rel:.3e} "
          f"over {report.trials} trials")
    if not report.passed:
        failing = [g.name for g in report.groups if not g.passed]
        print(f"gradient check FAILED for: {', '.join(failing)}", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcodean",
        description="Cosine+Euclidean residual autoencoder pipeline for "
                    "patch-based facial attribute prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train the full pipeline")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--data", default=None, help="attribute list file")
    p.add_argument("--images", default=None, help="image directory")
    p.add_argument("--synthetic", type=int, default=None,
                   help="train on an in-memory synthetic dataset of this size")
    p.add_argument("--k", type=int, default=None, help="synthetic attribute count")
    p.add_argument("--split-fractions", default=None, help="e.g. 0.8,0.1,0.1")
    p.add_argument("--split-counts", default=None, help="e.g. 1000,200,200")
    p.add_argument("--out", default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a bundle on a dataset split")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--images", default=None)
    p.add_argument("--synthetic", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--split-fractions", default=None)
    p.add_argument("--split-counts", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict attributes for one image")
    p.add_argument("--bundle", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report-weights", help="dump the learned patch weights")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report_weights)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--corrupt-cosine", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except RCodeanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
