"""``malelm`` command line: convert, train, eval, bench, inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import elm, ensemble, imaging, metrics

log = logging.getLogger("malelm")


class UsageError(Exception):
    """Bad flags or config values; maps to exit code 2."""


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_fanin(text):
    if str(text).lower() == "full":
        return "full"
    return int(text)


def _parse_size(text):
    parts = str(text).lower().split("x")
    if len(parts) == 1:
        return int(parts[0]), int(parts[0])
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise ValueError(f"image size must be N or WxH, got {text!r}")


def _float_list(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


# Shared run settings: flag name -> (parser, default). Config files use the same
# names (with or without leading dashes); flags override config, config overrides
# these defaults.
RUN_OPTIONS = {
    "neurons": (int, 1024),
    "activation": (str, "relu"),
    "alpha": (float, 1.0),
    "dropout-fanin": (_parse_fanin, "full"),
    "rbf-width-scale": (float, 1.0),
    "ridge": (float, 0.0),
    "ensemble": (int, 1),
    "weighted": (_parse_bool, False),
    "vec1d": (int, None),
    "image-size": (_parse_size, None),
    "resize-method": (str, "bilinear"),
    "test-fraction": (float, 0.2),
    "seed": (int, None),
    "tie-seed": (int, 0),
    "jobs": (int, 1),
    "strict-repro": (_parse_bool, False),
}
DEFAULT_SEED = 0


def _dest(name: str) -> str:
    return name.replace("-", "_")


def read_config_file(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in RUN_OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        parser, _ = RUN_OPTIONS[key]
        try:
            values[_dest(key)] = parser(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: invalid {key}: {exc}") from None
    return values


def resolve_settings(args: argparse.Namespace, names) -> dict:
    """Merge defaults, then ``--config`` file values, then explicit flags."""
    settings = {_dest(n): RUN_OPTIONS[n][1] for n in names}
    explicit = {k: v for k, v in vars(args).items() if k in settings}
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        settings.update({k: v for k, v in file_values.items() if k in settings})
        explicit_seed = "seed" in explicit or "seed" in file_values
    else:
        explicit_seed = "seed" in explicit
    settings.update(explicit)
    if settings.get("strict_repro") and "seed" in settings and not explicit_seed:
        raise UsageError("--strict-repro requires an explicit --seed")
    if "seed" in settings and settings["seed"] is None:
        settings["seed"] = DEFAULT_SEED
    return settings


def _add_run_options(p: argparse.ArgumentParser, names) -> None:
    helps = {
        "neurons": "hidden neurons (default 1024)",
        "activation": f"one of {', '.join(elm.ACTIVATIONS)} (default relu)",
        "alpha": "MLP/RBF mixing weight in [0,1]; 1 = pure MLP (default 1.0)",
        "dropout-fanin": "inputs per hidden neuron, or 'full' (default full)",
        "rbf-width-scale": "RBF width multiplier, used when alpha < 1",
        "ridge": f"ridge term on the normal matrix (default 0; e.g. {elm.DEFAULT_RIDGE})",
        "ensemble": "number of voting ELMs (default 1)",
        "weighted": "scale rows by sqrt(S/S_j) class weights",
        "vec1d": "use 1-D block-averaged vectors of this length",
        "image-size": "resize images to N or WxH and flatten (default 64)",
        "resize-method": "bilinear or nearest",
        "test-fraction": "stratified test fraction (default 0.2)",
        "seed": "random seed for split and model initialization",
        "tie-seed": "seed for random tie-breaking in votes",
        "jobs": "parallel workers",
        "strict-repro": "refuse to run without an explicit --seed",
    }
    for name in names:
        parser, _ = RUN_OPTIONS[name]
        if parser is _parse_bool:
            p.add_argument(f"--{name}", dest=_dest(name), action="store_const", const=True,
                           default=argparse.SUPPRESS, help=helps[name])
        else:
            p.add_argument(f"--{name}", dest=_dest(name), type=parser,
                           default=argparse.SUPPRESS, help=helps[name])


def featurization_from(settings: dict, fallback: dict | None = None) -> ds.Featurization | None:
    vec1d, size = settings.get("vec1d"), settings.get("image_size")
    if vec1d is not None and size is not None:
        raise UsageError("--vec1d and --image-size are mutually exclusive")
    method = settings.get("resize_method", "bilinear")
    if vec1d is not None:
        if vec1d < 1:
            raise UsageError("invalid --vec1d: must be >= 1")
        return ds.Featurization(mode="1d", length=vec1d, resize_method=method)
    if size is not None:
        w, h = size
        if w < 1 or h < 1:
            raise UsageError("invalid --image-size: dimensions must be >= 1")
        return ds.Featurization(mode="2d", width=w, height=h, resize_method=method)
    if fallback is not None:
        return ds.Featurization.from_dict(fallback)
    return ds.Featurization(resize_method=method)


def elm_config_from(settings: dict) -> elm.ElmConfig:
    checks = [
        ("neurons", settings["neurons"] >= 1, "must be >= 1"),
        ("activation", settings["activation"] in elm.ACTIVATIONS, f"must be one of {elm.ACTIVATIONS}"),
        ("alpha", 0.0 <= settings["alpha"] <= 1.0, "must lie in [0, 1]"),
        ("dropout-fanin", settings["dropout_fanin"] == "full" or settings["dropout_fanin"] >= 1,
         "must be 'full' or >= 1"),
        ("rbf-width-scale", settings["rbf_width_scale"] > 0, "must be positive"),
        ("ridge", settings["ridge"] >= 0, "must be non-negative"),
    ]
    for name, ok, msg in checks:
        if not ok:
            raise UsageError(f"invalid --{name}: {msg}")
    return elm.ElmConfig(
        hidden_neurons=settings["neurons"],
        activation=settings["activation"],
        alpha=settings["alpha"],
        fan_in=settings["dropout_fanin"],
        rbf_width_scale=settings["rbf_width_scale"],
        seed=settings["seed"],
        ridge=settings["ridge"],
    )


def _check_common(settings: dict) -> None:
    if "test_fraction" in settings and not 0.0 < settings["test_fraction"] < 1.0:
        raise UsageError("invalid --test-fraction: must lie in (0, 1)")
    if "ensemble" in settings and settings["ensemble"] < 1:
        raise UsageError("invalid --ensemble: must be >= 1")
    if "jobs" in settings and settings["jobs"] < 1:
        raise UsageError("invalid --jobs: must be >= 1")
    if settings.get("resize_method", "bilinear") not in imaging.RESIZE_METHODS:
        raise UsageError(f"invalid --resize-method: must be one of {imaging.RESIZE_METHODS}")


def _write_text(path, text: str) -> None:
    elm.atomic_write(path, text.encode("utf-8"))


# -- convert ---------------------------------------------------------------


def _collect_inputs(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(f for f in p.rglob("*") if f.is_file()))
        else:
            files.append(p)
    return files


def cmd_convert(args) -> int:
    files = _collect_inputs(args.inputs)
    if not files:
        print("no inputs", file=sys.stderr)
        return 2
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".pgm" if args.format == "pgm" else ".png"
    rows, failures = [], 0
    for f in files:
        try:
            image = imaging.bytes_to_image(f.read_bytes(), width=args.width)
        except (OSError, ValueError) as exc:
            log.warning("cannot convert %s: %s", f, exc)
            failures += 1
            continue
        target = out / f"{f.stem}{suffix}"
        elm.atomic_write(target, imaging.encode_image(image, args.format))
        rows.append([f.name, f.stat().st_size, image.width, image.height])
    manifest = io.StringIO()
    w = csv.writer(manifest, lineterminator="\n")
    w.writerow(["file", "size_bytes", "width", "height"])
    w.writerows(rows)
    _write_text(out / "manifest.csv", manifest.getvalue())
    print(f"converted {len(rows)} of {len(files)} files into {out}")
    return 1 if failures == len(files) else 0


# -- train -----------------------------------------------------------------

TRAIN_OPTIONS = [
    "neurons", "activation", "alpha", "dropout-fanin", "rbf-width-scale", "ridge",
    "ensemble", "weighted", "vec1d", "image-size", "resize-method", "test-fraction",
    "seed", "tie-seed", "jobs", "strict-repro",
]


def _load_corpus(path, featurization, jobs):
    try:
        return ds.load_corpus(path, featurization, jobs=jobs)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    settings = resolve_settings(args, TRAIN_OPTIONS)
    _check_common(settings)
    feat = featurization_from(settings)
    config = elm_config_from(settings)
    if config.fan_in != "full" and config.fan_in > feat.dim:
        raise UsageError(f"invalid --dropout-fanin: {config.fan_in} exceeds input dimension {feat.dim}")

    data = _load_corpus(args.corpus, feat, settings["jobs"])
    train, test = ds.stratified_split(data, settings["test_fraction"], settings["seed"])
    weights = ds.class_weights(data.catalog) if settings["weighted"] else None
    extra = {
        "featurization": feat.to_dict(),
        "split": {"test_fraction": settings["test_fraction"], "seed": settings["seed"]},
        "weighted": settings["weighted"],
    }
    tie_seed = settings["tie_seed"]
    count = settings["ensemble"]

    if count > 1:
        model = ensemble.train_ensemble(train, config, count, settings["seed"], weights,
                                        jobs=settings["jobs"], extra=extra)
        ensemble.save(model, args.output)
        train_acc = float(np.mean(ensemble.vote(model, train.X, tie_seed) == train.y))
        members = ensemble.evaluate_members(model, test, tie_seed)
        report = metrics.report_from_labels(test.y, members.predictions, data.catalog.names)
        extra_lines = [
            f"member-mean accuracy   {members.mean:.4f}",
            f"member-stddev accuracy {members.std:.4f}",
        ]
    else:
        model = elm.train(train, config, weights=weights, extra=extra)
        elm.save(model, args.output)
        train_acc = float(np.mean(elm.predict(model, train.X) == train.y))
        report = metrics.evaluate(model.predict, test)
        extra_lines = []

    print(f"samples: {len(train)} train / {len(test)} test, {len(data.catalog)} classes, dim {feat.dim}")
    print(f"train accuracy: {train_acc:.4f}")
    print(f"test accuracy: {report.accuracy:.4f}")
    for line in extra_lines:
        print(line)
    print(f"wrote {args.output}")
    if args.report_dir:
        _write_reports(Path(args.report_dir), report, extra_lines)
    return 0


def _write_reports(out_dir: Path, report, extra_lines) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_text(out_dir / "report.csv", metrics.emit_report(report, "csv"))
    _write_text(out_dir / "report.txt", metrics.emit_report(report, "table", extra_lines))


# -- eval ------------------------------------------------------------------

EVAL_OPTIONS = ["vec1d", "image-size", "resize-method", "test-fraction", "seed", "tie-seed", "jobs"]


def cmd_eval(args) -> int:
    model = ensemble.load_any(args.model)
    info = model.extra
    split_info = info.get("split") or {}
    settings = resolve_settings(args, EVAL_OPTIONS)
    if "test_fraction" not in vars(args):
        settings["test_fraction"] = split_info.get("test_fraction", 0.2)
    if "seed" not in vars(args):
        settings["seed"] = split_info.get("seed", DEFAULT_SEED)
    _check_common(settings)
    feat = featurization_from(settings, fallback=info.get("featurization"))
    if feat.dim != model.input_dim:
        raise UsageError(
            f"dimension mismatch: model expects {model.input_dim} inputs but the corpus "
            f"featurization ({feat.mode}) produces {feat.dim}"
        )
    data = _load_corpus(args.corpus, feat, settings["jobs"])
    if data.catalog.names != model.class_names:
        raise UsageError(
            f"class mismatch: model knows {list(model.class_names)}, corpus has {list(data.catalog.names)}"
        )

    split = args.split or ("test" if split_info else "all")
    if split == "all":
        subset = data
    else:
        train, test = ds.stratified_split(data, settings["test_fraction"], settings["seed"])
        subset = train if split == "train" else test

    tie_seed = settings["tie_seed"]
    extra_lines = []
    if isinstance(model, ensemble.Ensemble):
        members = ensemble.evaluate_members(model, subset, tie_seed)
        report = metrics.report_from_labels(subset.y, members.predictions, model.class_names)
        extra_lines = [
            f"members                {len(model)}",
            f"member-mean accuracy   {members.mean:.4f}",
            f"member-stddev accuracy {members.std:.4f}",
        ]
    else:
        report = metrics.evaluate(model.predict, subset)

    out_dir = Path(args.out_dir)
    _write_reports(out_dir, report, extra_lines)
    print(f"split: {split} ({len(subset)} samples)")
    print(metrics.emit_report(report, "table", extra_lines), end="")
    print(f"wrote {out_dir / 'report.csv'} and {out_dir / 'report.txt'}")
    return 0


# -- bench -----------------------------------------------------------------

BENCH_OPTIONS = [
    "activation", "dropout-fanin", "rbf-width-scale", "ridge", "vec1d", "image-size",
    "resize-method", "test-fraction", "seed", "jobs", "strict-repro",
]
BENCH_COLUMNS = ["alpha", "neurons", "count", "total_seconds", "seconds_per_model"]


def time_training(trainset, config: elm.ElmConfig, count: int, base_seed: int = 0) -> float:
    """Wall-clock seconds to train ``count`` independently seeded models."""
    start = time.perf_counter()
    for i in range(count):
        elm.train(trainset, config.replace(seed=ensemble.member_seed(base_seed, i)))
    return time.perf_counter() - start


def cmd_bench(args) -> int:
    settings = resolve_settings(args, BENCH_OPTIONS)
    settings["neurons"], settings["alpha"] = 1, 1.0
    _check_common(settings)
    feat = featurization_from(settings)
    if any(not 0.0 <= a <= 1.0 for a in args.alphas):
        raise UsageError("invalid --alphas: values must lie in [0, 1]")
    if any(n < 1 for n in args.neurons):
        raise UsageError("invalid --neurons: values must be >= 1")
    if args.count < 1:
        raise UsageError("invalid --count: must be >= 1")
    base = elm_config_from(settings)

    data = _load_corpus(args.corpus, feat, settings["jobs"])
    train, _ = ds.stratified_split(data, settings["test_fraction"], settings["seed"])
    rows = []
    for alpha in args.alphas:
        for neurons in args.neurons:
            cfg = base.replace(alpha=alpha, hidden_neurons=neurons)
            total = time_training(train, cfg, args.count, settings["seed"])
            rows.append([alpha, neurons, args.count, f"{total:.6f}", f"{total / args.count:.6f}"])
            print(f"alpha={alpha} neurons={neurons}: {total:.3f} s for {args.count} models")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    w.writerows(rows)
    _write_text(args.output, buf.getvalue())
    print(f"wrote {args.output}")
    return 0


# -- inspect ---------------------------------------------------------------


def cmd_inspect(args) -> int:
    data = Path(args.model).read_bytes()
    if data[:4] == ensemble.ENSEMBLE_MAGIC:
        model = ensemble.loads(data)
        first, _ = elm.read_header(elm.dumps(model.members[0]))
        info = {"type": "ensemble", "members": len(model), "base_seed": model.base_seed, "member_header": first}
    else:
        header, _ = elm.read_header(data)
        info = {"type": "model", **header}
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malelm", description="ELM malware image classification")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="turn executables into grayscale images")
    p.add_argument("inputs", nargs="*", help="files or directories")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--format", choices=("png", "pgm"), default="png")
    p.add_argument("--width", type=int, default=None, help="fixed width instead of the size table")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train an ELM or a voting ensemble")
    p.add_argument("corpus", help="directory with one subdirectory per class")
    p.add_argument("-o", "--output", default="model.elm", help="model file to write")
    p.add_argument("--report-dir", default=None, help="write test-set report.csv/report.txt here")
    p.add_argument("--config", default=None, help="key=value settings file")
    _add_run_options(p, TRAIN_OPTIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model or ensemble file on a corpus")
    p.add_argument("model")
    p.add_argument("corpus")
    p.add_argument("--split", choices=("test", "train", "all"), default=None,
                   help="which part of the corpus to score (default: the model's test split)")
    p.add_argument("--out-dir", default=".", help="directory for report.csv/report.txt")
    p.add_argument("--config", default=None, help="key=value settings file")
    _add_run_options(p, EVAL_OPTIONS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time ELM training over an alpha x neurons grid")
    p.add_argument("corpus")
    p.add_argument("--alphas", type=_float_list, default=[1.0, 0.5])
    p.add_argument("--neurons", type=_int_list, default=[512, 1024])
    p.add_argument("--count", type=int, default=5, help="models per grid point")
    p.add_argument("-o", "--output", default="bench.csv")
    p.add_argument("--config", default=None, help="key=value settings file")
    _add_run_options(p, BENCH_OPTIONS)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print a model file's header")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
