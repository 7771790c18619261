"""Command-line entry point: ``kanevse <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model error,
4 acceptance gate failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import data, symbolic, telemetry, training
from .network import DimensionMismatch, NetworkError, decide, load_model, save_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL, EXIT_GATE = 0, 1, 2, 3, 4
MAX_BAD_ROW_FRACTION = 0.10
BENCH_WARMUP = 100

log = logging.getLogger("kanevse")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_atomic(path, payload) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def sidecar(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _read_dataset(path) -> data.TelemetryDataset:
    try:
        return data.read_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset: {exc}", EXIT_DATA) from None
    except data.DatasetError as exc:
        raise CliError(f"{path}: {exc}", EXIT_DATA) from None


def _read_model(path):
    try:
        return load_model(Path(path).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read model: {exc}", EXIT_MODEL) from None
    except NetworkError as exc:
        raise CliError(f"{path}: {exc}", EXIT_MODEL) from None


def _check_inputs(net, n_features: int = len(data.FEATURES)) -> None:
    if net.widths[0] != n_features or net.widths[-1] != 2:
        raise CliError(f"model expects {net.widths[0]} inputs / {net.widths[-1]} outputs; "
                       f"data has {n_features} features and the classifier needs 2 logits", EXIT_MODEL)


def _parse_mix(text: str) -> dict:
    mix = {}
    for part in text.split(","):
        kind, sep, frac = part.partition("=")
        if not sep:
            raise CliError(f"bad --mix entry {part!r}; expected kind=fraction", EXIT_USAGE)
        try:
            mix[kind.strip()] = float(frac)
        except ValueError:
            raise CliError(f"bad fraction in --mix entry {part!r}", EXIT_USAGE) from None
    return mix


def _parse_widths(text: str) -> list:
    try:
        widths = [int(w) for w in text.split(",")]
    except ValueError:
        raise CliError(f"bad --widths {text!r}", EXIT_USAGE) from None
    if len(widths) < 2 or min(widths) < 1:
        raise CliError(f"bad --widths {text!r}", EXIT_USAGE)
    return widths


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    if args.normal_seconds < 1 or args.attack_seconds < 1:
        raise CliError("--normal-seconds and --attack-seconds must be positive", EXIT_USAGE)
    try:
        profile = telemetry.ChargerProfile()
        if args.profile_file:
            profile = telemetry.ChargerProfile(**json.loads(Path(args.profile_file).read_text()))
        mix = _parse_mix(args.mix) if args.mix else dict(telemetry.DEFAULT_MIX)
        cfg = telemetry.SimConfig(args.seed, args.normal_seconds, args.attack_seconds, mix, profile)
        ds = telemetry.gen_dataset(cfg)
    except (OSError, TypeError, ValueError) as exc:
        if isinstance(exc, CliError):
            raise
        raise CliError(f"invalid generator config: {exc}", EXIT_DATA) from None
    write_atomic(args.out, data.format_csv(ds))
    write_atomic(sidecar(args.out, ".provenance.json"), _dump(telemetry.provenance_document(cfg, ds)))
    n_normal, n_attack = ds.class_counts()
    print(f"wrote {len(ds)} samples to {args.out}: {n_normal} normal, {n_attack} attack")
    return EXIT_OK


def _split_for(net, ds):
    split = net.metadata.get("split", {})
    return training.stratified_split(ds, split.get("fraction", 0.8), split.get("seed", 0))


def cmd_train(args) -> int:
    widths = _parse_widths(args.widths)
    cfg = training.TrainConfig(
        epochs=args.epochs, seed=args.seed, learning_rate=args.lr, batch_size=args.batch,
        widths=widths, degree=args.degree, num_intervals=args.grid,
    )
    try:
        cfg.validate()
    except training.TrainingError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    print(f"widths=[{','.join(map(str, widths))}] degree={args.degree} grid={args.grid} epochs={args.epochs} "
          f"lr={args.lr} batch={args.batch} seed={args.seed}")
    ds = _read_dataset(args.data)
    try:
        train_ds, test_ds = training.stratified_split(ds, cfg.split_fraction, cfg.seed)
        net, history = training.train(ds, cfg, train_split=train_ds)
    except training.DivergedLossError as exc:
        raise CliError(str(exc), EXIT_MODEL) from None
    except training.TrainingError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    net.metadata["dataset_sha256"] = hashlib.sha256(Path(args.data).read_bytes()).hexdigest()
    tr = training.evaluate(net, train_ds)
    te = training.evaluate(net, test_ds)
    full = training.evaluate(net, ds)
    write_atomic(args.out_model, save_model(net))
    write_atomic(sidecar(args.out_model, ".history.json"), _dump({
        "history": history,
        "selected_epoch": net.metadata["selected_epoch"],
        "final": {"train": tr.to_dict(), "validation": te.to_dict(), "all": full.to_dict()},
    }))
    print(f"selected epoch {net.metadata['selected_epoch']} of {cfg.epochs}")
    print(f"train balanced accuracy {tr.balanced_accuracy:.4f}  validation balanced accuracy {te.balanced_accuracy:.4f}"
          f"  full-file balanced accuracy {full.balanced_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = _read_model(args.model)
    _check_inputs(net)
    ds = _read_dataset(args.data)
    report = training.evaluate(net, ds)
    doc = report.to_dict()
    gated, scope = report, "file"
    # on the model's own training file, also score the held-out split it never saw
    if net.metadata.get("dataset_sha256") == hashlib.sha256(Path(args.data).read_bytes()).hexdigest():
        train_ds, test_ds = _split_for(net, ds)
        held = training.evaluate(net, test_ds)
        doc["held_out"] = {"train": training.evaluate(net, train_ds).to_dict(), "test": held.to_dict()}
        gated, scope = held, "held-out test split"
    if args.gate is not None:
        doc["gate"] = {"balanced_accuracy_min": args.gate, "scope": scope,
                       "balanced_accuracy": gated.balanced_accuracy,
                       "passed": gated.balanced_accuracy >= args.gate}
    write_atomic(args.report_out, _dump(doc))
    print(report.summary())
    if "held_out" in doc:
        print(f"held-out test split: balanced accuracy {gated.balanced_accuracy:.4f}, "
              f"recall {gated.recall:.4f}")
    if args.gate is not None and gated.balanced_accuracy < args.gate:
        print(f"GATE FAILED: {scope} balanced accuracy {gated.balanced_accuracy:.4f} < {args.gate}",
              file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def cmd_extract(args) -> int:
    net = _read_model(args.model)
    _check_inputs(net)
    ds = _read_dataset(args.data)
    try:
        train_ds, test_ds = _split_for(net, ds)
    except training.TrainingError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    std = training.standardizer_of(net)
    u = std.transform(train_ds.features) if std is not None else train_ds.features
    try:
        sm = symbolic.extract(net, u)
        fidelity = symbolic.fidelity_report(net, sm, train_ds, test_ds)
    except symbolic.SymbolicEvaluationError as exc:
        raise CliError(f"symbolic evaluation failed: {exc}", EXIT_MODEL) from None
    write_atomic(args.formulas_out, sm.render())
    write_atomic(sidecar(args.formulas_out, ".tree.json"), symbolic.dumps_document(sm))
    write_atomic(sidecar(args.formulas_out, ".fidelity.json"), _dump(fidelity))
    print(sm.render(), end="")
    print(f"full model test accuracy {fidelity['test']['full_accuracy']:.4f}, "
          f"symbolic test accuracy {fidelity['test']['symbolic_accuracy']:.4f}, "
          f"gap {100 * fidelity['full_minus_symbolic_test_accuracy']:.2f} pp; "
          f"symbolic train/test gap {100 * fidelity['symbolic_train_test_gap']:.2f} pp")
    if fidelity["overfitting_warning"]:
        print("warning: symbolic train/test accuracy gap exceeds 5 pp", file=sys.stderr)
    return EXIT_OK


def infer_stream(net, lines, out, err) -> tuple:
    """Classify CSV rows one at a time; returns ``(rows_seen, rows_bad)``."""
    std = training.standardizer_of(net)
    seen = bad = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("timestamp"):
            continue
        seen += 1
        fields = line.split(",")
        if len(fields) == len(data.HEADER) - 1:
            fields = fields + ["0"]
        try:
            row = data.parse_row(fields)
        except data.DatasetError as exc:
            bad += 1
            print(f"line {lineno}: {exc}", file=err, flush=True)
            continue
        x = np.array(row.features)
        u = std.transform(x) if std is not None else x
        z = net.forward(u[None, :])[0]
        out.write(f"{row.timestamp},{int(decide(z[0], z[1]))},{float(z[0])!r},{float(z[1])!r}\n")
        out.flush()
    return seen, bad


def cmd_infer(args) -> int:
    net = _read_model(args.model)
    _check_inputs(net)
    src = args.input
    try:
        fin = sys.stdin if src in ("-", "stream") else open(src, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}", EXIT_DATA) from None
    fout = sys.stdout if args.out in (None, "-") else open(args.out, "w", encoding="utf-8")
    try:
        seen, bad = infer_stream(net, fin, fout, sys.stderr)
    finally:
        if fin is not sys.stdin:
            fin.close()
        if fout is not sys.stdout:
            fout.close()
    if seen and bad / seen > MAX_BAD_ROW_FRACTION:
        print(f"{bad} of {seen} rows malformed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def bench_inputs(net, n: int, seed: int) -> np.ndarray:
    """Raw feature rows scattered around the model's training distribution."""
    rng = np.random.default_rng(seed)
    std = training.standardizer_of(net)
    z = rng.normal(size=(n, net.widths[0]))
    if std is None:
        return z
    return std.mean + z * std.std


def cmd_bench(args) -> int:
    if args.samples < 1:
        raise CliError("--samples must be positive", EXIT_USAGE)
    net = _read_model(args.model)
    _check_inputs(net)
    xs = bench_inputs(net, args.samples, args.seed)
    std = training.standardizer_of(net)

    def classify_one(x):
        u = std.transform(x) if std is not None else x
        z = net.forward(u[None, :])[0]
        return int(decide(z[0], z[1]))

    for x in xs[:BENCH_WARMUP]:
        classify_one(x)
    times = np.empty(len(xs))
    for k, x in enumerate(xs):
        t0 = time.perf_counter_ns()
        classify_one(x)
        times[k] = (time.perf_counter_ns() - t0) / 1e6
    report = {
        "samples": int(args.samples),
        "seed": int(args.seed),
        "inputs_sha256": hashlib.sha256(np.ascontiguousarray(xs, dtype="<f8").tobytes()).hexdigest(),
        "median_ms": float(np.median(times)),
        "p95_ms": float(np.percentile(times, 95)),
        "p99_ms": float(np.percentile(times, 99)),
        "reference_ms": 12.53,
    }
    if args.gate_ms is not None:
        report["gate_ms"] = args.gate_ms
        report["passed"] = report["median_ms"] <= args.gate_ms
    print(json.dumps(report, indent=1))
    if args.gate_ms is not None and report["median_ms"] > args.gate_ms:
        return EXIT_GATE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kanevse", description="KAN-based EV charger attack detector")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic labeled telemetry CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--normal-seconds", type=int, default=1436)
    g.add_argument("--attack-seconds", type=int, default=10094)
    g.add_argument("--mix", help="comma list of kind=fraction, e.g. cryptojacking=0.5,dos=0.5")
    g.add_argument("--profile-file", help="JSON object overriding ChargerProfile fields")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a KAN classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--out-model", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--widths", default="4,5,2")
    t.add_argument("--grid", type=int, default=3)
    t.add_argument("--degree", type=int, default=3)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--batch", type=int, default=256)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--report-out", required=True)
    e.add_argument("--gate", type=float, help="exit 4 if balanced accuracy is below this (held-out split when DATA is the training file)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("extract", help="extract symbolic L1/L2 formulas")
    x.add_argument("--model", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--formulas-out", required=True)
    x.set_defaults(func=cmd_extract)

    i = sub.add_parser("infer", help="classify CSV rows from a file or stdin")
    i.add_argument("--model", required=True)
    i.add_argument("--in", dest="input", default="stream", help="input path, or 'stream' / '-' for stdin")
    i.add_argument("--out", default="-")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="single-sample inference latency")
    b.add_argument("--model", required=True)
    b.add_argument("--samples", type=int, default=10000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--gate-ms", type=float, help="exit 4 if the median exceeds this many ms")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DimensionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
