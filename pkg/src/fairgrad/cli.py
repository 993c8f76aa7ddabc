"""``fairgrad`` command line: generate synthetic data, train, sweep.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
A sweep keeps going past failed runs and exits with the code of the first failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import _backend
from .data import (CsvCodes, DataError, SyntheticSpec, gen_synthetic, load_csv, split,
                   split_train_val, standardize, write_csv)
from .fairness import AP, EODDS, FairnessNotion, Notion
from .model import NonFiniteLossError
from .report import atomic_write, dumps, evaluate, to_csv, write_history, write_report
from .trainer import TrainConfig, train

log = logging.getLogger("fairgrad")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "FAIRGRAD_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="training CSV (split into train/val/test)")
    p.add_argument("--test-data", help="separate test CSV; --data is then split into train/val only")
    p.add_argument("--label-col", required=True)
    p.add_argument("--sensitive-col", required=True)
    p.add_argument("--fairness", choices=[n.value for n in Notion], default="eodds")
    p.add_argument("--desirable-labels", default="",
                   help="comma-separated raw label values (eopp only)")
    p.add_argument("--mode", choices=["unconstrained", "fairgrad"], default="fairgrad")
    p.add_argument("--epsilon", type=float, default=None,
                   help="fairness slack; omit for exact fairness")
    p.add_argument("--model", choices=["linear", "mlp"], default="linear")
    p.add_argument("--hidden-sizes", type=_ints, default=[128, 64, 32])
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lambda-lr", type=float, default=0.01)
    p.add_argument("--clip", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.03)
    p.add_argument("--backend", choices=["auto", "python", "compiled"], default=None)
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairgrad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a Gaussian dataset from a JSON spec")
    g.add_argument("--spec", required=True, help="JSON file with means, counts, std, seed")
    g.add_argument("--out", required=True, help="CSV path to write")
    g.add_argument("--seed", type=int, default=None, help="override the spec's seed")

    t = sub.add_parser("train", help="train one model and write report, history and checkpoint")
    _add_train_flags(t)

    s = sub.add_parser("sweep", help="repeat training over epsilons and/or batch sizes")
    _add_train_flags(s)
    s.add_argument("--epsilons", type=_floats, default=None)
    s.add_argument("--batch-sizes", type=_ints, default=None)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


def _notion(args, codes: CsvCodes) -> FairnessNotion:
    kind = Notion(args.fairness)
    raw = [t.strip() for t in args.desirable_labels.split(",") if t.strip()]
    if kind is not Notion.EQUALITY_OF_OPPORTUNITY:
        if raw:
            raise UsageError("--desirable-labels only applies to --fairness eopp")
        return AP if kind is Notion.ACCURACY_PARITY else EODDS
    if not raw:
        raise UsageError("--fairness eopp needs --desirable-labels")
    unknown = [v for v in raw if v not in codes.labels]
    if unknown:
        raise UsageError(f"desirable labels {unknown} do not occur in column {args.label_col!r}")
    return FairnessNotion(kind, frozenset(codes.labels[v] for v in raw))


def _config(args, seed: int, batch_size: int, epsilon) -> TrainConfig:
    if args.mode == "unconstrained":
        epsilon = None
    return TrainConfig(eta_theta=args.lr, eta_lambda=args.lambda_lr, batch_size=batch_size,
                       epochs=args.epochs, clip_norm=args.clip, seed=seed, mode=args.mode,
                       epsilon=epsilon,
                       hidden_sizes=tuple(args.hidden_sizes) if args.model == "mlp" else (),
                       dropout_rate=args.dropout, beta=args.beta)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "runs")


def _load(args):
    ds, codes = load_csv(args.data, args.label_col, args.sensitive_col)
    test = None
    if args.test_data:
        test, _ = load_csv(args.test_data, args.label_col, args.sensitive_col, codes=codes)
        if test.dim != ds.dim:
            raise DataError("--test-data has a different number of feature columns")
    return ds, test, codes


def _prepare(ds, test, seed: int):
    if test is None:
        tr, va, te = split(ds, seed)
    else:
        tr, va = split_train_val(ds, seed)
        te = test
    (tr, va, te), _ = standardize(tr, [va, te])
    return tr, va, te


def run_one(args, ds, test, notion: FairnessNotion, config: TrainConfig, out: Path, manifest: dict) -> dict:
    """Train once, writing the manifest first and all artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest, config=config.to_dict(), output_dir=str(out))
    atomic_write(out / "manifest.json", dumps(manifest) + "\n")
    tr, va, te = _prepare(ds, test, config.seed)
    result = train(config, tr, va, notion, backend=args.backend)
    report = evaluate(result.params, te, notion)
    write_report(report, out / "report.json")
    write_history(result.history, out / "history.csv")
    atomic_write(out / "checkpoint.json", result.params.to_json() + "\n")
    return {"accuracy": report.accuracy, "mean_abs": report.mean_abs,
            "selected_epoch": result.selected_epoch}


def _manifest(args, notion: FairnessNotion, seeds) -> dict:
    return {"data": {"path": str(args.data), "sha256": _sha256(args.data),
                     "test_path": str(args.test_data) if args.test_data else None,
                     "test_sha256": _sha256(args.test_data) if args.test_data else None,
                     "label_col": args.label_col, "sensitive_col": args.sensitive_col},
            "notion": {"kind": notion.kind.value, "desirable_labels": sorted(notion.desirable_labels)},
            "seeds": list(seeds), "backend": _backend.resolve(args.backend)}


def cmd_generate(args) -> int:
    spec = SyntheticSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec = SyntheticSpec(spec.means, spec.counts, spec.std, args.seed)
    ds = gen_synthetic(spec)
    write_csv(ds, args.out)
    log.info("wrote %d rows to %s", ds.n, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    ds, test, codes = _load(args)
    notion = _notion(args, codes)
    if args.mode == "unconstrained" and args.epsilon is not None:
        log.warning("--epsilon is ignored with --mode unconstrained")
    config = _config(args, args.seed, args.batch_size, args.epsilon)
    out = _out_dir(args)
    summary = run_one(args, ds, test, notion, config, out, _manifest(args, notion, [args.seed]))
    print(f"accuracy={summary['accuracy']:.4f} mean_abs_fairness={summary['mean_abs']:.4f} "
          f"selected_epoch={summary['selected_epoch']} out={out}")
    return EXIT_OK


def _sweep_worker(job):
    args, ds, test, notion, config, out, manifest = job
    try:
        return "ok", run_one(args, ds, test, notion, config, out, manifest)
    except NonFiniteLossError as exc:
        return "numeric", str(exc)
    except (DataError, ValueError) as exc:
        return "data", str(exc)


SWEEP_RUN_HEADER = ["epsilon", "batch_size", "repeat", "seed", "status", "accuracy", "mean_abs_fairness",
                    "selected_epoch"]
SWEEP_AGG_HEADER = ["epsilon", "batch_size", "runs", "failures", "accuracy", "accuracy_std",
                    "fairness", "fairness_std"]


def aggregate(run_rows) -> list[list]:
    """Mean and population standard deviation per (epsilon, batch size) setting."""
    settings, out = [], []
    for r in run_rows:
        key = (r[0], r[1])
        if key not in settings:
            settings.append(key)
    for key in settings:
        rows = [r for r in run_rows if (r[0], r[1]) == key]
        ok = [r for r in rows if r[4] == "ok"]
        acc = np.array([r[5] for r in ok], dtype=float)
        fair = np.array([r[6] for r in ok], dtype=float)
        stats = [acc.mean(), acc.std(), fair.mean(), fair.std()] if ok else [float("nan")] * 4
        out.append([*key, len(rows), len(rows) - len(ok), *stats])
    return out


def cmd_sweep(args) -> int:
    if args.epsilons is None and args.batch_sizes is None:
        raise UsageError("sweep needs --epsilons and/or --batch-sizes")
    if args.repeats < 1:
        raise UsageError("--repeats must be positive")
    if args.epsilons is not None and args.mode == "unconstrained":
        log.warning("--epsilons has no effect with --mode unconstrained")
    ds, test, codes = _load(args)
    notion = _notion(args, codes)
    epsilons = args.epsilons if args.epsilons is not None else [args.epsilon]
    batch_sizes = args.batch_sizes or [args.batch_size]
    seeds = [args.seed + r for r in range(args.repeats)]
    base = _out_dir(args)
    manifest = _manifest(args, notion, seeds)
    manifest["sweep"] = {"epsilons": epsilons, "batch_sizes": batch_sizes, "repeats": args.repeats}
    base.mkdir(parents=True, exist_ok=True)
    atomic_write(base / "manifest.json", dumps(manifest) + "\n")

    jobs, keys = [], []
    for eps in epsilons:
        for bs in batch_sizes:
            for r, seed in enumerate(seeds):
                config = _config(args, seed, bs, eps)
                tag = f"eps{'exact' if eps is None else fmt_setting(eps)}_bs{bs}_r{r}"
                jobs.append((args, ds, test, notion, config, base / tag, manifest))
                keys.append(("exact" if eps is None else eps, bs, r, seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]

    run_rows, first_failure = [], EXIT_OK
    for (eps, bs, r, seed), (status, payload) in zip(keys, results):
        if status == "ok":
            run_rows.append([eps, bs, r, seed, "ok", payload["accuracy"], payload["mean_abs"],
                             payload["selected_epoch"]])
        else:
            log.error("run eps=%s batch=%s repeat=%s failed: %s", eps, bs, r, payload)
            run_rows.append([eps, bs, r, seed, status, float("nan"), float("nan"), -1])
            if first_failure == EXIT_OK:
                first_failure = EXIT_NUMERIC if status == "numeric" else EXIT_DATA
    atomic_write(base / "runs.csv", to_csv(SWEEP_RUN_HEADER, run_rows))
    agg = aggregate(run_rows)
    atomic_write(base / "aggregate.csv", to_csv(SWEEP_AGG_HEADER, agg))
    for row in agg:
        print("epsilon={} batch_size={} accuracy={:.4f}±{:.4f} fairness={:.4f}±{:.4f} failures={}".format(
            row[0], row[1], row[4], row[5], row[6], row[7], row[3]))
    return first_failure


def fmt_setting(x: float) -> str:
    return format(x, "g")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"generate": cmd_generate, "train": cmd_train, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fairgrad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"fairgrad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"fairgrad: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"fairgrad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
