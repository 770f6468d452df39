"""Command-line entry point: ``rkit <subcommand> ...``.

Exit status is 0 on success, 1 on validation or usage errors, 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from rkit import formats
from rkit.capacity import BaConfig
from rkit.errors import ValidationError
from rkit.explorer import AwpConfig, explore, generate_synthetic
from rkit.metrics import (
    RashomonSpec,
    ScoreTensor,
    compute_report,
    default_threads,
    resolve_models,
    summarize_capacities,
)
from rkit.reduction import caratheodory_reduce, greedy_select

log = logging.getLogger("rkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _synthetic_spec(text: str) -> dict:
    spec = {"n": 400, "d": 2, "sep": 2.0, "seed": 0}
    for part in text.split(","):
        if not part.strip():
            continue
        key, _, value = part.partition("=")
        key = key.strip()
        if key not in spec or not value:
            raise argparse.ArgumentTypeError(f"unknown synthetic key {key!r}; use n, d, sep, seed")
        try:
            spec[key] = float(value) if key == "sep" else int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad value for {key}: {value!r}") from None
    return spec


def _add_filter_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, type=Path, help="score tensor manifest (JSON)")
    p.add_argument(
        "--epsilon",
        type=float,
        default=None,
        help="Rashomon loss budget, in the loss file's units; omit to use every model",
    )
    p.add_argument("--mode", choices=("relative", "absolute"), default="relative", help="budget relative to the best loss, or absolute (default: relative)")
    p.add_argument("--base-model", default=None, help="reference model id for ambiguity/discrepancy (default: lowest loss)")


def _add_ba_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tolerance", type=float, default=1e-6, help="Blahut-Arimoto bound gap in bits (default: 1e-6)")
    p.add_argument("--max-iterations", type=int, default=100_000, help="Blahut-Arimoto iteration cap (default: 100000)")
    p.add_argument("--threads", type=int, default=None, help="worker threads for per-sample capacity (default: $RKIT_THREADS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rkit", description="Predictive multiplicity via Rashomon Capacity.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("capacity", help="per-sample Rashomon Capacity and report files")
    _add_filter_args(p)
    _add_ba_args(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("metrics", help="ambiguity and discrepancy only")
    _add_filter_args(p)
    p.add_argument("--out", type=Path, default=None, help="write summary.json here")

    p = sub.add_parser("reduce", help="keep at most c models per sample without losing capacity")
    _add_filter_args(p)
    _add_ba_args(p)
    p.add_argument("--support-threshold", type=float, default=1e-6, help="minimum capacity-achieving weight kept (default: 1e-6)")
    p.add_argument("--out", type=Path, required=True, help="output directory for reduce.csv")

    p = sub.add_parser("select", help="greedy model selection")
    _add_filter_args(p)
    _add_ba_args(p)
    p.add_argument("--r", type=int, required=True, help="number of models to select")
    p.add_argument("--seed", type=int, default=0, help="seed for the first pick (default: 0)")
    p.add_argument("--sample-size", type=int, default=None, help="evaluate on a random subset of samples")
    p.add_argument("--out", type=Path, required=True, help="output directory for selection.json")

    p = sub.add_parser("explore", help="logistic-regression Rashomon set via AWP / label flips")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", type=_synthetic_spec, help="two-Gaussian data, e.g. n=400,d=2,sep=2,seed=7")
    src.add_argument("--dataset", type=Path, help="CSV with numeric features and a 0/1 label column")
    p.add_argument("--label-column", default="label", help="label column of --dataset (default: label)")
    p.add_argument("--epsilons", type=_float_list, required=True, help="comma-separated loss budgets (nats, relative to the base model)")
    p.add_argument("--method", choices=("awp", "label-flip", "both"), default="awp", help="exploration method (default: awp)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="AWP |lambda| (default: 0.1 n / ||z_t||^2)")
    p.add_argument("--max-steps", type=int, default=200, help="AWP Newton steps per target (default: 200)")
    p.add_argument("--score-cap", type=float, default=0.9, help="stop once the target score exceeds this (default: 0.9)")
    p.add_argument("--damping", type=float, default=0.5, help="AWP Newton step scale (default: 0.5)")
    p.add_argument("--targets", type=int, default=None, help="perturb only the first N samples")
    _add_ba_args(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("report", help="recompute tail statistics and CDF from per_sample.csv")
    p.add_argument("--per-sample", type=Path, required=True, help="per_sample.csv from a previous run")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def _spec(args) -> RashomonSpec | None:
    if args.epsilon is None and args.base_model is None:
        return None
    return RashomonSpec(args.mode, args.epsilon, args.base_model)


def _ba(args) -> BaConfig:
    return BaConfig(tolerance=args.tolerance, max_iterations=args.max_iterations)


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        return args.threads
    return default_threads()


def _load(args) -> tuple[ScoreTensor, RashomonSpec | None]:
    tensor = formats.load_score_tensor(args.manifest)
    spec = _spec(args)
    log.info("loaded n=%d m=%d c=%d from %s", tensor.n, tensor.m, tensor.c, args.manifest)
    return tensor, spec


def cmd_capacity(args) -> None:
    tensor, spec = _load(args)
    report = compute_report(tensor, spec, _ba(args), _threads(args))
    formats.save_report(report, args.out)
    print(f"mean m_c {report.mean_m_c:.6f}  ambiguity {report.ambiguity:.4f}  discrepancy {report.discrepancy:.4f}")


def cmd_metrics(args) -> None:
    from rkit.metrics import ambiguity, discrepancy

    tensor, spec = _load(args)
    amb, disc = ambiguity(tensor, spec), discrepancy(tensor, spec)
    subset, base = resolve_models(tensor, spec)
    if args.out is not None:
        formats.write_summary(
            {
                "ambiguity": amb,
                "discrepancy": disc,
                "base_model": tensor.model_ids[base],
                "rashomon_model_ids": [tensor.model_ids[j] for j in subset],
            },
            args.out / "summary.json",
        )
    print(f"ambiguity {amb:.6f}  discrepancy {disc:.6f}")


def cmd_reduce(args) -> None:
    tensor, spec = _load(args)
    subset, _ = resolve_models(tensor, spec)
    config = _ba(args)
    results = [
        caratheodory_reduce(tensor.score_set(i, subset), config, args.support_threshold) for i in range(tensor.n)
    ]
    formats.save_reductions(tensor.sample_ids, results, args.out)
    worst = max(len(r.kept_model_ids) for r in results)
    bad = sum(not r.conforming for r in results)
    print(f"largest kept set {worst} (c = {tensor.c}); non-conforming samples {bad}")


def cmd_select(args) -> None:
    tensor, spec = _load(args)
    subset, _ = resolve_models(tensor, spec)
    sel = greedy_select(tensor, subset, args.r, _ba(args), args.seed, args.sample_size, _threads(args))
    formats.save_selection(sel, args.out, {"seed": args.seed, "r": args.r})
    print(f"selected {', '.join(sel.selected_model_ids)}; mean capacity {sel.capacity_trace[-1]:.6f} bits")


def cmd_explore(args) -> None:
    if args.synthetic is not None:
        s = args.synthetic
        data = generate_synthetic(s["n"], s["d"], s["sep"], s["seed"])
        source = {"synthetic": s}
    else:
        data = formats.load_dataset_csv(args.dataset, args.label_column)
        source = {"dataset": str(args.dataset)}
    methods = {"awp": ["awp"], "label-flip": ["label_flip"], "both": ["awp", "label_flip"]}[args.method]
    awp = AwpConfig(
        lambda_magnitude=args.lam,
        epsilon=max(args.epsilons) if args.epsilons else 0.0,
        max_steps=args.max_steps,
        score_cap=args.score_cap,
        damping=args.damping,
    )
    targets = None if args.targets is None else range(min(args.targets, data.n))
    result = explore(data, args.epsilons, methods, awp, targets)
    config, threads = _ba(args), _threads(args)
    summary = {"source": source, "loss_units": "nats", "base_loss": result.base.train_loss, "runs": []}
    for (method, eps), tensor in result.tensors.items():
        tag = f"{method}_eps{eps:g}"
        meta = {"method": method, "epsilon": eps, "loss_units": "nats", "epsilon_mode": "relative", **source}
        manifest = formats.save_score_tensor(tensor, args.out / tag, meta)
        report = compute_report(tensor, None, config, threads)
        summary["runs"].append(
            {
                "method": method,
                "epsilon": eps,
                "manifest": str(manifest.relative_to(args.out)),
                "m": tensor.m,
                "mean_m_c": report.mean_m_c,
                "tail_mean_1pct": report.tail_mean_1pct,
                "tail_mean_5pct": report.tail_mean_5pct,
                "ambiguity": report.ambiguity,
                "discrepancy": report.discrepancy,
            }
        )
        print(f"{tag}: m={tensor.m} mean m_c {report.mean_m_c:.6f}")
    formats.write_summary(summary, args.out / "explore_summary.json")


def cmd_report(args) -> None:
    ids, caps = formats.load_per_sample(args.per_sample)
    stats = summarize_capacities(caps)
    formats.write_cdf(stats.pop("cdf_points"), args.out / "cdf.csv")
    stats.update({"n": len(ids), "mean_capacity_bits": float(np.mean(caps)), "mean_m_c": float(np.mean(np.exp2(caps)))})
    formats.write_summary(stats, args.out / "summary.json")
    print(f"tail means: 1% {stats['tail_mean_1pct']:.6f}  5% {stats['tail_mean_5pct']:.6f}")


COMMANDS = {
    "capacity": cmd_capacity,
    "metrics": cmd_metrics,
    "reduce": cmd_reduce,
    "select": cmd_select,
    "explore": cmd_explore,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"rkit: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"rkit: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
