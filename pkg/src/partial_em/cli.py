"""Command-line interface: ``partial-em {fit,compare,gen,contour}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .em_engine import FitConfig, fit, initialize, make_rng, observed_loglik
from .evaluation import classification_error, confusion_matrix, kmeans, membership_error
from .model import Dataset, MixtureModel, Termination, hard_assign, write_membership_csv
from .policies import FullPolicy, LazyPolicy, StarPolicy, TauPolicy, make_policy

log = logging.getLogger("partial_em")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2
THREADS_ENV = "PARTIAL_EM_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # flag validation errors exit 1; 2 is reserved for MaxIterations
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_data_flags(p):
    p.add_argument("--input", required=True, help="CSV file or IDX images file")
    p.add_argument("--labels", help="IDX labels file (derived from --input when omitted)")
    p.add_argument("--has-labels", action="store_true",
                   help="CSV: last column holds integer labels (auto when header ends in 'label')")
    p.add_argument("--digits", type=_int_list, help="IDX: digits to keep, e.g. 1,2,4,5,6")
    p.add_argument("--subsample", type=int, help="keep a seeded random subset of this many points")
    p.add_argument("--subsample-seed", type=int, default=0)
    p.add_argument("--pca", default="auto", help="number of PCA dimensions, 'off', or 'auto'")
    p.add_argument("--cov", choices=("full", "diag"), default="full")


def _add_fit_flags(p):
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--ridge", type=float)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=("kmeans++", "random"), default="kmeans++")
    p.add_argument("--threads", type=int)
    p.add_argument("--record-f", action="store_true", help="record the F-function trace")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partial-em", description="Gaussian mixture EM with partial E-steps")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one policy and write a JSON run report")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--policy", choices=("full", "tau", "lazy", "star"), default="full")
    p.add_argument("--tau", type=int)
    p.add_argument("--lazy-threshold", type=float, default=0.9)
    p.add_argument("--lazy-every", type=int, default=5)
    p.add_argument("--star-tail", type=float)
    p.add_argument("--out", help="report path (stdout when omitted)")
    p.add_argument("--emit-membership", help="write the final membership matrix as CSV")

    p = sub.add_parser("compare", help="run several policies from one shared initialization")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--policies", required=True,
                   help="comma list of full, tau:N, lazy[:T[:every]], star[:frac], kmeans")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out", help="also write the table as CSV here")

    p = sub.add_parser("gen", help="sample a labelled Gaussian mixture dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--example1", action="store_true",
                     help="0.3 N(-2, 1) + 0.7 N(2, 1)")
    src.add_argument("--spec", help="JSON with weights, means, covariances")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (stdout when omitted)")

    p = sub.add_parser("contour", help="mean log-likelihood over a grid of the two means")
    p.add_argument("--input", required=True, help="1-d CSV data")
    p.add_argument("--has-labels", action="store_true")
    p.add_argument("--grid", required=True, help="mu1_min:mu1_max:steps,mu2_min:mu2_max:steps")
    p.add_argument("--weights", type=_float_list, default=[0.3, 0.7])
    p.add_argument("--vars", type=_float_list, default=[1.0, 1.0])
    p.add_argument("--at-fit", help="run report JSON whose fitted means are appended as a row")
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        value = args.threads
    else:
        try:
            value = int(os.environ.get(THREADS_ENV, "1"))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if value < 1:
        raise UsageError("--threads must be >= 1")
    return value


def _is_csv(path: Path) -> bool:
    return path.suffix.lower() == ".csv"


def load_input(args) -> Dataset:
    path = Path(args.input)
    if not path.exists():
        raise UsageError(f"input file {path} does not exist")
    if _is_csv(path):
        has_labels = args.has_labels or data_io.csv_has_label_header(path)
        data = data_io.load_csv(path, has_labels)
        is_idx = False
    else:
        labels = Path(args.labels) if args.labels else data_io.default_labels_path(path)
        data = data_io.load_idx(path, labels, set(args.digits) if args.digits else None)
        is_idx = True
    if data.n == 0:
        raise UsageError("no data points left after filtering")
    if args.subsample is not None:
        if not 1 <= args.subsample <= data.n:
            raise UsageError(f"--subsample must lie in [1, {data.n}]")
        idx = np.sort(make_rng(args.subsample_seed).choice(data.n, args.subsample, replace=False))
        data = data.subset(idx)
    pca = args.pca
    if pca == "auto":
        pca = "50" if is_idx and args.cov == "full" else "off"
    if pca != "off":
        try:
            dims = int(pca)
        except ValueError:
            raise UsageError(f"--pca must be an integer or 'off', got {pca!r}") from None
        data = data_io.fit_pca(data, dims).apply(data)
    return data


def _config(args, record_f=False) -> FitConfig:
    if args.k is None or args.k < 1:
        raise UsageError("--k must be a positive integer")
    return FitConfig(
        tol=args.tol,
        max_iter=args.max_iter,
        ridge=args.ridge,
        seed=args.seed,
        init=args.init,
        covariance=args.cov,
        threads=_threads(args),
        record_f=record_f or args.record_f,
    )


def _policy_from_flags(args):
    if args.policy == "full":
        return FullPolicy()
    if args.policy == "tau":
        if args.tau is None:
            raise UsageError("--policy tau requires --tau")
        return TauPolicy(args.tau)
    if args.policy == "lazy":
        return LazyPolicy(args.lazy_threshold, args.lazy_every)
    return StarPolicy(args.star_tail)


def _label_metrics(w, data: Dataset) -> dict:
    if data.labels is None:
        return {}
    assign = hard_assign(w)
    return {
        "classification_error": classification_error(assign, data.labels),
        "confusion_matrix": confusion_matrix(assign, data.labels).to_dict(),
    }


def _write_text(path, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_fit(args) -> int:
    policy = _policy_from_flags(args)
    config = _config(args)
    data = load_input(args)
    if args.k > data.n:
        raise UsageError(f"--k {args.k} exceeds the number of points {data.n}")
    _, w, report = fit(data, args.k, policy, config)
    report.metrics = _label_metrics(w, data)
    _write_text(args.out, report.to_json(indent=2) + "\n")
    if args.emit_membership:
        write_membership_csv(args.emit_membership, w)
    log.info("%s: %d iterations, %s", policy.name, report.iterations, report.termination.value)
    return EXIT_MAX_ITER if report.termination is Termination.MAX_ITERATIONS else EXIT_OK


COMPARE_COLUMNS = ("method", "iterations", "membership_error", "density_evals",
                   "wall_time", "classification_error")


def compare_rows(data: Dataset, k: int, specs: list[str], config: FitConfig) -> list[dict]:
    """One row per policy spec, all sharing the same initial model and data."""
    init = initialize(data.points, k, config)
    ref = None
    rows = []
    plan = []
    for spec in specs:
        plan.append(("kmeans", None) if spec.strip().lower() == "kmeans" else (spec, make_policy(spec)))
    if not any(isinstance(p, FullPolicy) for _, p in plan):
        _, ref, _ = fit(data, k, FullPolicy(), config, init_model=init)
    for spec, policy in plan:
        if policy is None:
            km = kmeans(data, k, seed=config.seed)
            rows.append({
                "method": "Kmeans",
                "iterations": km.iterations,
                "membership_error": None,
                "density_evals": None,
                "wall_time": None,
                "classification_error": (classification_error(km.assignments, data.labels)
                                         if data.labels is not None else None),
                "_w": None,
            })
            continue
        _, w, report = fit(data, k, policy, config, init_model=init)
        if isinstance(policy, FullPolicy) and ref is None:
            ref = w
        rows.append({
            "method": policy.name,
            "iterations": report.iterations,
            "membership_error": None,
            "density_evals": report.density_evals,
            "wall_time": report.wall_time,
            "classification_error": (classification_error(hard_assign(w), data.labels)
                                     if data.labels is not None else None),
            "_w": w,
            "_full": isinstance(policy, FullPolicy),
        })
    for row in rows:
        if row["_w"] is not None and not row.get("_full"):
            row["membership_error"] = membership_error(row["_w"], ref)
    for row in rows:
        row.pop("_w", None)
        row.pop("_full", None)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_table(rows: list[dict], fmt: str = "text") -> str:
    cells = [list(COMPARE_COLUMNS)] + [[_fmt(r[c]) for c in COMPARE_COLUMNS] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(cells)
        return buf.getvalue()
    widths = [max(len(row[i]) for row in cells) for i in range(len(COMPARE_COLUMNS))]
    lines = []
    for row in cells:
        parts = [row[0].ljust(widths[0])] + [v.rjust(wd) for v, wd in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    specs = [s for s in args.policies.split(",") if s.strip()]
    if not specs:
        raise UsageError("--policies is empty")
    for s in specs:
        if s.strip().lower() != "kmeans":
            make_policy(s)
    config = _config(args)
    data = load_input(args)
    rows = compare_rows(data, args.k, specs, config)
    sys.stdout.write(format_table(rows, args.format))
    if args.out:
        Path(args.out).write_text(format_table(rows, "csv"), encoding="utf-8")
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    spec = data_io.EXAMPLE1 if args.example1 else data_io.MixtureSpec.from_json(args.spec)
    data = data_io.sample_mixture(spec, args.n, args.seed)
    buf = io.StringIO()
    data_io.save_csv(buf, data)
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def parse_grid(text: str):
    """``a:b:n,c:d:n`` -> two arrays of grid values."""
    axes = text.split(",")
    if len(axes) != 2:
        raise UsageError("--grid needs two comma-separated axes")
    out = []
    for axis in axes:
        parts = axis.split(":")
        if len(parts) != 3:
            raise UsageError(f"malformed grid axis {axis!r}; expected min:max:steps")
        try:
            lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"malformed grid axis {axis!r}") from None
        if steps < 1 or hi < lo:
            raise UsageError(f"grid axis {axis!r} needs steps >= 1 and min <= max")
        out.append(np.linspace(lo, hi, steps) if steps > 1 else np.array([lo]))
    return out


def contour_grid(data: Dataset, mu1s, mu2s, weights, variances) -> list[tuple]:
    """Mean observed log-likelihood with only the two means varying."""
    n = data.n
    covs = np.asarray(variances, dtype=float).reshape(2, 1, 1)
    rows = []
    for m1 in mu1s:
        for m2 in mu2s:
            model = MixtureModel.from_arrays(weights, [[m1], [m2]], covs)
            rows.append((float(m1), float(m2), observed_loglik(data, model) / n))
    return rows


def cmd_contour(args) -> int:
    mu1s, mu2s = parse_grid(args.grid)
    if len(args.weights) != 2 or len(args.vars) != 2:
        raise UsageError("--weights and --vars need exactly two values")
    if abs(sum(args.weights) - 1.0) > 1e-12 or min(args.weights) <= 0 or min(args.vars) <= 0:
        raise UsageError("--weights must be positive and sum to 1; --vars must be positive")
    path = Path(args.input)
    data = data_io.load_csv(path, args.has_labels or data_io.csv_has_label_header(path))
    if data.d != 1:
        raise UsageError("contour needs 1-d data")
    rows = [r + ("grid",) for r in contour_grid(data, mu1s, mu2s, args.weights, args.vars)]
    if args.at_fit:
        means = json.loads(Path(args.at_fit).read_text(encoding="utf-8"))["model"]["means"]
        if len(means) != 2:
            raise UsageError("--at-fit report must describe a two-component model")
        fitted = contour_grid(data, [means[0][0]], [means[1][0]], args.weights, args.vars)
        rows.append(fitted[0] + ("fit",))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mu1", "mu2", "mean_loglik", "kind"])
    for m1, m2, value, kind in rows:
        writer.writerow([format(m1, ".17g"), format(m2, ".17g"), format(value, ".17g"), kind])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "compare": cmd_compare, "gen": cmd_gen, "contour": cmd_contour}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"partial-em {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
