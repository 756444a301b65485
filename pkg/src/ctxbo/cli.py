"""Command-line interface: run studies, sweep epsilon, re-render reports,
and self-test the numerical core.

Exit codes: 0 success, 1 usage/config error, 2 runtime/objective error,
3 self-test failure.
"""

from __future__ import annotations

import argparse
import math
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, parse_config, resolved_config_text
from .objectives import ObjectiveError, self_test
from .runner import (
    RunAbortedError,
    StudyError,
    epsilon_sweep,
    repeat_seeds,
    run_study,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_SELFTEST = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1, not argparse's default 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ctxbo", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ctxbo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one study (one or more strategies)")
    run.add_argument("--config", help="sectioned key=value config file")
    run.add_argument("--objective", help="branin | camelback | hartmann6 | external")
    run.add_argument("--acquisition", choices=["pi", "ei", "aei"])
    run.add_argument("--epsilon", type=float, help="margin for pi/ei")
    run.add_argument("--budget", type=int, help="acquisitions after seeding")
    run.add_argument("--repeats", type=int)
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--out", default="ctxbo-out", help="output directory")

    sweep = sub.add_parser("sweep", help="epsilon sensitivity sweep vs adaptive EI")
    sweep.add_argument("--config", required=True)
    sweep.add_argument(
        "--eps-grid",
        default="0:1:0.1",
        help="start:stop:step inclusive grid (default 0:1:0.1)",
    )
    sweep.add_argument(
        "--full-paper-grid",
        action="store_true",
        help="100 margins at 0.01 resolution (0.00..0.99)",
    )
    sweep.add_argument("--repeats", type=int, default=5)
    sweep.add_argument("--seed", type=int, help="master seed")
    sweep.add_argument("--budget", type=int, help="acquisitions after seeding")
    sweep.add_argument("--out", default="ctxbo-out")

    report = sub.add_parser("report", help="re-render summary and figures from a trace CSV")
    report.add_argument("--traces", required=True)
    report.add_argument("--out", default="ctxbo-out")

    sub.add_parser("selftest", help="verify benchmark optima and numerical oracles")
    return parser


def _parse_eps_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--eps-grid must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"--eps-grid must be numeric, got {text!r}") from None
    if step <= 0 or start < 0 or stop < start:
        raise UsageError(f"--eps-grid needs 0 <= start <= stop and step > 0, got {text!r}")
    grid = np.round(np.arange(start, stop + step / 2, step), 10)
    return grid


def _cmd_run(args) -> int:
    overrides = {
        "objective": args.objective,
        "acquisition": args.acquisition,
        "epsilon": args.epsilon,
        "budget": args.budget,
        "repeats": args.repeats,
        "seed": args.seed,
    }
    configs = parse_config(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_study(configs)

    from .reporting import RunManifest, emit_summary, emit_trace_csv, render_plot

    traces = {s.label: s.traces for s in summary.strategies}
    emit_trace_csv(traces, out / "traces.csv")
    emit_summary([summary], out / "summary.txt")
    render_plot(summary, out / "search_progress.svg")
    config_text = resolved_config_text(configs)
    (out / "config_resolved.txt").write_text(config_text, encoding="utf-8")
    RunManifest(
        command=shlex.join(sys.argv),
        config_text=config_text,
        master_seed=summary.master_seed,
        per_repeat_seeds=summary.repeat_seeds,
        strategies=[s.label for s in summary.strategies],
    ).write(out / "manifest.json")

    print(f"study: {summary.objective_name} ({summary.direction.value})")
    for s in summary.strategies:
        print(
            f"  {s.label:<12} mean_final={s.final_mean:.6g} "
            f"delta_ci={s.delta_ci:.6g} repeats={len(s.traces)}"
        )
    print(f"wrote {out}/traces.csv, summary.txt, search_progress.svg, manifest.json")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    overrides = {"seed": args.seed, "budget": args.budget}
    configs = parse_config(args.config, overrides)
    base = configs[0]
    if args.full_paper_grid:
        grid = np.round(np.arange(0.0, 1.0, 0.01), 10)
    else:
        grid = _parse_eps_grid(args.eps_grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = epsilon_sweep(base, grid, repeats=args.repeats)

    from .reporting import RunManifest, emit_trace_csv, render_plot, sweep_summary_text

    emit_trace_csv(sweep.traces, out / "sweep_traces.csv")
    (out / "sweep_summary.txt").write_text(sweep_summary_text(sweep), encoding="utf-8")
    render_plot(sweep, out / "epsilon_sweep.svg")
    RunManifest(
        command=shlex.join(sys.argv),
        config_text=resolved_config_text(configs),
        master_seed=sweep.master_seed,
        per_repeat_seeds=repeat_seeds(sweep.master_seed, sweep.repeats),
        strategies=sorted(sweep.traces),
    ).write(out / "manifest.json")
    print((out / "sweep_summary.txt").read_text(encoding="utf-8"), end="")
    print(f"wrote {out}/sweep_traces.csv, sweep_summary.txt, epsilon_sweep.svg")
    return EXIT_OK


def _infer_direction(traces) -> str:
    # best_so_far is the running extremum of y; a strictly improving step
    # reveals which extremum.
    for runs in traces.values():
        for trace in runs:
            best = trace.best_values()
            diffs = np.diff(best)
            if np.any(diffs < 0):
                return "minimize"
            if np.any(diffs > 0):
                return "maximize"
    return "minimize"


def _cmd_report(args) -> int:
    from .reporting import emit_summary, read_trace_csv, render_plot
    from .acquisition import AcquisitionKind, AcquisitionSpec
    from .objectives import Direction
    from .runner import StudySummary, _aggregate, z_score

    traces = read_trace_csv(args.traces)
    if not traces:
        raise ObjectiveError(f"no traces found in {args.traces}")
    direction = Direction(_infer_direction(traces))
    strategies = []
    for label, runs in traces.items():
        spec = AcquisitionSpec(AcquisitionKind.AEI)  # label is authoritative here
        strategies.append(_aggregate(label, spec, runs, 0, 1000, 0))
    finals = np.array([s.final_mean for s in strategies])
    dcis = np.array([s.delta_ci for s in strategies])
    labels = [s.label for s in strategies]
    z_search = z_score(finals, better=direction)
    z_dci = z_score(dcis, better=Direction.MINIMIZE)
    summary = StudySummary(
        objective_name=Path(args.traces).stem,
        direction=direction,
        n_init=0,
        budget=len(strategies[0].mean_trace),
        master_seed=0,
        repeat_seeds=[],
        strategies=strategies,
        z_search={l: float(z) for l, z in zip(labels, z_search)},
        z_delta_ci={l: float(z) for l, z in zip(labels, z_dci)},
        z_overall={
            l: float((zs + zd) / 2) for l, zs, zd in zip(labels, z_search, z_dci)
        },
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_summary([summary], out / "summary.txt")
    render_plot(summary, out / "search_progress.svg")
    print(f"wrote {out}/summary.txt, search_progress.svg")
    return EXIT_OK


def _oracle_checks() -> list[tuple[str, bool, str]]:
    """Fast numerical cross-checks of the core against independent routes."""
    import numpy as np

    from . import acquisition as acq
    from . import gp
    from .runner import bootstrap_ci
    from .sampling import SobolStream

    checks = []
    rng = np.random.default_rng(20240809)

    # GP predict vs dense explicit-inverse posterior
    X = rng.uniform(0.0, 10.0, size=(8, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1]
    data = gp.Dataset(X, y, [(0.0, 10.0), (0.0, 10.0)])
    params = gp.KernelParams(np.array([2.0, 3.0]), 1.5, 0.01)
    post = gp.fit_posterior(data, params)
    Q = rng.uniform(0.0, 10.0, size=(5, 2))
    mean, var = post.predict_standardized(Q)
    K = gp.kernel_matrix(X, X, params) + (params.noise_variance + post.jitter) * np.eye(8)
    Ks = gp.kernel_matrix(X, Q, params)
    Kinv = np.linalg.inv(K)
    dense_mean = Ks.T @ Kinv @ post.data.targets
    dense_var = params.signal_variance - np.sum(Ks * (Kinv @ Ks), axis=0) + params.noise_variance
    ok = np.allclose(mean, dense_mean, rtol=1e-8, atol=1e-10) and np.allclose(
        var, dense_var, rtol=1e-8, atol=1e-10
    )
    checks.append(("gp predict vs dense inverse", ok, "rtol 1e-8"))

    # LML Cholesky route vs explicit determinant/inverse
    lml = post.log_marginal_likelihood
    yst = post.data.targets
    dense_lml = (
        -0.5 * yst @ Kinv @ yst
        - 0.5 * np.linalg.slogdet(K)[1]
        - 0.5 * len(yst) * np.log(2 * np.pi)
    )
    checks.append(
        ("gp lml vs dense determinant", bool(abs(lml - dense_lml) < 1e-8), "atol 1e-8")
    )

    # closed-form EI vs Monte Carlo
    mc = rng.normal(1.0, 1.0, size=200_000)
    est = np.maximum(mc - 0.5, 0.0).mean()
    se = np.maximum(mc - 0.5, 0.0).std() / math.sqrt(mc.size)
    ei = acq.expected_improvement(
        acq.PosteriorSummary(mean=1.0, sigma=1.0, incumbent=0.5),
        acq.AcquisitionSpec(acq.AcquisitionKind.EI),
    )
    checks.append(
        ("expected improvement vs monte carlo", bool(abs(ei - est) < 4 * se), f"4 se = {4*se:.2g}")
    )

    # Sobol reference points
    pts = SobolStream(2).take(3)
    expected = np.array([[0.5, 0.5], [0.75, 0.25], [0.25, 0.75]])
    checks.append(("sobol reference points", bool(np.array_equal(pts, expected)), "d=2 first three"))

    # bootstrap degeneracy
    lo, hi = bootstrap_ci(np.full(10, 3.25), resamples=500, seed=1)
    checks.append(("bootstrap degeneracy", bool(lo == hi == 3.25), "constant inputs"))
    return checks


def _cmd_selftest() -> int:
    failures = 0
    for name, ok, detail in self_test() + _oracle_checks():
        print(f"{'ok  ' if ok else 'FAIL'} {name} ({detail})")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} self-test check(s) failed")
        return EXIT_SELFTEST
    print("all self-test checks passed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_selftest()
    except (UsageError, ConfigError) as exc:
        print(f"ctxbo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ObjectiveError, RunAbortedError, StudyError, OSError) as exc:
        print(f"ctxbo: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
