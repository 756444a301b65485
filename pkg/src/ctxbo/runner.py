"""The Bayesian-optimization loop and the repeated-search evaluation protocol.

One run: seed points, then a fit / maximize-acquisition / evaluate cycle.
One study: paired repeats of that run for several acquisition strategies,
aggregated into bootstrap mean traces, the 10th-90th percentile spread of
the final result (delta CI), and range-normalized Z rankings.  Epsilon
sweeps replay the study over a grid of fixed margins against the adaptive
strategy and reduce the comparison to loss/gain risk areas.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp
from .acquisition import AcquisitionKind, AcquisitionSpec, contextual_variance
from .objectives import Direction, Objective, ObjectiveError, as_internal_max
from .sampling import SearchBudget, SobolStream, maximize_acquisition, mean_posterior_variance, sobol_points

__all__ = [
    "ExperimentConfig",
    "default_search_budget",
    "repeat_seeds",
    "TraceRecord",
    "Trace",
    "StrategyResult",
    "StudySummary",
    "SweepResult",
    "RunAbortedError",
    "StudyError",
    "strategy_label",
    "run_bo",
    "run_study",
    "bootstrap_ci",
    "delta_ci",
    "z_score",
    "overall_z",
    "epsilon_sweep",
    "risk_area",
]

# Proposals closer than this fraction of the domain diagonal to an existing
# observation are replaced by the most uncertain candidate.
DUPLICATE_REL_TOL = 1e-9

MAX_CONSECUTIVE_FAILURES = 3
MIN_SURVIVING_REPEATS = 3


class RunAbortedError(RuntimeError):
    """A run aborted on repeated objective failures; carries the partial trace."""

    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


class StudyError(RuntimeError):
    """Too few repeats survived to aggregate a study."""


def default_search_budget(dimension: int) -> SearchBudget:
    """Dimension-scaled acquisition search budget.

    2048 Sobol candidates cover 2-3 dimensions well but under-sample higher
    ones (measured: Hartmann-6 searches stall), so the candidate count grows
    with dimension (next power of two of 1024*d) and high-dimensional
    searches get more refinement starts.
    """
    candidates = max(2048, 1 << (1024 * dimension - 1).bit_length())
    return SearchBudget(candidates=candidates, refine_starts=5 if dimension <= 3 else 10)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one repeated-search experiment depends on.

    ``candidate_budget=None`` resolves to the dimension-scaled default for
    the configured objective.
    """

    objective: Objective
    acquisition: AcquisitionSpec
    n_init: int = 3
    budget: int = 50
    repeats: int = 10
    master_seed: int = 0
    candidate_budget: SearchBudget | None = None
    bootstrap_resamples: int = 1000
    gp_restarts: int = 5

    def __post_init__(self):
        if self.candidate_budget is None:
            object.__setattr__(
                self, "candidate_budget", default_search_budget(self.objective.dimension)
            )
        if self.n_init < 1:
            raise ValueError(f"n_init must be >= 1, got {self.n_init}")
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if self.bootstrap_resamples < 1:
            raise ValueError(
                f"bootstrap_resamples must be >= 1, got {self.bootstrap_resamples}"
            )
        if self.gp_restarts < 0:
            raise ValueError(f"gp_restarts must be >= 0, got {self.gp_restarts}")


@dataclass(frozen=True)
class TraceRecord:
    """One sampling step: where, what was observed, and the model state."""

    iteration: int
    point: np.ndarray
    value: float  # problem units
    best_so_far: float  # problem units
    contextual_variance: float  # nan for seed records
    mean_posterior_variance: float  # nan for seed records
    kernel_valid: bool


@dataclass
class Trace:
    """Per-iteration record of one run, plus its seed."""

    strategy: str
    seed: int
    records: list[TraceRecord] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def best_values(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.records])

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    def points(self) -> np.ndarray:
        return np.array([r.point for r in self.records])

    @property
    def final_best(self) -> float:
        return self.records[-1].best_so_far


def strategy_label(spec: AcquisitionSpec) -> str:
    if spec.kind is AcquisitionKind.AEI:
        return "aei"
    return f"{spec.kind.value}-{repr(round(spec.margin, 10))}"


def _default_params(bounds: np.ndarray) -> gp.KernelParams:
    ranges = bounds[:, 1] - bounds[:, 0]
    return gp.KernelParams(
        lengthscales=0.2 * ranges, signal_variance=1.0, noise_variance=1e-4
    )


def _better(direction: Direction):
    return min if direction is Direction.MINIMIZE else max


def run_bo(config: ExperimentConfig, run_seed: int) -> Trace:
    """One full Bayesian-optimization run.

    Seeds with uniform-random in-bounds points, then repeats: standardize
    targets and fit the GP with hyperparameter optimization, compute the
    mean posterior variance over fresh Sobol candidates, maximize the
    acquisition, evaluate, append.  Deterministic given (config, run_seed).
    """
    objective = config.objective
    internal = as_internal_max(objective)
    bounds = np.asarray(objective.bounds, dtype=float)
    d = objective.dimension
    rng = np.random.default_rng(int(run_seed))
    stream = SobolStream(d)
    flip = -1.0 if objective.direction is Direction.MINIMIZE else 1.0
    better = _better(objective.direction)
    trace = Trace(strategy=strategy_label(config.acquisition), seed=int(run_seed))

    def evaluate(point: np.ndarray) -> float:
        failures = 0
        while True:
            try:
                return float(internal.evaluator(point))
            except ObjectiveError as exc:
                failures += 1
                trace.notes.append(
                    f"evaluation failure {failures}/{MAX_CONSECUTIVE_FAILURES} "
                    f"at {point.tolist()}: {exc}"
                )
                if failures >= MAX_CONSECUTIVE_FAILURES:
                    raise RunAbortedError(
                        f"aborted after {failures} consecutive objective "
                        f"failures: {exc}",
                        trace,
                    ) from exc

    points: list[np.ndarray] = []
    internal_targets: list[float] = []
    best = None

    def record(point, y_internal, c_v, sbar, valid):
        nonlocal best
        value = flip * y_internal
        best = value if best is None else better(best, value)
        points.append(point)
        internal_targets.append(y_internal)
        trace.records.append(
            TraceRecord(
                iteration=len(trace.records) + 1,
                point=np.array(point, dtype=float),
                value=value,
                best_so_far=best,
                contextual_variance=c_v,
                mean_posterior_variance=sbar,
                kernel_valid=valid,
            )
        )

    init = bounds[:, 0] + rng.random((config.n_init, d)) * (bounds[:, 1] - bounds[:, 0])
    for x in init:
        record(x, evaluate(x), math.nan, math.nan, True)

    params = _default_params(bounds)
    diagonal = float(np.linalg.norm(bounds[:, 1] - bounds[:, 0]))
    for _ in range(config.budget):
        dataset = gp.Dataset(np.array(points), np.array(internal_targets), bounds)
        params = gp.optimize_hyperparameters(
            dataset, params, restarts=config.gp_restarts, rng=rng
        )
        report = gp.check_kernel_validity(params, bounds)
        if not report.valid:
            # Vanishing lengthscales signal a mis-specified kernel; reset
            # the offending dimensions to the domain range and continue.
            ls = params.lengthscales.copy()
            for dim in report.flagged_dimensions:
                ls[dim] = bounds[dim, 1] - bounds[dim, 0]
            params = replace(params, lengthscales=ls)
        model = gp.fit_posterior(dataset, params)

        candidates = sobol_points(stream, config.candidate_budget.candidates, bounds)
        sbar = mean_posterior_variance(model, candidates)
        incumbent = float(np.max(model.data.targets))
        c_v = contextual_variance(sbar, incumbent)
        proposal, _ = maximize_acquisition(
            model,
            config.acquisition,
            bounds,
            budget=config.candidate_budget,
            candidates=candidates,
            mean_variance=sbar,
        )
        distances = np.linalg.norm(np.array(points) - proposal, axis=1)
        if float(distances.min()) <= DUPLICATE_REL_TOL * diagonal:
            _, var = model.predict_standardized(candidates.points)
            proposal = candidates.points[int(np.argmax(var))].copy()
            trace.notes.append(
                f"duplicate proposal at iteration {len(trace.records) + 1}; "
                "substituted the most uncertain candidate"
            )
        record(proposal, evaluate(proposal), c_v, sbar, report.valid)
    return trace


def bootstrap_ci(
    values,
    resamples: int = 1000,
    percentiles: tuple[float, float] = (10.0, 90.0),
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap of the sample mean.

    Resamples ``values`` with replacement, takes the mean of each resample,
    and returns the requested percentiles of those means.  Deterministic
    given ``seed``.
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.shape[0]
    if n < 1:
        raise ValueError("bootstrap_ci needs at least one value")
    if n == 1:
        return float(values[0]), float(values[0])
    rng = np.random.default_rng(int(seed))
    idx = rng.integers(0, n, size=(int(resamples), n))
    means = values[idx].mean(axis=1)
    low, high = np.percentile(means, percentiles)
    return float(low), float(high)


def delta_ci(
    traces,
    resamples: int = 1000,
    seed: int = 0,
) -> float:
    """Spread between the 10th and 90th bootstrap percentiles of the mean
    final best-so-far across repeated runs; the robustness metric."""
    traces = list(traces)
    lengths = {len(t.records) for t in traces}
    if len(lengths) > 1:
        raise ValueError("all traces must have the same length")
    finals = np.array([t.final_best for t in traces])
    low, high = bootstrap_ci(finals, resamples=resamples, seed=seed)
    return high - low


def z_score(results, better: Direction) -> np.ndarray:
    """Range-normalized ranking: 0 for the best strategy, 1 for the worst.

    Invariant under positive affine transforms of the results.  With fewer
    than two distinct results the ranking is all zeros by convention.
    """
    results = np.asarray(results, dtype=float)
    span = float(results.max() - results.min())
    if results.size < 2 or span == 0.0:
        return np.zeros_like(results)
    best = results.min() if better is Direction.MINIMIZE else results.max()
    return np.abs(results - best) / span


@dataclass
class StrategyResult:
    """Aggregates of one strategy's surviving repeats."""

    label: str
    spec: AcquisitionSpec
    traces: list[Trace]
    dropped: int
    mean_trace: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    final_values: np.ndarray
    final_mean: float
    delta_ci: float


@dataclass
class StudySummary:
    """Cross-strategy statistics of one repeated-search study."""

    objective_name: str
    direction: Direction
    n_init: int
    budget: int
    master_seed: int
    repeat_seeds: list[int]
    strategies: list[StrategyResult]
    z_search: dict[str, float]
    z_delta_ci: dict[str, float]
    z_overall: dict[str, float]

    def strategy(self, label: str) -> StrategyResult:
        for s in self.strategies:
            if s.label == label:
                return s
        raise KeyError(label)


def repeat_seeds(master_seed: int, repeats: int) -> list[int]:
    """The per-repeat run seeds derived from one master seed.  Repeat i of
    every strategy shares seed i, pairing the comparisons."""
    state = np.random.SeedSequence(int(master_seed)).generate_state(
        repeats, dtype=np.uint64
    )
    return [int(s) for s in state]


def _bootstrap_seed(master_seed: int) -> int:
    return int(
        np.random.SeedSequence([int(master_seed), 0xB0075EED]).generate_state(1)[0]
    )


def _aggregate(
    label: str,
    spec: AcquisitionSpec,
    traces: list[Trace],
    dropped: int,
    resamples: int,
    boot_seed: int,
) -> StrategyResult:
    best = np.array([t.best_values() for t in traces])  # (runs, T)
    n = best.shape[0]
    rng = np.random.default_rng(boot_seed)
    idx = rng.integers(0, n, size=(resamples, n))
    if n == 1:
        band_low = band_high = best[0].copy()
    else:
        resampled = best[idx].mean(axis=1)  # (resamples, T)
        band_low, band_high = np.percentile(resampled, [10.0, 90.0], axis=0)
    finals = best[:, -1]
    return StrategyResult(
        label=label,
        spec=spec,
        traces=traces,
        dropped=dropped,
        mean_trace=best.mean(axis=0),
        band_low=band_low,
        band_high=band_high,
        final_values=finals,
        final_mean=float(finals.mean()),
        delta_ci=delta_ci(traces, resamples=resamples, seed=boot_seed),
    )


def run_study(configs) -> StudySummary:
    """Run all repeats of all strategy variants from a shared seed schedule
    and aggregate them.

    The variants must differ only in their acquisition spec.  A repeat that
    aborts on objective failures is dropped with a warning; at least
    min(repeats, 3) repeats must survive per strategy.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("run_study needs at least one config")
    base = configs[0]
    for cfg in configs[1:]:
        if replace(cfg, acquisition=base.acquisition) != base:
            raise ValueError("study variants may differ only in acquisition")
    labels = [strategy_label(c.acquisition) for c in configs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate strategy variants: {labels}")

    seeds = repeat_seeds(base.master_seed, base.repeats)
    boot_seed = _bootstrap_seed(base.master_seed)
    required = min(base.repeats, MIN_SURVIVING_REPEATS)
    strategies = []
    for cfg, label in zip(configs, labels):
        traces, dropped = [], 0
        for seed in seeds:
            try:
                traces.append(run_bo(cfg, seed))
            except RunAbortedError as exc:
                dropped += 1
                warnings.warn(
                    f"{label} repeat with seed {seed} aborted: {exc}",
                    RuntimeWarning,
                    stacklevel=2,
                )
        if len(traces) < required:
            raise StudyError(
                f"{label}: only {len(traces)} of {base.repeats} repeats "
                f"survived (need {required})"
            )
        strategies.append(
            _aggregate(label, cfg.acquisition, traces, dropped,
                       base.bootstrap_resamples, boot_seed)
        )

    finals = np.array([s.final_mean for s in strategies])
    dcis = np.array([s.delta_ci for s in strategies])
    z_search = z_score(finals, better=base.objective.direction)
    z_dci = z_score(dcis, better=Direction.MINIMIZE)
    return StudySummary(
        objective_name=base.objective.name,
        direction=base.objective.direction,
        n_init=base.n_init,
        budget=base.budget,
        master_seed=base.master_seed,
        repeat_seeds=seeds,
        strategies=strategies,
        z_search={l: float(z) for l, z in zip(labels, z_search)},
        z_delta_ci={l: float(z) for l, z in zip(labels, z_dci)},
        z_overall={
            l: float((zs + zd) / 2.0)
            for l, zs, zd in zip(labels, z_search, z_dci)
        },
    )


def overall_z(summaries) -> dict[str, dict[str, float]]:
    """Average the per-study Z scores over several studies.

    Returns {label: {"search": ..., "delta_ci": ..., "overall": ...}} for
    the strategies common to every study.
    """
    summaries = list(summaries)
    if not summaries:
        return {}
    labels = [s.label for s in summaries[0].strategies]
    common = [
        l for l in labels if all(l in s.z_search for s in summaries)
    ]
    out = {}
    for label in common:
        search = float(np.mean([s.z_search[label] for s in summaries]))
        dci = float(np.mean([s.z_delta_ci[label] for s in summaries]))
        out[label] = {
            "search": search,
            "delta_ci": dci,
            "overall": (search + dci) / 2.0,
        }
    return out


@dataclass
class SweepResult:
    """Mean traces of fixed-margin EI over an epsilon grid, alongside the
    adaptive strategy's mean trace, all on a shared seed schedule."""

    objective_name: str
    direction: Direction
    epsilons: np.ndarray
    eps_mean_traces: np.ndarray  # (grid, T)
    adaptive_trace: np.ndarray  # (T,)
    traces: dict[str, list[Trace]]
    repeats: int
    master_seed: int
    n_init: int
    budget: int


def epsilon_sweep(
    base: ExperimentConfig, eps_grid, repeats: int | None = None
) -> SweepResult:
    """Mean best-so-far trace for EI at every margin in ``eps_grid`` plus
    the adaptive (AEI) trace, sharing one seed schedule."""
    eps_grid = np.asarray(list(eps_grid), dtype=float)
    if eps_grid.size == 0:
        raise ValueError("eps_grid must be non-empty")
    if np.any(eps_grid < 0):
        raise ValueError("eps_grid values must be >= 0")
    repeats = base.repeats if repeats is None else int(repeats)
    convention = base.acquisition.margin_convention
    seeds = repeat_seeds(base.master_seed, repeats)

    def run_strategy(spec: AcquisitionSpec) -> list[Trace]:
        cfg = replace(base, acquisition=spec, repeats=repeats)
        out = []
        for seed in seeds:
            out.append(run_bo(cfg, seed))
        return out

    traces: dict[str, list[Trace]] = {}
    eps_means = []
    for eps in eps_grid:
        spec = AcquisitionSpec(
            AcquisitionKind.EI, margin=float(eps), margin_convention=convention
        )
        runs = run_strategy(spec)
        traces[strategy_label(spec)] = runs
        eps_means.append(np.mean([t.best_values() for t in runs], axis=0))
    aei_spec = AcquisitionSpec(AcquisitionKind.AEI, margin_convention=convention)
    aei_runs = run_strategy(aei_spec)
    traces[strategy_label(aei_spec)] = aei_runs
    return SweepResult(
        objective_name=base.objective.name,
        direction=base.objective.direction,
        epsilons=eps_grid,
        eps_mean_traces=np.array(eps_means),
        adaptive_trace=np.mean([t.best_values() for t in aei_runs], axis=0),
        traces=traces,
        repeats=repeats,
        master_seed=base.master_seed,
        n_init=base.n_init,
        budget=base.budget,
    )


def risk_area(
    eps_traces: np.ndarray, adaptive_trace: np.ndarray, direction: Direction
) -> tuple[float, float]:
    """Aggregate disadvantage (loss) and advantage (gain) of the fixed-
    margin traces relative to the adaptive trace.

    Sums max(0, how much worse) and max(0, how much better) over every
    grid value and iteration, oriented by ``direction``.
    """
    eps_traces = np.atleast_2d(np.asarray(eps_traces, dtype=float))
    adaptive = np.asarray(adaptive_trace, dtype=float)
    if eps_traces.shape[1] != adaptive.shape[0]:
        raise ValueError(
            f"trace lengths differ: {eps_traces.shape[1]} vs {adaptive.shape[0]}"
        )
    diff = eps_traces - adaptive[None, :]
    if direction is Direction.MINIMIZE:
        worse = diff  # higher best-so-far is worse
    else:
        worse = -diff
    loss = float(np.sum(np.maximum(worse, 0.0)))
    gain = float(np.sum(np.maximum(-worse, 0.0)))
    return loss, gain
