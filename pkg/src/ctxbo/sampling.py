"""Low-discrepancy candidate generation and acquisition maximization.

Sobol candidates over box bounds double as the probe set for the mean
posterior variance; the acquisition argmax over candidates is polished by
bounded simplex refinement from the top scorers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt
from scipy.stats import qmc

from .acquisition import AcquisitionSpec, score_arrays
from .gp import GpPosterior, _as_bounds

__all__ = [
    "SobolStream",
    "CandidateSet",
    "SearchBudget",
    "sobol_points",
    "mean_posterior_variance",
    "maximize_acquisition",
]

MAX_DIMENSION = 21


class SobolStream:
    """Deterministic Sobol sequence over [0, 1)^d.

    The all-zeros first element of the raw sequence is skipped, so the
    stream starts at the sequence midpoint.  Two streams of equal dimension
    produce bit-identical output.
    """

    def __init__(self, dimension: int):
        if not 1 <= dimension <= MAX_DIMENSION:
            raise ValueError(
                f"dimension must be in [1, {MAX_DIMENSION}], got {dimension}"
            )
        self.dimension = dimension
        self._engine = qmc.Sobol(d=dimension, scramble=False)
        self._engine.fast_forward(1)
        self.index = 1

    def take(self, m: int) -> np.ndarray:
        """Next m points in [0, 1)^d; advances the stream."""
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        with warnings.catch_warnings():
            # scipy warns that non-power-of-two draws lose balance
            # guarantees; the candidate sets here do not rely on them.
            warnings.simplefilter("ignore", UserWarning)
            points = self._engine.random(m)
        self.index += m
        return points


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Candidate points in problem units, tagged with their origin."""

    points: np.ndarray  # (m, d)
    source: str = "sobol"


@dataclass(frozen=True)
class SearchBudget:
    """Candidate count and number of local refinement starts."""

    candidates: int = 2048
    refine_starts: int = 5

    def __post_init__(self):
        if self.candidates < 1:
            raise ValueError(f"candidates must be >= 1, got {self.candidates}")
        if self.refine_starts < 0:
            raise ValueError(f"refine_starts must be >= 0, got {self.refine_starts}")


def sobol_points(stream: SobolStream, m: int, bounds) -> CandidateSet:
    """Next m Sobol points scaled affinely into the box bounds."""
    b = _as_bounds(bounds)
    if b.shape[0] != stream.dimension:
        raise ValueError(
            f"bounds cover {b.shape[0]} dimensions but the stream emits "
            f"{stream.dimension}"
        )
    unit = stream.take(m)
    return CandidateSet(b[:, 0] + unit * (b[:, 1] - b[:, 0]), source="sobol")


def mean_posterior_variance(model: GpPosterior, probes: CandidateSet | np.ndarray) -> float:
    """Arithmetic mean of the predictive variances (standardized space)
    over the probe set; the sigma-bar-squared driving AEI's margin."""
    points = probes.points if isinstance(probes, CandidateSet) else np.atleast_2d(probes)
    if points.shape[0] == 0:
        raise ValueError("probe set must be non-empty")
    _, var = model.predict_standardized(points)
    return float(np.mean(var))


def _score_batch(model, spec, points, incumbent, mpv):
    mean, var = model.predict_standardized(points)
    return score_arrays(mean, np.sqrt(var), incumbent, mpv, spec)


def maximize_acquisition(
    model: GpPosterior,
    spec: AcquisitionSpec,
    bounds,
    budget: SearchBudget | None = None,
    stream: SobolStream | None = None,
    candidates: CandidateSet | None = None,
    mean_variance: float | None = None,
) -> tuple[np.ndarray, float]:
    """Best acquisition point over Sobol candidates plus local refinement.

    Scores ``budget.candidates`` Sobol points (drawn from ``stream`` unless
    a ``candidates`` set is supplied), then runs bounded Nelder-Mead from
    the top ``budget.refine_starts`` scorers.  Returns the best point and
    score found anywhere; refinement never loses ground on the raw
    candidate maximum.  Deterministic given the stream state and model.
    """
    b = _as_bounds(bounds)
    budget = budget or SearchBudget()
    if candidates is None:
        if stream is None:
            stream = SobolStream(b.shape[0])
        candidates = sobol_points(stream, budget.candidates, b)
    points = candidates.points
    incumbent = float(np.max(model.data.targets))  # standardized space
    if mean_variance is None:
        mean_variance = mean_posterior_variance(model, candidates)

    scores = _score_batch(model, spec, points, incumbent, mean_variance)
    best_idx = int(np.argmax(scores))
    best_point = points[best_idx].copy()
    best_score = float(scores[best_idx])

    k = min(budget.refine_starts, points.shape[0])
    if k > 0:
        lo, hi = b[:, 0], b[:, 1]
        d = b.shape[0]

        def negative_score(x):
            x = np.clip(x, lo, hi)
            return -float(_score_batch(model, spec, x[None, :], incumbent, mean_variance)[0])

        top = np.argsort(scores)[::-1][:k]
        for idx in top:
            result = sopt.minimize(
                negative_score,
                points[idx],
                method="Nelder-Mead",
                bounds=sopt.Bounds(lo, hi),
                options={
                    "maxfev": 40 * d + 60,
                    "xatol": 1e-4 * float(np.min(hi - lo)),
                    "fatol": 1e-10,
                },
            )
            refined = np.clip(result.x, lo, hi)
            refined_score = float(
                _score_batch(model, spec, refined[None, :], incumbent, mean_variance)[0]
            )
            if refined_score > best_score:
                best_score = refined_score
                best_point = refined
    return best_point, best_score
