"""Improvement-based acquisition rules.

Probability of improvement, expected improvement with a fixed exploration
margin, and adaptive expected improvement (AEI) whose margin is the
contextual variance: the mean posterior variance scaled by the incumbent.
All rules are stated for maximization; minimization objectives are negated
upstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

__all__ = [
    "AcquisitionKind",
    "MarginConvention",
    "AcquisitionSpec",
    "PosteriorSummary",
    "normal_pdf",
    "normal_cdf",
    "improvement",
    "probability_of_improvement",
    "expected_improvement",
    "contextual_variance",
    "contextual_improvement",
    "score",
    "score_arrays",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Floor on |incumbent| in the contextual-variance ratio, so the margin
# stays finite and non-negative when the best value is near zero.
INCUMBENT_FLOOR = 1e-3


class AcquisitionKind(str, Enum):
    PI = "pi"
    EI = "ei"
    AEI = "aei"


class MarginConvention(str, Enum):
    """How the exploration margin enters the improvement numerator.

    RAISE_TARGET subtracts the margin (improvement over incumbent + margin,
    the conventional reading); PAPER_LITERAL adds it, reproducing the
    printed formula some sources use.
    """

    RAISE_TARGET = "raise-target"
    PAPER_LITERAL = "paper-literal"


@dataclass(frozen=True)
class AcquisitionSpec:
    """Which acquisition rule to score with, and its parameters."""

    kind: AcquisitionKind
    margin: float = 0.0
    margin_convention: MarginConvention = MarginConvention.RAISE_TARGET

    def __post_init__(self):
        object.__setattr__(self, "kind", AcquisitionKind(self.kind))
        object.__setattr__(
            self, "margin_convention", MarginConvention(self.margin_convention)
        )
        if not (self.margin >= 0.0):
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.kind is AcquisitionKind.AEI and self.margin != 0.0:
            raise ValueError(
                "AEI computes its margin from the model state; a user margin "
                "is not accepted"
            )


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior state at one candidate: predictive mean and standard
    deviation, the incumbent best value, and the mean posterior variance
    over the probe set."""

    mean: float
    sigma: float
    incumbent: float
    mean_posterior_variance: float = 0.0

    def __post_init__(self):
        if not (self.sigma >= 0.0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not (self.mean_posterior_variance >= 0.0):
            raise ValueError(
                f"mean_posterior_variance must be >= 0, got "
                f"{self.mean_posterior_variance}"
            )


def normal_pdf(z):
    """Standard normal density exp(-z^2/2)/sqrt(2*pi)."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z**2) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def normal_cdf(z):
    """Standard normal CDF, exact to double precision, clamped to [0, 1]."""
    z = np.asarray(z, dtype=float)
    out = ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def _signed_gain(mean, incumbent, margin, convention: MarginConvention):
    if convention is MarginConvention.RAISE_TARGET:
        return mean - incumbent - margin
    return mean - incumbent + margin


def _gamma_arrays(mean, sigma, incumbent, margin, convention):
    gain = _signed_gain(mean, incumbent, margin, convention)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(sigma > 0.0, gain / np.where(sigma > 0.0, sigma, 1.0), 0.0)
    # sigma == 0: the improvement is deterministic, so gamma degenerates to
    # +/- infinity (or 0 at exact equality).
    zero = sigma == 0.0
    if np.any(zero):
        gamma = np.where(zero & (gain > 0.0), np.inf, gamma)
        gamma = np.where(zero & (gain < 0.0), -np.inf, gamma)
    return gamma


def _ei_arrays(mean, sigma, incumbent, margin, convention):
    gain = _signed_gain(mean, incumbent, margin, convention)
    gamma = _gamma_arrays(mean, sigma, incumbent, margin, convention)
    with np.errstate(invalid="ignore"):
        closed = sigma * (gamma * ndtr(gamma) + np.exp(-0.5 * gamma**2) / _SQRT_2PI)
    # sigma == 0 limit: max(0, gain).
    out = np.where(sigma > 0.0, closed, np.maximum(gain, 0.0))
    return np.maximum(out, 0.0)


def improvement(
    s: PosteriorSummary,
    margin: float = 0.0,
    convention: MarginConvention = MarginConvention.RAISE_TARGET,
) -> float:
    """Standardized improvement gamma = (mean - incumbent -/+ margin)/sigma.

    The margin sign follows ``convention``; sigma == 0 yields the
    deterministic limit (+/- inf, or 0 at exact equality).
    """
    if not (margin >= 0.0):
        raise ValueError(f"margin must be >= 0, got {margin}")
    return float(
        _gamma_arrays(
            np.asarray(s.mean), np.asarray(s.sigma), s.incumbent, margin, convention
        )
    )


def probability_of_improvement(s: PosteriorSummary, spec: AcquisitionSpec) -> float:
    """PI = Phi(gamma); lies in [0, 1] and increases with the mean."""
    if spec.kind is not AcquisitionKind.PI:
        raise ValueError(f"spec.kind must be PI, got {spec.kind}")
    gamma = _gamma_arrays(
        np.asarray(s.mean),
        np.asarray(s.sigma),
        s.incumbent,
        spec.margin,
        spec.margin_convention,
    )
    return float(ndtr(gamma))


def expected_improvement(s: PosteriorSummary, spec: AcquisitionSpec) -> float:
    """Closed-form expected improvement over the (margin-shifted) incumbent.

    EI = gain * Phi(gamma) + sigma * phi(gamma), clamped at 0.  For EI the
    margin is the user's; for AEI it is the contextual variance computed
    from the summary's mean posterior variance and incumbent.
    """
    if spec.kind is AcquisitionKind.EI:
        margin = spec.margin
    elif spec.kind is AcquisitionKind.AEI:
        margin = contextual_variance(s.mean_posterior_variance, s.incumbent)
    else:
        raise ValueError(f"spec.kind must be EI or AEI, got {spec.kind}")
    return float(
        _ei_arrays(
            np.asarray(s.mean),
            np.asarray(s.sigma),
            s.incumbent,
            margin,
            spec.margin_convention,
        )
    )


def contextual_variance(mean_posterior_variance: float, incumbent: float) -> float:
    """Mean posterior variance scaled by the incumbent magnitude.

    c_v = mean_posterior_variance / max(|incumbent|, floor); the floor
    keeps the ratio finite and non-negative for near-zero incumbents.
    """
    if not (mean_posterior_variance >= 0.0):
        raise ValueError(
            f"mean_posterior_variance must be >= 0, got {mean_posterior_variance}"
        )
    return mean_posterior_variance / max(abs(incumbent), INCUMBENT_FLOOR)


def contextual_improvement(
    s: PosteriorSummary,
    convention: MarginConvention = MarginConvention.RAISE_TARGET,
) -> float:
    """Improvement whose margin is the contextual variance, tying the
    explore/exploit trade-off to the model's current mean uncertainty."""
    c_v = contextual_variance(s.mean_posterior_variance, s.incumbent)
    return improvement(s, margin=c_v, convention=convention)


def score_arrays(
    means: np.ndarray,
    sigmas: np.ndarray,
    incumbent: float,
    mean_posterior_variance: float,
    spec: AcquisitionSpec,
) -> np.ndarray:
    """Vectorized acquisition scores for a batch sharing one incumbent and
    one mean posterior variance."""
    means = np.asarray(means, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if spec.kind is AcquisitionKind.PI:
        gamma = _gamma_arrays(
            means, sigmas, incumbent, spec.margin, spec.margin_convention
        )
        return ndtr(gamma)
    if spec.kind is AcquisitionKind.EI:
        margin = spec.margin
    else:  # AEI: the margin is computed once for the whole batch
        margin = contextual_variance(mean_posterior_variance, incumbent)
    return _ei_arrays(means, sigmas, incumbent, margin, spec.margin_convention)


def score(batch, spec: AcquisitionSpec) -> np.ndarray:
    """Score a batch of PosteriorSummary values under one rule.

    All summaries must share the same incumbent and mean posterior
    variance (they describe one model state).
    """
    batch = list(batch)
    if not batch:
        return np.empty(0)
    incumbent = batch[0].incumbent
    mpv = batch[0].mean_posterior_variance
    for s in batch[1:]:
        if s.incumbent != incumbent or s.mean_posterior_variance != mpv:
            raise ValueError(
                "all summaries in a batch must share the same incumbent and "
                "mean_posterior_variance"
            )
    means = np.array([s.mean for s in batch])
    sigmas = np.array([s.sigma for s in batch])
    return score_arrays(means, sigmas, incumbent, mpv, spec)
