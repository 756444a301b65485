"""Gaussian-process regression with a squared-exponential ARD kernel.

Exact inference by Cholesky factorization on internally standardized
targets, log-marginal-likelihood evaluation, and multi-start simplex
hyperparameter fitting in log-parameter space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import optimize as sopt

__all__ = [
    "Dataset",
    "KernelParams",
    "GpPosterior",
    "ValidityReport",
    "FitError",
    "kernel_eval",
    "kernel_matrix",
    "fit_posterior",
    "log_marginal_likelihood",
    "optimize_hyperparameters",
    "check_kernel_validity",
]

# Jitter added to the Gram diagonal, relative to the signal variance.
JITTER_INITIAL = 1e-8
JITTER_MAX = 1e-2

# Log-space search box for hyperparameter fitting.  Lengthscale limits are
# relative to the per-dimension domain range.
LENGTHSCALE_REL_MIN = 1e-4
LENGTHSCALE_REL_MAX = 1e4
LOG_SIGNAL_VARIANCE_BOUNDS = (-10.0, 10.0)
LOG_NOISE_VARIANCE_BOUNDS = (-12.0, 2.0)

# A lengthscale below this fraction of the domain range is treated as
# vanishing (a symptom of a mis-specified kernel).
VANISHING_REL_THRESHOLD = 1e-3


class FitError(RuntimeError):
    """Cholesky factorization failed even after full jitter escalation."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


def _as_bounds(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError(f"bounds must have shape (d, 2), got {b.shape}")
    if not np.all(b[:, 0] < b[:, 1]):
        raise ValueError("bounds must satisfy lower < upper in every dimension")
    return b


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed inputs and targets plus the box bounds they live in.

    ``points`` is (n, d) in problem units, ``targets`` is (n,), ``bounds``
    is (d, 2) rows of (lower, upper).
    """

    points: np.ndarray
    targets: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        targets = np.asarray(self.targets, dtype=float).ravel()
        bounds = _as_bounds(self.bounds)
        if points.shape[0] != targets.shape[0]:
            raise ValueError(
                f"{points.shape[0]} points but {targets.shape[0]} targets"
            )
        if points.shape[1] != bounds.shape[0]:
            raise ValueError(
                f"points are {points.shape[1]}-dimensional but bounds cover "
                f"{bounds.shape[0]} dimensions"
            )
        if points.size and (
            np.any(points < bounds[:, 0]) or np.any(points > bounds[:, 1])
        ):
            raise ValueError("every point must lie within bounds, coordinate-wise")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "bounds", bounds)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def with_observation(self, point, target: float) -> "Dataset":
        """Return a new dataset extended by one (point, target) pair."""
        point = np.asarray(point, dtype=float).reshape(1, -1)
        return Dataset(
            np.vstack([self.points, point]),
            np.append(self.targets, float(target)),
            self.bounds,
        )


@dataclass(frozen=True, eq=False)
class KernelParams:
    """SE-ARD kernel hyperparameters: per-dimension lengthscales plus
    signal and noise variances."""

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float).ravel()
        if ls.size == 0 or np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must all be strictly positive")
        if not (self.signal_variance > 0 and math.isfinite(self.signal_variance)):
            raise ValueError("signal_variance must be strictly positive")
        if not (self.noise_variance >= 0 and math.isfinite(self.noise_variance)):
            raise ValueError("noise_variance must be non-negative")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def dimension(self) -> int:
        return self.lengthscales.shape[0]


def kernel_eval(a, b, params: KernelParams) -> float:
    """Squared-exponential ARD covariance between two points.

    k(a, b) = signal_variance * exp(-0.5 * sum_i (a_i - b_i)^2 / l_i^2)
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape or a.shape[0] != params.dimension:
        raise ValueError(
            f"dimension mismatch: a has {a.shape[0]}, b has {b.shape[0]}, "
            f"lengthscales have {params.dimension}"
        )
    z = (a - b) / params.lengthscales
    return params.signal_variance * math.exp(-0.5 * float(z @ z))


def kernel_matrix(xa: np.ndarray, xb: np.ndarray, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix of shape (len(xa), len(xb))."""
    sa = xa / params.lengthscales
    sb = xb / params.lengthscales
    sq = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * (sa @ sb.T)
    )
    np.clip(sq, 0.0, None, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq)


def _standardize(targets: np.ndarray) -> tuple[np.ndarray, float, float]:
    # Zero mean, unit variance; scaling is skipped for n < 2 or zero spread.
    mean = float(np.mean(targets))
    std = 1.0
    if targets.size >= 2:
        s = float(np.std(targets))
        if s > 0.0:
            std = s
    return (targets - mean) / std, mean, std


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """Fitted GP: standardized conditioning data, kernel hyperparameters,
    and the Cholesky factorization answering mean/variance queries."""

    data: Dataset  # targets stored in standardized space
    params: KernelParams
    chol: np.ndarray  # lower-triangular factor of K + noise*I + jitter*I
    alpha: np.ndarray  # (K + noise*I + jitter*I)^-1 @ standardized targets
    y_mean: float
    y_std: float
    jitter: float
    log_marginal_likelihood: float

    def predict_standardized(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and marginal predictive variance (noise included)
        in the standardized target space."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if queries.shape[1] != self.data.dimension:
            raise ValueError(
                f"queries are {queries.shape[1]}-dimensional but the model "
                f"was trained on {self.data.dimension} dimensions"
            )
        k_star = kernel_matrix(self.data.points, queries, self.params)
        mean = k_star.T @ self.alpha
        v = sla.solve_triangular(self.chol, k_star, lower=True, check_finite=False)
        latent = self.params.signal_variance - np.sum(v**2, axis=0)
        np.clip(latent, 0.0, None, out=latent)  # round-off guard
        return mean, latent + self.params.noise_variance

    def predict(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and marginal predictive variance in problem units."""
        mean, var = self.predict_standardized(queries)
        return self.y_mean + self.y_std * mean, (self.y_std**2) * var


def _factorize(gram: np.ndarray, signal_variance: float) -> tuple[np.ndarray, float]:
    jitter = JITTER_INITIAL * signal_variance
    limit = JITTER_MAX * signal_variance
    n = gram.shape[0]
    while True:
        try:
            chol = sla.cholesky(
                gram + jitter * np.eye(n), lower=True, check_finite=False
            )
            return chol, jitter
        except sla.LinAlgError:
            jitter *= 10.0
            if jitter > limit:
                raise FitError(
                    "Gram matrix is not positive definite even with jitter "
                    f"{jitter:.3e}",
                    jitter=jitter,
                ) from None


def fit_posterior(
    data: Dataset, params: KernelParams, standardize: bool = True
) -> GpPosterior:
    """Condition the GP on ``data``.

    Targets are standardized internally unless ``standardize`` is False
    (raw-space mode, mainly for testing against closed forms).
    """
    if data.n < 1:
        raise ValueError("at least one observation is required before fitting")
    if params.dimension != data.dimension:
        raise ValueError(
            f"kernel covers {params.dimension} dimensions but data has "
            f"{data.dimension}"
        )
    if standardize:
        y, y_mean, y_std = _standardize(data.targets)
    else:
        y, y_mean, y_std = data.targets.copy(), 0.0, 1.0
    gram = kernel_matrix(data.points, data.points, params)
    gram[np.diag_indices_from(gram)] += params.noise_variance
    chol, jitter = _factorize(gram, params.signal_variance)
    alpha = sla.cho_solve((chol, True), y, check_finite=False)
    lml = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * data.n * math.log(2.0 * math.pi)
    )
    return GpPosterior(
        data=Dataset(data.points, y, data.bounds),
        params=params,
        chol=chol,
        alpha=alpha,
        y_mean=y_mean,
        y_std=y_std,
        jitter=jitter,
        log_marginal_likelihood=lml,
    )


def log_marginal_likelihood(
    data: Dataset, params: KernelParams, standardize: bool = True
) -> float:
    """Log marginal likelihood of the (optionally standardized) targets
    under the SE-ARD prior, via the same Cholesky route as fitting."""
    return fit_posterior(data, params, standardize=standardize).log_marginal_likelihood


def _log_bounds(bounds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ranges = bounds[:, 1] - bounds[:, 0]
    low = np.concatenate(
        [
            np.log(LENGTHSCALE_REL_MIN * ranges),
            [LOG_SIGNAL_VARIANCE_BOUNDS[0], LOG_NOISE_VARIANCE_BOUNDS[0]],
        ]
    )
    high = np.concatenate(
        [
            np.log(LENGTHSCALE_REL_MAX * ranges),
            [LOG_SIGNAL_VARIANCE_BOUNDS[1], LOG_NOISE_VARIANCE_BOUNDS[1]],
        ]
    )
    return low, high


def _to_vector(params: KernelParams) -> np.ndarray:
    noise = max(params.noise_variance, math.exp(LOG_NOISE_VARIANCE_BOUNDS[0]))
    return np.concatenate(
        [
            np.log(params.lengthscales),
            [math.log(params.signal_variance), math.log(noise)],
        ]
    )


def _from_vector(theta: np.ndarray) -> KernelParams:
    return KernelParams(
        lengthscales=np.exp(theta[:-2]),
        signal_variance=math.exp(theta[-2]),
        noise_variance=math.exp(theta[-1]),
    )


def optimize_hyperparameters(
    data: Dataset,
    init: KernelParams,
    restarts: int = 5,
    rng: np.random.Generator | None = None,
    maxfev_per_start: int | None = None,
) -> KernelParams:
    """Maximize the log marginal likelihood over kernel hyperparameters.

    Multi-start Nelder-Mead in log-parameter space: one start at ``init``
    (the previous iteration's parameters) plus ``restarts`` randomized
    starts.  Returns parameters whose LML is never worse than ``init``'s.
    With fewer than two observations the data cannot constrain the kernel
    and ``init`` is returned unchanged.
    """
    if data.n < 2:
        return init
    rng = rng if rng is not None else np.random.default_rng(0)
    low, high = _log_bounds(data.bounds)
    ranges = data.bounds[:, 1] - data.bounds[:, 0]
    d = data.dimension

    # The data is fixed while the kernel moves, so standardize once and
    # precompute the pairwise squared differences per dimension.
    y, _, _ = _standardize(data.targets)
    sq_diffs = (data.points[:, None, :] - data.points[None, :, :]) ** 2
    n = data.n
    diag = np.diag_indices(n)
    log_2pi_term = 0.5 * n * math.log(2.0 * math.pi)

    def negative_lml(theta: np.ndarray) -> float:
        inv_sq = np.exp(-2.0 * theta[:d])
        signal = math.exp(theta[d])
        noise = math.exp(theta[d + 1])
        gram = signal * np.exp(-0.5 * (sq_diffs @ inv_sq))
        jitter = JITTER_INITIAL * signal
        limit = JITTER_MAX * signal
        added = noise + jitter
        gram[diag] += added
        while True:
            try:
                chol = sla.cholesky(gram, lower=True, check_finite=False)
                break
            except sla.LinAlgError:
                jitter *= 10.0
                if jitter > limit:
                    return 1e25
                gram[diag] += (noise + jitter) - added
                added = noise + jitter
        alpha = sla.cho_solve((chol, True), y, check_finite=False)
        value = (
            -0.5 * float(y @ alpha)
            - float(np.sum(np.log(np.diag(chol))))
            - log_2pi_term
        )
        return -value if math.isfinite(value) else 1e25

    starts = [np.clip(_to_vector(init), low, high)]
    for _ in range(restarts):
        theta = np.empty(d + 2)
        # Practical sub-box: lengthscales near the domain scale, modest
        # variances; the search itself ranges over the full log box.
        theta[:d] = np.log(ranges) + rng.uniform(-3.0, 1.0, size=d)
        theta[d] = rng.uniform(-2.0, 2.0)
        theta[d + 1] = rng.uniform(-8.0, -1.0)
        starts.append(np.clip(theta, low, high))

    n_params = d + 2
    best_value = negative_lml(starts[0])
    best_theta = starts[0]
    failures = 0
    bounds_box = sopt.Bounds(low, high)
    for i, x0 in enumerate(starts):
        # The warm start gets the full budget; random restarts only need
        # enough to escape a bad basin.
        budget = maxfev_per_start or (90 if i == 0 else 45) * n_params
        result = sopt.minimize(
            negative_lml,
            x0,
            method="Nelder-Mead",
            bounds=bounds_box,
            options={"maxfev": budget, "xatol": 3e-2, "fatol": 1e-3},
        )
        if result.fun >= 1e25:
            failures += 1
            continue
        if result.fun < best_value:
            best_value = result.fun
            best_theta = np.clip(result.x, low, high)
    if failures == len(starts) and best_value >= 1e25:
        raise FitError("no hyperparameter start produced a fit-able model", jitter=0.0)
    # Never return a worse model than the starting point.
    init_lml = -negative_lml(np.clip(_to_vector(init), low, high))
    if math.isfinite(init_lml) and -best_value < init_lml:
        return init
    return _from_vector(best_theta)


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of the vanishing-lengthscale kernel diagnostic."""

    valid: bool
    flagged_dimensions: tuple[int, ...]
    thresholds: tuple[float, ...]


def check_kernel_validity(params: KernelParams, bounds) -> ValidityReport:
    """Flag any dimension whose lengthscale has effectively vanished
    relative to its domain range (a symptom of kernel mis-specification)."""
    b = _as_bounds(bounds)
    if b.shape[0] != params.dimension:
        raise ValueError(
            f"bounds cover {b.shape[0]} dimensions but the kernel has "
            f"{params.dimension}"
        )
    thresholds = VANISHING_REL_THRESHOLD * (b[:, 1] - b[:, 0])
    flagged = tuple(np.nonzero(params.lengthscales < thresholds)[0].tolist())
    return ValidityReport(
        valid=not flagged,
        flagged_dimensions=flagged,
        thresholds=tuple(thresholds.tolist()),
    )
