"""Statistical certification of ensembles against predicted limit laws.

Convergence in distribution cannot be tested exactly at a finite horizon;
every check here therefore compares a statistic of the ensemble with a
tolerance calibrated on oracle ensembles drawn from the exact limit law at
the same sample size (99% quantile of the oracle statistic, widened by a
margin for finite-horizon bias).  All randomness is seeded, so reports are
reproducible functions of (ensemble, law, seeds).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats as sps
from scipy.spatial.distance import cdist

from .simulate import RngStream, TerminalEnsemble

__all__ = [
    "Metric",
    "StatReport",
    "empirical_covariance",
    "gaussian_fit_test",
    "covariance_match_test",
    "sphere_test",
    "two_sample_distance",
    "energy_permutation_quantile",
    "slope_fit",
    "ensemble_slopes",
]

#: default number of random unit projections for the Cramer-Wold tests
DEFAULT_PROJECTIONS = 32
#: widening factor applied to oracle-calibrated tolerances (finite-n bias)
CALIBRATION_MARGIN = 1.5

_PROJECTION_SEED = 20240214
_CALIBRATION_SEED = 77


@dataclass(frozen=True)
class Metric:
    """One named check: passes iff ``value <= tolerance``."""

    name: str
    value: float
    tolerance: float
    passed: bool

    @classmethod
    def check(cls, name, value, tolerance):
        return cls(name=name, value=float(value), tolerance=float(tolerance),
                   passed=bool(value <= tolerance))


@dataclass(frozen=True)
class StatReport:
    """Verdict sheet for one experiment."""

    regime: object
    metrics: tuple
    sample_sizes: tuple  # (replicas, horizon)
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(m.passed for m in self.metrics)

    def to_dict(self):
        return {
            "regime": getattr(self.regime, "value", self.regime),
            "passed": self.passed,
            "metrics": [
                {
                    "name": m.name,
                    "value": m.value,
                    "tolerance": m.tolerance,
                    "passed": m.passed,
                }
                for m in self.metrics
            ],
            "sample_sizes": {
                "replicas": self.sample_sizes[0],
                "horizon": self.sample_sizes[1],
            },
            "seed": self.seed,
            **self.extra,
        }


def _as_rows(ensemble):
    if isinstance(ensemble, TerminalEnsemble):
        return ensemble.values
    rows = np.asarray(ensemble, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    return rows


def empirical_covariance(ensemble):
    """Unbiased sample covariance of the ensemble rows."""
    rows = _as_rows(ensemble)
    M = rows.shape[0]
    if M < 2:
        raise ValueError("covariance needs at least two rows")
    centered = rows - rows.mean(axis=0)
    return centered.T @ centered / (M - 1)


def _ks_to_uniform(F):
    """KS statistic of probability-integral-transformed points."""
    F = np.sort(F)
    M = len(F)
    i = np.arange(1, M + 1)
    return max(float(np.max(i / M - F)), float(np.max(F - (i - 1) / M)), 0.0)


def _unit_projections(d, K, seed):
    gen = RngStream(seed=seed).generator()
    U = gen.standard_normal((K, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def _factor(cov):
    lam, V = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    return V * np.sqrt(lam)


def _max_projection_ks(rows, cov, U):
    denom = np.sqrt(np.einsum("ki,ij,kj->k", U, cov, U))
    z = rows @ U.T
    best = 0.0
    for k in range(U.shape[0]):
        if denom[k] <= 0:
            continue
        best = max(best, _ks_to_uniform(special.ndtr(z[:, k] / denom[k])))
    return best


def _coverage(rows, cov_inv, d, qs):
    m2 = np.einsum("ri,ij,rj->r", rows, cov_inv, rows)
    thresholds = sps.chi2.ppf(qs, df=d)
    return np.array([(m2 <= t).mean() for t in thresholds])


def gaussian_fit_test(
    ensemble,
    law,
    K=DEFAULT_PROJECTIONS,
    projection_seed=_PROJECTION_SEED,
    calibration_reps=120,
    calibration_seed=_CALIBRATION_SEED,
    margin=CALIBRATION_MARGIN,
):
    """Cramer-Wold Gaussianity check against a Gaussian law.

    ``K`` seeded random unit projections are standardized by the law and
    compared to the standard normal with the KS statistic (the maximum over
    projections is the headline number), and Mahalanobis coverage is checked
    at the 0.5, 0.9, 0.99 quantiles.  Tolerances are the 99% quantiles of
    the same statistics over ``calibration_reps`` oracle ensembles drawn
    from the law at the same sample size, widened by ``margin``.
    """
    rows = _as_rows(ensemble)
    M, d = rows.shape
    cov = np.asarray(law.covariance, dtype=float)
    lam_min = float(np.linalg.eigvalsh(cov).min())
    if lam_min <= 1e-12 * max(1.0, float(np.abs(cov).max())):
        warnings.warn(
            "law covariance is singular; using a pseudo-inverse", RuntimeWarning
        )
        cov_inv = np.linalg.pinv(cov, hermitian=True)
    else:
        cov_inv = np.linalg.inv(cov)

    U = _unit_projections(d, K, projection_seed)
    qs = np.array([0.5, 0.9, 0.99])

    stat_ks = _max_projection_ks(rows, cov, U)
    stat_cov = np.abs(_coverage(rows, cov_inv, d, qs) - qs)

    F = _factor(cov)
    gen = RngStream(seed=calibration_seed).generator()
    oracle_ks = np.empty(calibration_reps)
    oracle_cov = np.empty((calibration_reps, len(qs)))
    for r in range(calibration_reps):
        Z = gen.standard_normal((M, d)) @ F.T
        oracle_ks[r] = _max_projection_ks(Z, cov, U)
        oracle_cov[r] = np.abs(_coverage(Z, cov_inv, d, qs) - qs)
    tol_ks = margin * float(np.quantile(oracle_ks, 0.99))
    tol_cov = margin * np.quantile(oracle_cov, 0.99, axis=0)

    metrics = [Metric.check("max_projection_ks", stat_ks, tol_ks)]
    for q, v, t in zip(qs, stat_cov, tol_cov):
        metrics.append(Metric.check(f"mahalanobis_coverage_dev_{q:g}", v, t))
    return metrics


def covariance_match_test(
    ensemble,
    law,
    calibration_reps=200,
    calibration_seed=_CALIBRATION_SEED,
    margin=CALIBRATION_MARGIN,
    name="covariance_max_dev",
):
    """Entrywise comparison of the sample covariance with a target.

    The statistic is ``max_ij |C_hat_ij - C_ij| / sqrt(C_ii C_jj)`` and the
    tolerance is oracle-calibrated the same way as in
    :func:`gaussian_fit_test`.
    """
    rows = _as_rows(ensemble)
    M, d = rows.shape
    cov = np.asarray(law.covariance, dtype=float)
    scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
    scale = np.where(scale > 0, scale, 1.0)

    def stat(X):
        return float(np.max(np.abs(empirical_covariance(X) - cov) / scale))

    F = _factor(cov)
    gen = RngStream(seed=calibration_seed).generator()
    oracle = np.empty(calibration_reps)
    for r in range(calibration_reps):
        oracle[r] = stat(gen.standard_normal((M, d)) @ F.T)
    tol = margin * float(np.quantile(oracle, 0.99))
    return [Metric.check(name, stat(rows), tol)]


def sphere_test(ensemble, law, delta_loc=0.05, min_fraction=0.95):
    """Localization diagnostics against a sphere law.

    Reports the mean and maximum absolute radial deviation, the fraction of
    replicas outside the band ``radius * (1 +- delta_loc)`` (which must not
    exceed ``1 - min_fraction``), and the fraction parked near the origin
    (radius below ``r / 10``), which the escape-from-zero property requires
    to vanish.
    """
    rows = _as_rows(ensemble)
    r = float(law.radius)
    norms = np.linalg.norm(rows, axis=1)
    dev = np.abs(norms - r)
    within = (dev < delta_loc * r).mean()
    origin = (norms < r / 10.0).mean()
    return [
        Metric.check("radial_mean_abs_dev", dev.mean(), delta_loc * r),
        Metric.check("radial_max_abs_dev", dev.max(), 3.0 * delta_loc * r),
        Metric.check("outside_band_fraction", 1.0 - within, 1.0 - min_fraction),
        Metric.check("origin_localized_fraction", origin, 0.0),
    ]


def two_sample_distance(ens_a, ens_b):
    """Energy distance between two ensembles (V-statistic form).

    ``2 E||X - Y|| - E||X - X'|| - E||Y - Y'||`` with all expectations taken
    over the empirical measures including the zero diagonal, so the distance
    is exactly 0 for identical ensembles and symmetric in its arguments.
    """
    A = _as_rows(ens_a)
    B = _as_rows(ens_b)
    if A.shape[1] != B.shape[1]:
        raise ValueError("ensembles must share a dimension")
    dab = cdist(A, B).mean()
    daa = cdist(A, A).mean()
    dbb = cdist(B, B).mean()
    return float(2.0 * dab - daa - dbb)


def energy_permutation_quantile(
    ens_a, ens_b, q=0.99, n_permutations=500, seed=_CALIBRATION_SEED
):
    """Permutation-null quantile of the energy distance.

    Pools both ensembles, recomputes the distance under ``n_permutations``
    random relabelings (batched through one distance matrix), and returns
    the requested quantile of the null distribution.
    """
    A = _as_rows(ens_a)
    B = _as_rows(ens_b)
    n, m = A.shape[0], B.shape[0]
    pool = np.vstack([A, B])
    D = cdist(pool, pool)
    total = D.sum()

    gen = RngStream(seed=seed).generator()
    Z = np.zeros((n + m, n_permutations))
    for p in range(n_permutations):
        idx = gen.permutation(n + m)[:n]
        Z[idx, p] = 1.0
    DZ = D @ Z
    s_aa = np.einsum("ip,ip->p", Z, DZ)
    s_bb = total - 2.0 * DZ.sum(axis=0) + s_aa
    s_ab = total - s_aa - s_bb
    null = s_ab / (n * m) - s_aa / (n * n) - s_bb / (m * m)
    return float(np.quantile(null, q))


def slope_fit(checkpoints):
    """Least-squares growth exponent from checkpoint norms.

    Accepts either a trajectory-style sequence of ``(k, S_k)`` pairs or a
    pair of arrays ``(ks, norms)``; fits ``log ||S_k||`` against ``log k``
    over the last half of the checkpoints.
    """
    first = checkpoints[0]
    if isinstance(first, (tuple, list)) and len(first) == 2:
        ks = np.asarray([k for k, _ in checkpoints], dtype=float)
        norms = np.asarray([np.linalg.norm(v) for _, v in checkpoints], dtype=float)
    else:
        ks, norms = checkpoints
        ks = np.asarray(ks, dtype=float)
        norms = np.asarray(norms, dtype=float)
    if len(ks) < 4:
        raise ValueError("slope fit needs at least four checkpoints")
    half = len(ks) // 2
    ks, norms = ks[half:], norms[half:]
    if np.any(norms <= 0.0):
        raise ValueError("slope fit needs positive checkpoint norms")
    x = np.log(ks)
    y = np.log(norms)
    x = x - x.mean()
    return float((x @ (y - y.mean())) / (x @ x))


def ensemble_slopes(ensemble, min_k=None):
    """Per-replica growth exponents from an ensemble's checkpoint norms."""
    if ensemble.checkpoint_ks is None:
        raise ValueError("ensemble carries no checkpoint data")
    ks = ensemble.checkpoint_ks
    norms = ensemble.checkpoint_norms
    if min_k is not None:
        keep = ks >= min_k
        ks, norms = ks[keep], norms[:, keep]
    return np.array([slope_fit((ks, row)) for row in norms])
