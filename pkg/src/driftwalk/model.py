"""Domain types for drifted-walk instances and their limit-law predictions.

A walk instance is a conditional-moment specification: the step taken from
position ``s`` at time ``n`` has conditional mean ``mu(s, n) =
n^(-beta) ||s||^(alpha-1) A s`` and conditional second moment ``Sigma`` (up
to a vanishing perturbation in the linear case).  Two families are covered:

* nonlinear kind, ``0 < alpha <= beta <= 1`` with ``A`` a positive multiple
  of the identity, classified against the critical line ``alpha = 2 beta - 1``;
* linear kind, ``alpha = beta = 1`` with a general drift matrix ``A`` whose
  spectrum lies in the open strip ``0 < Re(lambda) < 1``, classified against
  the half line ``Re(lambda) = 1/2``.

Each regime owns a predicted limiting object: a Gaussian law, the stationary
law of a confining diffusion, or localization on a sphere of explicit radius.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import matfun
from .errors import RegimeNotCoveredError, UnsupportedRegimeError

__all__ = [
    "DriftKind",
    "NoiseFamily",
    "MomentMode",
    "NoiseModel",
    "WalkSpec",
    "Regime",
    "GaussianLaw",
    "SdeStationaryLaw",
    "SphereLaw",
    "MixedGaussianLaw",
    "classify_regime",
    "drift_mu",
    "potential_H",
    "predict_limit_law",
    "gamma_exponent",
    "localization_radius",
]

#: boundary tolerance for regime classification; exact-line experiments must
#: set beta = (alpha + 1) / 2 in closed form rather than by float coincidence
EPS_CLASSIFY = 1e-9


class DriftKind(Enum):
    NONLINEAR = "nonlinear"
    LINEAR = "linear"


class NoiseFamily(Enum):
    """Innovation distribution family.

    Both families have uniformly bounded moments of every order, so the
    moment hypothesis of the limit theory holds by construction and no
    moment order is stored.
    """

    GAUSSIAN = "gaussian"
    #: bounded symmetric family: independent signs scaled to unit variance
    RADEMACHER = "rademacher"


class MomentMode(Enum):
    """How the conditional second moment is realized.

    STRICT draws innovations with covariance ``Sigma - mu mu^T`` so the step
    second moment equals ``Sigma`` exactly; RELAXED draws with covariance
    ``Sigma``, leaving the vanishing excess ``mu mu^T`` permitted for the
    linear kind.
    """

    STRICT = "strict"
    RELAXED = "relaxed"


@dataclass(frozen=True)
class NoiseModel:
    family: NoiseFamily = NoiseFamily.GAUSSIAN
    mode: MomentMode = MomentMode.STRICT


class Regime(Enum):
    NONLINEAR_ABOVE = "nonlinear_above"
    NONLINEAR_ON_LINE = "nonlinear_on_line"
    NONLINEAR_BELOW = "nonlinear_below"
    LINEAR_SUBCRITICAL = "linear_subcritical"
    LINEAR_SUPERCRITICAL = "linear_supercritical"
    LINEAR_CRITICAL = "linear_critical"
    LINEAR_MIXED = "linear_mixed"


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WalkSpec:
    """Full parameterization of one walk instance.

    Instances are immutable and safe to share across threads.  Prefer the
    :meth:`nonlinear` and :meth:`linear` factories over direct construction.
    """

    d: int
    alpha: float
    beta: float
    A: np.ndarray
    Sigma: np.ndarray
    noise: NoiseModel = field(default_factory=NoiseModel)
    drift_kind: DriftKind = DriftKind.NONLINEAR

    def __post_init__(self):
        object.__setattr__(self, "A", _readonly(self.A))
        object.__setattr__(self, "Sigma", _readonly(self.Sigma))
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.A.shape != (self.d, self.d) or self.Sigma.shape != (self.d, self.d):
            raise ValueError("A and Sigma must be d x d")
        asym = float(np.abs(self.Sigma - self.Sigma.T).max())
        if asym >= 1e-12:
            raise ValueError(f"Sigma must be symmetric (asymmetry {asym:.2e})")
        if float(np.linalg.eigvalsh(self.Sigma).min()) <= 0:
            raise ValueError("Sigma must be positive definite")
        if self.drift_kind is DriftKind.NONLINEAR:
            if not (0 < self.alpha <= self.beta <= 1):
                raise ValueError(
                    "nonlinear kind needs 0 < alpha <= beta <= 1, got "
                    f"alpha={self.alpha}, beta={self.beta}"
                )
        else:
            if not (self.alpha == 1 and self.beta == 1):
                raise ValueError("linear kind needs alpha = beta = 1")
            lam_min, lam_max = matfun.spectral_bounds(self.A)
            if not (0 < lam_min and lam_max < 1):
                raise ValueError(
                    "linear kind needs eigenvalue real parts in (0, 1), got "
                    f"[{lam_min}, {lam_max}]"
                )

    @classmethod
    def nonlinear(cls, alpha, beta, Sigma=None, d=None, rho=1.0, noise=None):
        """Nonlinear-kind spec with drift matrix ``rho * I``.

        At ``alpha = beta = 1`` the drift is linear in the position, so the
        instance is redirected to the linear kind (requiring ``0 < rho < 1``).
        """
        if Sigma is None:
            if d is None:
                raise ValueError("give Sigma or d")
            Sigma = np.eye(d)
        Sigma = np.asarray(Sigma, dtype=float)
        d = Sigma.shape[0]
        if rho <= 0:
            raise ValueError("rho must be positive")
        noise = noise if noise is not None else NoiseModel()
        if alpha == 1 and beta == 1:
            return cls.linear(rho * np.eye(d), Sigma, noise=noise)
        return cls(
            d=d,
            alpha=float(alpha),
            beta=float(beta),
            A=rho * np.eye(d),
            Sigma=Sigma,
            noise=noise,
            drift_kind=DriftKind.NONLINEAR,
        )

    @classmethod
    def linear(cls, A, Sigma=None, noise=None):
        """Linear-kind spec (``alpha = beta = 1``) with drift matrix ``A``."""
        A = np.asarray(A, dtype=float)
        if A.ndim == 0:
            A = A.reshape(1, 1)
        d = A.shape[0]
        if Sigma is None:
            Sigma = np.eye(d)
        if noise is None:
            noise = NoiseModel(mode=MomentMode.RELAXED)
        return cls(
            d=d,
            alpha=1.0,
            beta=1.0,
            A=A,
            Sigma=np.asarray(Sigma, dtype=float),
            noise=noise,
            drift_kind=DriftKind.LINEAR,
        )

    @property
    def rho(self):
        """Drift coefficient for nonlinear-kind specs (``A = rho I``)."""
        if self.drift_kind is not DriftKind.NONLINEAR:
            raise ValueError("rho is only defined for the nonlinear kind")
        off = self.A - self.A[0, 0] * np.eye(self.d)
        if float(np.abs(off).max()) > 1e-12:
            raise ValueError("nonlinear drift matrix is not a multiple of I")
        return float(self.A[0, 0])


def potential_H(s, alpha):
    """Radial potential gradient ``H(s) = ||s||^(alpha-1) s`` with ``H(0) = 0``.

    The continuous extension at the origin is forced by ``||H(s)|| =
    ||s||^alpha -> 0``; the field itself is not Lipschitz there.
    """
    if not (0 < alpha <= 1):
        raise ValueError("alpha must lie in (0, 1]")
    s = np.asarray(s, dtype=float)
    nrm = float(np.linalg.norm(s))
    if nrm == 0.0:
        return np.zeros_like(s)
    return nrm ** (alpha - 1.0) * s


def drift_mu(s, n, spec):
    """Conditional step mean ``mu(s, n) = n^(-beta) ||s||^(alpha-1) A s``.

    Returns the zero vector at ``s = 0`` (continuous extension).  For the
    linear kind this reduces to ``A s / n``.
    """
    if n < 1:
        raise ValueError("drift is defined for n >= 1")
    s = np.asarray(s, dtype=float)
    nrm = float(np.linalg.norm(s))
    if nrm == 0.0:
        return np.zeros_like(s)
    return float(n) ** (-spec.beta) * nrm ** (spec.alpha - 1.0) * (spec.A @ s)


def gamma_exponent(spec):
    """Growth exponent ``gamma = (1 - beta) / (1 - alpha)`` below the line."""
    if spec.alpha >= 1:
        raise ValueError("gamma exponent needs alpha < 1")
    return (1.0 - spec.beta) / (1.0 - spec.alpha)


def localization_radius(spec):
    """Radius ``r = gamma^(-1/(1-alpha))`` of the localization sphere."""
    g = gamma_exponent(spec)
    return g ** (-1.0 / (1.0 - spec.alpha))


def classify_regime(spec, eps=EPS_CLASSIFY):
    """Place a spec in exactly one of the limit-theory regimes.

    Nonlinear kind: position of ``(alpha, beta)`` relative to the critical
    line ``alpha = 2 beta - 1``, the on-line check taking precedence within
    the boundary tolerance.  Linear kind: position of the spectrum of ``A``
    relative to the half line ``Re(lambda) = 1/2``.

    Raises
    ------
    RegimeNotCoveredError
        For ``alpha = 1`` on the nonlinear critical line, which the theory
        excludes.
    """
    if spec.drift_kind is DriftKind.NONLINEAR:
        line = 2.0 * spec.beta - 1.0
        if abs(spec.alpha - line) <= eps:
            if spec.alpha >= 1.0 - eps:
                raise RegimeNotCoveredError(
                    "the critical line requires 0 < alpha < 1; "
                    "alpha = 1 there is not covered by the theory"
                )
            return Regime.NONLINEAR_ON_LINE
        if spec.alpha < line:
            return Regime.NONLINEAR_ABOVE
        return Regime.NONLINEAR_BELOW

    lam_min, lam_max = matfun.spectral_bounds(spec.A)
    if lam_max < 0.5 - eps:
        return Regime.LINEAR_SUBCRITICAL
    if lam_min > 0.5 + eps:
        return Regime.LINEAR_SUPERCRITICAL
    w = np.linalg.eigvals(spec.A)
    if np.all(np.abs(w.real - 0.5) <= eps):
        return Regime.LINEAR_CRITICAL
    return Regime.LINEAR_MIXED


@dataclass(frozen=True)
class GaussianLaw:
    """Centered Gaussian limit with the given covariance."""

    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "covariance", _readonly(self.covariance))
        C = self.covariance
        if float(np.abs(C - C.T).max()) > 1e-10:
            raise ValueError("covariance must be symmetric")
        if float(np.linalg.eigvalsh(C).min()) < -1e-10:
            raise ValueError("covariance must be positive semi-definite")

    @property
    def d(self):
        return self.covariance.shape[0]


@dataclass(frozen=True)
class SdeStationaryLaw:
    """Stationary law of ``dX = (-X/2 + H(X)) dt + Sigma^(1/2) dB``."""

    alpha: float
    Sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Sigma", _readonly(self.Sigma))
        if not (0 < self.alpha < 1):
            raise ValueError("stationary law needs 0 < alpha < 1")

    @property
    def d(self):
        return self.Sigma.shape[0]


@dataclass(frozen=True)
class SphereLaw:
    """Almost-sure localization on the sphere of the given radius.

    ``radius = gamma^(-1/(1-alpha))`` is the nonzero fixed point of the
    radial dynamics; ``gamma`` is the associated growth exponent in
    ``(1/2, 1]``.
    """

    radius: float
    gamma: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not (0.5 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (1/2, 1]")


@dataclass(frozen=True)
class MixedGaussianLaw:
    """Joint blockwise Gaussian limit for a mixed linear spectrum.

    The three components describe the limits of the stable projection at
    diffusive scale, the central projection at logarithmic scale, and the
    unstable residual at diffusive scale; they are asymptotically
    independent, so the joint covariance is block diagonal.
    """

    split: matfun.SpectralSplit
    stable: GaussianLaw
    central: GaussianLaw
    unstable: GaussianLaw


def _critical_gaussian(spec, jordan):
    if jordan is None:
        jordan = matfun.JordanSpec.from_eigendecomposition(spec.A)
    cov = matfun.critical_covariance(jordan, spec.Sigma)
    return GaussianLaw(matfun.realify(cov))


def _central_covariance_masked(jordan, Sigma, gap=1e-6):
    """Central-block covariance embedded in full coordinates.

    Same sign/factorial assembly as :func:`matfun.critical_covariance`, but
    restricted to the Jordan blocks whose eigenvalues sit on the critical
    half line; all other rows and columns of ``V`` stay zero, which embeds
    the central-block law via the central projection.
    """
    d = jordan.d
    Qi = np.linalg.inv(jordan.Q)
    St = Qi @ np.asarray(Sigma, dtype=float) @ Qi.conj().T

    offsets = []
    off = 0
    for _, m in jordan.blocks:
        offsets.append(off)
        off += m
    central = [abs(lam.real - 0.5) <= gap for lam, _ in jordan.blocks]
    if not any(central):
        return None

    V = np.zeros((d, d), dtype=complex)
    for r, (lam_r, mr) in enumerate(jordan.blocks):
        for s, (lam_s, ms) in enumerate(jordan.blocks):
            if not (central[r] and central[s]) or abs(lam_r - lam_s) > 1e-9:
                continue
            corner = St[offsets[r] + mr - 1, offsets[s] + ms - 1]
            for i in range(1, mr + 1):
                for j in range(1, ms + 1):
                    sign = (-1.0) ** (mr + ms - i - j)
                    denom = (
                        math.factorial(mr - i)
                        * math.factorial(ms - j)
                        * (mr + ms - i - j + 1)
                    )
                    V[offsets[r] + i - 1, offsets[s] + j - 1] = sign / denom * corner
    out = jordan.Q @ V @ jordan.Q.conj().T
    return matfun.realify(0.5 * (out + out.conj().T), tol=1e-8)


def _mixed_law(spec, jordan):
    split = matfun.spectral_split(spec.A, jordan=jordan)
    d = spec.d
    eye = np.eye(d)
    S = spec.Sigma

    def lyap(P, A_res, super_side):
        Ssub = P @ S @ P.T
        if float(np.abs(P).max()) == 0.0:
            return GaussianLaw(np.zeros((d, d)))
        if super_side:
            # (A_u - I/2) X + X (A_u - I/2)^T = Sigma_u, via the subcritical
            # solver applied to I - A_u
            X = matfun.lyapunov_solve(eye - A_res, Ssub)
        else:
            X = matfun.lyapunov_solve(A_res, Ssub)
        return GaussianLaw(X)

    if jordan is None:
        jordan = matfun.JordanSpec.from_eigendecomposition(spec.A)
    central = _central_covariance_masked(jordan, S, gap=1e-6)
    return MixedGaussianLaw(
        split=split,
        stable=lyap(split.P_s, split.A_s, super_side=False),
        central=GaussianLaw(np.zeros((d, d))) if central is None else GaussianLaw(central),
        unstable=lyap(split.P_u, split.A_u, super_side=True),
    )


def predict_limit_law(spec, regime, jordan=None):
    """Predicted limiting object for a classified spec.

    Nonlinear: Gaussian with covariance ``Sigma`` above the line, the
    diffusion's stationary law on the line, sphere localization below it.
    Linear: Gaussian with the Lyapunov solution ``Xi`` (subcritical), with
    ``-Xi`` for the residual fluctuation around the almost-sure growth
    direction (supercritical), or with the logarithmic-normalization
    covariance built from Jordan data (critical).  Mixed spectra yield the
    blockwise composite law when the spectral split succeeds.
    """
    if spec.drift_kind is DriftKind.NONLINEAR:
        if abs(spec.rho - 1.0) > 1e-12:
            raise UnsupportedRegimeError(
                "nonlinear limit laws are stated for unit drift coefficient "
                f"(rho = 1); got rho = {spec.rho}"
            )
        if regime is Regime.NONLINEAR_ABOVE:
            return GaussianLaw(spec.Sigma)
        if regime is Regime.NONLINEAR_ON_LINE:
            return SdeStationaryLaw(alpha=spec.alpha, Sigma=spec.Sigma)
        if regime is Regime.NONLINEAR_BELOW:
            return SphereLaw(
                radius=localization_radius(spec), gamma=gamma_exponent(spec)
            )
        raise UnsupportedRegimeError(f"{regime} is not a nonlinear regime")

    if regime is Regime.LINEAR_SUBCRITICAL:
        return GaussianLaw(matfun.lyapunov_solve(spec.A, spec.Sigma))
    if regime is Regime.LINEAR_SUPERCRITICAL:
        Xi = matfun.lyapunov_solve(spec.A, spec.Sigma)
        return GaussianLaw(-Xi)
    if regime is Regime.LINEAR_CRITICAL:
        return _critical_gaussian(spec, jordan)
    if regime is Regime.LINEAR_MIXED:
        return _mixed_law(spec, jordan)
    raise UnsupportedRegimeError(f"{regime} is not a linear regime")
