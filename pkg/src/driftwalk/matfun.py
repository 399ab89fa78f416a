"""Matrix-analytic machinery for drift-matrix normalizations.

This module collects everything needed to turn a drift matrix ``A`` into the
normalizing objects of the linear limit theory: real matrix powers ``n^B``,
the ordered product ``Phi(n)`` of the factors ``I + A/j``, the matrix Gamma
function linking the two, Lyapunov-equation solutions for diffusive limit
covariances, spectral projections splitting the space into stable / central /
unstable parts, and the logarithmic normalizers used in the critical regime.

All functions are pure and operate on plain NumPy arrays.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import (
    ComplexResidueError,
    EigenbasisError,
    SingularLyapunovError,
    SpectrumError,
)

__all__ = [
    "JordanSpec",
    "SpectralSplit",
    "expm",
    "matrix_power",
    "phi_product",
    "phi_product_at",
    "matrix_gamma",
    "lyapunov_solve",
    "critical_covariance",
    "build_Dn",
    "spectral_split",
    "spectral_bounds",
    "realify",
]

#: half-plane boundary separating the linear regimes
_CRITICAL_RE = 0.5


def realify(M, tol=1e-10):
    """Drop an imaginary part that is numerically zero.

    Raises
    ------
    ComplexResidueError
        If any entry has ``|imag| > tol``.
    """
    M = np.asarray(M)
    if not np.iscomplexobj(M):
        return M
    leak = float(np.max(np.abs(M.imag))) if M.size else 0.0
    if leak > tol:
        raise ComplexResidueError(
            f"imaginary residue {leak:.3e} exceeds tolerance {tol:.1e}"
        )
    return np.ascontiguousarray(M.real)


def expm(M):
    """Matrix exponential of a real square matrix.

    Thin wrapper around :func:`scipy.linalg.expm` (scaling-and-squaring with
    Pade approximants), which meets the accuracy contract of this package
    (relative error below ``1e-12`` for ``||M|| <= 20``).
    """
    M = np.asarray(M, dtype=float)
    out = sla.expm(M)
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix exponential overflowed the float range")
    return out


def matrix_power(B, n):
    """Real matrix power ``n^B = exp(log(n) B)`` for ``n > 0``."""
    if n <= 0:
        raise ValueError(f"matrix power needs n > 0, got {n}")
    B = np.asarray(B, dtype=float)
    return expm(math.log(n) * B)


def spectral_bounds(A):
    """Smallest and largest real part of the spectrum of ``A``."""
    w = np.linalg.eigvals(np.asarray(A, dtype=float))
    re = w.real
    return float(re.min()), float(re.max())


def phi_product(A, n):
    """Ordered product ``Phi(n) = prod_{j=1}^{n-1} (I + A/j)``, ``Phi(1) = I``.

    The factors commute, so the evaluation order is mathematically
    irrelevant; this implementation applies the defining recursion
    ``Phi(j+1) = (I + A/j) Phi(j)``.
    """
    return phi_product_at(A, [n])[n]


def phi_product_at(A, ns):
    """Evaluate ``Phi`` at several indices in one incremental pass.

    Parameters
    ----------
    A : (d, d) array
    ns : iterable of int
        Indices ``>= 1`` at which snapshots are wanted.

    Returns
    -------
    dict mapping each requested ``n`` to ``Phi(n)``.
    """
    ns = sorted(set(int(n) for n in ns))
    if not ns or ns[0] < 1:
        raise ValueError("phi product indices must be >= 1")
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    eye = np.eye(d)
    out = {}
    F = eye.copy()
    j = 1
    for n in ns:
        while j < n:
            factor = eye + A / j
            if abs(np.linalg.det(factor)) < 1e-300:
                raise SpectrumError(f"factor I + A/{j} is singular")
            F = factor @ F
            j += 1
        out[n] = F.copy()
    return out


def matrix_gamma(B, n_product=1 << 16):
    """Matrix Gamma function of ``B`` with spectrum in the right half plane.

    Evaluates the Pochhammer normalization
    ``G(n) = (n-1)! (B)_n^{-1} n^B`` at ``n_product`` and ``2 n_product`` and
    removes the leading ``O(1/n)`` error term by one Richardson extrapolation
    step, ``Gamma(B) ~ 2 G(2n) - G(n)``.  The running ratio
    ``(n-1)!(B)_n^{-1}`` is accumulated factor by factor as
    ``prod_j j (B + jI)^{-1}`` with the ``j = 0`` factor replaced by
    ``B^{-1}``; a power-of-two scale is tracked so the partial products never
    leave the float range.

    Raises
    ------
    SpectrumError
        If ``lambda_min(B) <= 0``.
    """
    B = np.asarray(B, dtype=float)
    lam_min, _ = spectral_bounds(B)
    if lam_min <= 0:
        raise SpectrumError(f"matrix_gamma needs lambda_min(B) > 0, got {lam_min}")
    d = B.shape[0]
    eye = np.eye(d)

    n1 = int(n_product)
    n2 = 2 * n1
    F = np.linalg.solve(B, eye)
    scale = 0  # F_true = F * 2**scale
    snapshots = {}
    for j in range(1, n2):
        if j == n1:
            snapshots[n1] = (F.copy(), scale)
        F = np.linalg.solve(B + j * eye, j * F)
        nrm = np.abs(F).max()
        if nrm < 1e-120:
            F *= 2.0**400
            scale -= 400
        elif nrm > 1e120:
            F *= 2.0**-400
            scale += 400
    snapshots[n2] = (F, scale)

    def finish(n):
        Fn, sc = snapshots[n]
        return (Fn @ matrix_power(B, n)) * 2.0**sc

    return 2.0 * finish(n2) - finish(n1)


def lyapunov_solve(A, Sigma):
    """Solve ``(I/2 - A) X + X (I/2 - A)^T = Sigma`` by the vec trick.

    Stacking columns turns the equation into the linear system
    ``(I (x) B + B (x) I) vec(X) = vec(Sigma)`` with ``B = I/2 - A``,
    which is solved directly.  The result is exactly symmetrized.

    Raises
    ------
    SingularLyapunovError
        If two eigenvalues of ``B`` sum to (numerically) zero, which happens
        exactly when eigenvalues of ``A`` pair up symmetrically around the
        critical half line; the critical normalization must be used instead.
    """
    A = np.asarray(A, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    d = A.shape[0]
    B = 0.5 * np.eye(d) - A
    w = np.linalg.eigvals(B)
    pair_sums = np.abs(w[:, None] + w[None, :])
    scale = 1.0 + float(np.abs(w).max())
    if pair_sums.min() < 1e-12 * scale:
        raise SingularLyapunovError(
            "Kronecker sum of I/2 - A is singular (critical spectrum); "
            "use critical_covariance instead"
        )
    K = np.kron(np.eye(d), B) + np.kron(B, np.eye(d))
    x = np.linalg.solve(K, Sigma.flatten(order="F"))
    X = x.reshape((d, d), order="F")
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class JordanSpec:
    """User-supplied Jordan data ``A = Q J Q^{-1}``.

    Jordan forms are never computed numerically here (the problem is
    ill-posed); callers provide the change of basis ``Q`` and the block
    structure, or use :meth:`from_eigendecomposition` for diagonalizable
    matrices where every block has size one.

    Attributes
    ----------
    Q : (d, d) complex array
        Change of basis, columns ordered block by block.
    blocks : tuple of (eigenvalue, size)
        One entry per Jordan block; sizes sum to ``d``.
    """

    Q: np.ndarray
    blocks: tuple = field(default=())

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=complex)
        blocks = tuple((complex(lam), int(m)) for lam, m in self.blocks)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if any(m < 1 for _, m in blocks):
            raise ValueError("block sizes must be positive")
        if sum(m for _, m in blocks) != Q.shape[0]:
            raise ValueError("block sizes must sum to the dimension of Q")
        Q = Q.copy()
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "blocks", blocks)

    @property
    def d(self):
        return self.Q.shape[0]

    @classmethod
    def from_eigendecomposition(cls, A, cond_limit=1e8):
        """Jordan data for a diagonalizable matrix (all blocks of size one)."""
        A = np.asarray(A, dtype=float)
        w, V = np.linalg.eig(A)
        if np.linalg.cond(V) > cond_limit:
            raise EigenbasisError(
                "eigenbasis condition number exceeds "
                f"{cond_limit:.0e}; supply a JordanSpec built from exact "
                "Jordan data instead"
            )
        return cls(Q=V, blocks=tuple((lam, 1) for lam in w))

    def jordan_matrix(self):
        """The block-diagonal matrix ``J`` this spec encodes."""
        J = np.zeros((self.d, self.d), dtype=complex)
        off = 0
        for lam, m in self.blocks:
            J[off : off + m, off : off + m] = lam * np.eye(m) + np.diag(
                np.ones(m - 1), 1
            )
            off += m
        return J

    def matrix(self):
        """Reconstruct ``A = Q J Q^{-1}``."""
        return self.Q @ self.jordan_matrix() @ np.linalg.inv(self.Q)

    def reconstruction_error(self, A):
        """Relative error ``||Q J Q^{-1} - A|| / ||A||``."""
        A = np.asarray(A, dtype=float)
        return float(
            np.linalg.norm(self.matrix() - A) / max(np.linalg.norm(A), 1e-300)
        )

    def require_critical(self, tol=1e-9):
        """Check that every eigenvalue sits on the critical half line."""
        for lam, _ in self.blocks:
            if abs(lam.real - _CRITICAL_RE) > tol:
                raise SpectrumError(
                    f"eigenvalue {lam} has Re != 1/2 (tolerance {tol:.1e})"
                )


def critical_covariance(jordan, Sigma):
    """Limit covariance ``Q V Q*`` of the critically normalized walk.

    ``V`` is assembled block pair by block pair from the sign/factorial
    formula

    ``V_ij(r, s) = (-1)^(m_r+m_s-i-j)
    / ((m_r-i)! (m_s-j)! (m_r+m_s-i-j+1)) * corner(r, s)``

    when the two blocks share an eigenvalue, and is zero otherwise.  The
    scalar ``corner(r, s)`` is the bottom-right entry of the ``(r, s)`` block
    of ``Q^{-1} Sigma (Q^{-1})*``.

    Returns the complex Hermitian PSD matrix ``Q V Q*``.
    """
    jordan.require_critical()
    Sigma = np.asarray(Sigma, dtype=float)
    d = jordan.d
    Qi = np.linalg.inv(jordan.Q)
    St = Qi @ Sigma @ Qi.conj().T

    offsets = []
    off = 0
    for _, m in jordan.blocks:
        offsets.append(off)
        off += m

    V = np.zeros((d, d), dtype=complex)
    for r, (lam_r, mr) in enumerate(jordan.blocks):
        for s, (lam_s, ms) in enumerate(jordan.blocks):
            if abs(lam_r - lam_s) > 1e-9:
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
                    V[offsets[r] + i - 1, offsets[s] + j - 1] = (
                        sign / denom * corner
                    )
    out = jordan.Q @ V @ jordan.Q.conj().T
    return 0.5 * (out + out.conj().T)


def build_Dn(jordan, n):
    """Logarithmic normalizer ``D_n`` for the critical regime.

    Per Jordan block of size ``m`` the diagonal carries the powers
    ``(log n)^(m-1/2), ..., (log n)^(3/2), (log n)^(1/2)``, conjugated back
    by ``Q``.  Requires ``n >= 2`` so that ``log n > 0``.
    """
    if n < 2:
        raise ValueError("build_Dn needs n >= 2")
    ln = math.log(n)
    diag = []
    for _, m in jordan.blocks:
        diag.extend(ln ** (m - k - 0.5) for k in range(m))
    D = jordan.Q @ np.diag(np.asarray(diag, dtype=complex)) @ np.linalg.inv(jordan.Q)
    return D


@dataclass(frozen=True)
class SpectralSplit:
    """Projections onto the stable/central/unstable spectral subspaces.

    ``P_s + P_c + P_u = I``; each projection commutes with ``A`` and is
    idempotent.  ``A_s``, ``A_c``, ``A_u`` are the restrictions of ``A``
    written in full-space coordinates (``A @ P``).
    """

    P_s: np.ndarray
    P_c: np.ndarray
    P_u: np.ndarray
    A_s: np.ndarray
    A_c: np.ndarray
    A_u: np.ndarray

    def check(self, A, tol=1e-10):
        """Validate the projection identities against ``A``."""
        d = self.P_s.shape[0]
        A = np.asarray(A, dtype=float)
        issues = []
        if np.abs(self.P_s + self.P_c + self.P_u - np.eye(d)).max() > tol:
            issues.append("projections do not sum to the identity")
        for name, P in (("P_s", self.P_s), ("P_c", self.P_c), ("P_u", self.P_u)):
            if np.abs(P @ P - P).max() > tol:
                issues.append(f"{name} is not idempotent")
            if np.abs(P @ A - A @ P).max() > tol:
                issues.append(f"{name} does not commute with A")
        if issues:
            raise EigenbasisError("; ".join(issues))


def spectral_split(A, jordan=None, gap=1e-6, cond_limit=1e8):
    """Split R^d into stable/central/unstable subspaces of ``A``.

    Eigenvalues with real part below, on, and above the critical half line
    are grouped (complex conjugate pairs always land in the same group, so
    the projections are real).  Without user Jordan data the split requires
    ``A`` diagonalizable with a well-conditioned eigenbasis.

    Parameters
    ----------
    A : (d, d) array
    jordan : JordanSpec, optional
        Exact basis to use instead of a numerical eigendecomposition.
    gap : float
        Half-width of the band around ``Re = 1/2`` classified as central.
    cond_limit : float
        Maximum tolerated eigenbasis condition number.
    """
    A = np.asarray(A, dtype=float)
    if jordan is not None:
        Q = np.asarray(jordan.Q, dtype=complex)
        eigs = []
        for lam, m in jordan.blocks:
            eigs.extend([lam] * m)
        eigs = np.asarray(eigs)
    else:
        eigs, Q = np.linalg.eig(A)
        if np.linalg.cond(Q) > cond_limit:
            raise EigenbasisError(
                "eigenbasis condition number exceeds "
                f"{cond_limit:.0e}; supply a JordanSpec with exact Jordan data"
            )
    Qi = np.linalg.inv(Q)
    re = eigs.real

    def projector(mask):
        if not mask.any():
            return np.zeros_like(A)
        P = Q[:, mask] @ Qi[mask, :]
        return realify(P, tol=1e-8 * max(1.0, float(np.abs(P).max())))

    masks = {
        "s": re < _CRITICAL_RE - gap,
        "c": np.abs(re - _CRITICAL_RE) <= gap,
        "u": re > _CRITICAL_RE + gap,
    }
    P = {k: projector(m) for k, m in masks.items()}
    split = SpectralSplit(
        P_s=P["s"],
        P_c=P["c"],
        P_u=P["u"],
        A_s=A @ P["s"],
        A_c=A @ P["c"],
        A_u=A @ P["u"],
    )
    split.check(A)
    return split
