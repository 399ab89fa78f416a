"""Pure-NumPy stepping kernels, vectorized across replicas.

This is the fallback backend used when the compiled extension is not
available.  Both backends draw noise from per-replica generators in blocks
of identical size and consume it in identical order, so trajectories are
reproducible across backends, batch splits, and worker counts.
"""

import numpy as np

from ..errors import ChainBlowUpError, SimulationOverflowError

#: noise draws per replica per refill; part of the reproducibility contract
BLOCK = 4096

_OVERFLOW = 1e280


def draw_block(gen, gaussian, shape):
    """Draw a noise block: standard normals or unit-variance signs."""
    if gaussian:
        return gen.standard_normal(shape)
    u = gen.random(shape)
    return np.where(u < 0.5, -1.0, 1.0)


def _clamp_factor(Sigma, mu):
    """Factor of the PSD projection of ``Sigma - mu mu^T`` (negative
    eigenvalues zeroed)."""
    C = Sigma - np.outer(mu, mu)
    lam, V = np.linalg.eigh(C)
    lam = np.clip(lam, 0.0, None)
    return V * np.sqrt(lam)


def run_walk_batch(
    S,
    n0,
    n1,
    *,
    linear,
    A,
    rho,
    alpha,
    beta,
    Sigma,
    L0,
    L0inv,
    strict,
    gaussian,
    gens,
    checkpoints=None,
    out_checks=None,
    noise_scale=1.0,
):
    """Advance every replica in the batch from time ``n0`` to ``n1`` in place.

    Parameters
    ----------
    S : (B, d) float array
        Positions at time ``n0``; overwritten with positions at ``n1``.
    n0, n1 : int
        Step ``n`` maps position ``S_n`` to ``S_{n+1}``; the drift vanishes
        at ``n = 0``.
    linear : bool
        Selects ``A s / n`` (matrix drift) versus
        ``rho n^-beta ||s||^(alpha-1) s`` (radial drift).
    Sigma, L0, L0inv : (d, d) arrays
        Conditional second moment, its Cholesky factor, and the inverse
        factor (used by the strict-moment transform).
    strict : bool
        Strict mode shapes the innovation covariance to ``Sigma - mu mu^T``;
        when that matrix leaves the PSD cone it is projected back and the
        event counted.
    gens : sequence of ``numpy.random.Generator``
        One stream per replica, consumed in blocks of :data:`BLOCK`.
    checkpoints : sorted int array, optional
        Times in ``(n0, n1]`` at which to record positions into
        ``out_checks`` (shape ``(B, len(checkpoints), d)``).
    noise_scale : float
        Innovation multiplier; 0 gives the deterministic zero-noise hook.

    Returns
    -------
    (B,) int64 array of PSD-projection (clamp) counts per replica.
    """
    S = np.asarray(S)
    B, d = S.shape
    A = np.asarray(A, dtype=float)
    clamps = np.zeros(B, dtype=np.int64)
    cps = np.asarray(checkpoints if checkpoints is not None else [], dtype=np.int64)
    cp_idx = int(np.searchsorted(cps, n0, side="right"))

    buf = np.empty((B, BLOCK, d))
    mu = np.zeros((B, d))
    n = int(n0)
    while n < n1:
        take = min(BLOCK, int(n1) - n)
        for b in range(B):
            buf[b, :take] = draw_block(gens[b], gaussian, (take, d))
        for t in range(take):
            m = n + t
            zeta = buf[:, t, :]
            if m == 0:
                mu[:] = 0.0
            elif linear:
                for i in range(d):
                    acc = A[i, 0] * S[:, 0]
                    for j in range(1, d):
                        acc = acc + A[i, j] * S[:, j]
                    mu[:, i] = acc / m
            else:
                nrm2 = S[:, 0] * S[:, 0]
                for j in range(1, d):
                    nrm2 = nrm2 + S[:, j] * S[:, j]
                nrm = np.sqrt(nrm2)
                with np.errstate(divide="ignore"):
                    fac = np.where(
                        nrm > 0.0,
                        rho * float(m) ** (-beta) * nrm ** (alpha - 1.0),
                        0.0,
                    )
                for i in range(d):
                    mu[:, i] = fac * S[:, i]

            if strict and m >= 1:
                w = np.empty((B, d))
                for i in range(d):
                    acc = L0inv[i, 0] * mu[:, 0]
                    for j in range(1, d):
                        acc = acc + L0inv[i, j] * mu[:, j]
                    w[:, i] = acc
                w2 = (w * w).sum(axis=1)
                bad = w2 > 1.0
                w2c = np.minimum(w2, 1.0)
                denom = np.where(w2c > 0.0, w2c, 1.0)
                theta = np.where(w2c > 0.0, (1.0 - np.sqrt(1.0 - w2c)) / denom, 0.0)
                q = (w * zeta).sum(axis=1)
                v = zeta - (theta * q)[:, None] * w
                U = np.empty((B, d))
                for i in range(d):
                    acc = L0[i, 0] * v[:, 0]
                    for j in range(1, d):
                        acc = acc + L0[i, j] * v[:, j]
                    U[:, i] = acc
                if bad.any():
                    for b in np.nonzero(bad)[0]:
                        F = _clamp_factor(Sigma, mu[b])
                        U[b] = F @ zeta[b]
                        clamps[b] += 1
            else:
                U = np.empty((B, d))
                for i in range(d):
                    acc = L0[i, 0] * zeta[:, 0]
                    for j in range(1, d):
                        acc = acc + L0[i, j] * zeta[:, j]
                    U[:, i] = acc

            X = mu + noise_scale * U
            S += X
            if cp_idx < len(cps) and m + 1 == cps[cp_idx]:
                out_checks[:, cp_idx, :] = S
                cp_idx += 1
        n += take
        if not np.all(np.isfinite(S)) or np.abs(S).max() > _OVERFLOW:
            raise SimulationOverflowError(
                f"walk state left the float range before step {n}", step=n
            )
    return clamps


def run_em_batch(X, n_steps, *, alpha, dt, Ldt, gens, noise_scale=1.0, guard=1e6):
    """Advance every chain ``n_steps`` Euler-Maruyama steps in place.

    ``Ldt`` is the diffusion factor already scaled by ``sqrt(dt)``.  Raises
    :class:`ChainBlowUpError` if any chain leaves the guard radius.
    """
    X = np.asarray(X)
    B, d = X.shape
    buf = np.empty((B, BLOCK, d))
    done = 0
    while done < n_steps:
        take = min(BLOCK, n_steps - done)
        for b in range(B):
            buf[b, :take] = draw_block(gens[b], True, (take, d))
        for t in range(take):
            zeta = buf[:, t, :]
            nrm2 = X[:, 0] * X[:, 0]
            for j in range(1, d):
                nrm2 = nrm2 + X[:, j] * X[:, j]
            nrm = np.sqrt(nrm2)
            with np.errstate(divide="ignore"):
                hfac = np.where(nrm > 0.0, nrm ** (alpha - 1.0), 0.0)
            for i in range(d):
                acc = Ldt[i, 0] * zeta[:, 0]
                for j in range(1, d):
                    acc = acc + Ldt[i, j] * zeta[:, j]
                X[:, i] += dt * (-0.5 * X[:, i] + hfac * X[:, i]) + noise_scale * acc
        done += take
        worst = np.abs(X).max()
        if not np.isfinite(worst) or worst > guard:
            raise ChainBlowUpError(
                f"chain escaped the divergence guard (|x| > {guard:g})"
            )
    return X
