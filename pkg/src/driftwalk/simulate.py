"""Trajectory generation, ensemble normalization, and limit estimation.

Replicas are driven by counter-based Philox streams keyed on
``(seed, replica_id)``, so ensembles are reproducible bit for bit for any
worker count and any batch split.  The stepping itself happens in the
compiled or NumPy kernel backend (see ``driftwalk._kernels``).
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import matfun, model
from ._kernels import run_walk_batch
from .errors import UnsupportedRegimeError

__all__ = [
    "RngStream",
    "Trajectory",
    "TerminalEnsemble",
    "Normalization",
    "default_checkpoints",
    "step",
    "simulate_walk",
    "extend_walk",
    "estimate_W",
    "run_ensemble",
    "default_normalization",
]

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


@dataclass(frozen=True)
class RngStream:
    """Coordinates of one counter-based random stream.

    Distinct ``(seed, replica_id, counter)`` triples yield statistically
    independent Philox streams; identical triples reproduce identical draws
    bit for bit.  The triple is packed into the 128-bit Philox key as
    ``(seed, replica_id << 32 | counter)``, so no sequential hand-off is
    needed between replicas and workers.
    """

    seed: int
    replica_id: int = 0
    counter: int = 0

    def __post_init__(self):
        if not (0 <= self.replica_id <= _MASK32):
            raise ValueError("replica_id must fit in 32 bits")
        if not (0 <= self.counter <= _MASK32):
            raise ValueError("counter must fit in 32 bits")

    def generator(self):
        """Fresh NumPy generator positioned at the start of this stream."""
        key = np.array(
            [self.seed & _MASK64, (self.replica_id << 32) | self.counter],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(seed=int(rng)).generator()
    raise TypeError(f"cannot interpret {type(rng).__name__} as a random stream")


def _kernel_params(spec):
    """Shared keyword arguments for the stepping kernels."""
    L0 = np.linalg.cholesky(spec.Sigma)
    linear = spec.drift_kind is model.DriftKind.LINEAR
    return dict(
        linear=linear,
        A=spec.A,
        rho=0.0 if linear else spec.rho,
        alpha=spec.alpha,
        beta=spec.beta,
        Sigma=spec.Sigma,
        L0=L0,
        L0inv=np.linalg.inv(L0),
        strict=spec.noise.mode is model.MomentMode.STRICT,
        gaussian=spec.noise.family is model.NoiseFamily.GAUSSIAN,
    )


def default_checkpoints(horizon):
    """Geometric checkpoint schedule: powers of two up to the horizon."""
    ks = []
    k = 1
    while k <= horizon:
        ks.append(k)
        k *= 2
    if ks[-1] != horizon:
        ks.append(int(horizon))
    return np.asarray(ks, dtype=np.int64)


@dataclass(frozen=True)
class Trajectory:
    """One realized path, kept at checkpoint resolution.

    ``S_n`` is the terminal position; ``checkpoints`` holds ``(k, S_k)``
    pairs on a geometric schedule.  The private generator handle makes the
    path continuable by :func:`extend_walk`.
    """

    spec: model.WalkSpec
    horizon: int
    S_n: np.ndarray
    checkpoints: tuple
    W_hat: np.ndarray = None
    clamp_count: int = 0
    _gen: object = field(default=None, repr=False, compare=False)


def step(S, n, spec, rng, noise_scale=1.0):
    """Draw one step ``X_{n+1}`` of the walk sitting at ``S`` at time ``n``.

    The conditional mean is ``mu(S, n)`` (zero at ``n = 0``) and the
    conditional second moment follows the spec's noise model.  Delegates to
    the stepping kernel so that :func:`simulate_walk` is exactly this
    operation applied ``horizon`` times.
    """
    gen = _as_generator(rng)
    S = np.asarray(S, dtype=float)
    state = S[None, :].copy()
    run_walk_batch(
        state, n, n + 1, gens=[gen], noise_scale=noise_scale, **_kernel_params(spec)
    )
    return state[0] - S


def simulate_walk(spec, horizon, rng, noise_scale=1.0, s1=None):
    """Simulate one walk of ``horizon`` steps started from the origin.

    Parameters
    ----------
    rng : RngStream, Generator, or int seed
    noise_scale : float
        Test hook; 0 removes the innovations, leaving the deterministic
        drift recursion.
    s1 : array, optional
        Test hook fixing ``S_1`` instead of drawing the first step.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    gen = _as_generator(rng)
    d = spec.d
    cps = default_checkpoints(horizon)
    state = np.zeros((1, d))
    pre = []
    n0 = 0
    if s1 is not None:
        state[0] = np.asarray(s1, dtype=float)
        n0 = 1
        pre.append((1, state[0].copy()))
    kernel_cps = cps[cps > n0]
    out = np.empty((1, len(kernel_cps), d))
    clamps = run_walk_batch(
        state,
        n0,
        horizon,
        gens=[gen],
        checkpoints=kernel_cps,
        out_checks=out,
        noise_scale=noise_scale,
        **_kernel_params(spec),
    )
    checkpoints = tuple(pre) + tuple(
        (int(k), out[0, i].copy()) for i, k in enumerate(kernel_cps)
    )
    return Trajectory(
        spec=spec,
        horizon=int(horizon),
        S_n=state[0].copy(),
        checkpoints=checkpoints,
        clamp_count=int(clamps[0]),
        _gen=gen,
    )


def extend_walk(traj, horizon, noise_scale=1.0):
    """Continue a trajectory on its own random stream to a later horizon."""
    if horizon <= traj.horizon:
        raise ValueError("extension horizon must exceed the current horizon")
    if traj._gen is None:
        raise ValueError("trajectory does not carry a live random stream")
    spec = traj.spec
    state = traj.S_n[None, :].copy()
    cps_all = default_checkpoints(horizon)
    cps = cps_all[cps_all > traj.horizon]
    out = np.empty((1, len(cps), spec.d))
    clamps = run_walk_batch(
        state,
        traj.horizon,
        horizon,
        gens=[traj._gen],
        checkpoints=cps,
        out_checks=out,
        noise_scale=noise_scale,
        **_kernel_params(spec),
    )
    checkpoints = traj.checkpoints + tuple(
        (int(k), out[0, i].copy()) for i, k in enumerate(cps)
    )
    return replace(
        traj,
        horizon=int(horizon),
        S_n=state[0].copy(),
        checkpoints=checkpoints,
        clamp_count=traj.clamp_count + int(clamps[0]),
    )


def estimate_W(spec, horizon_W, rng, noise_scale=1.0, s1=None):
    """Estimate the supercritical growth limit ``W = lim n^-A S_n``.

    Returns ``(W_hat, trajectory)`` with
    ``W_hat = matrix_power(A, horizon_W)^{-1} S_{horizon_W}``; the returned
    trajectory can be continued with :func:`extend_walk`.
    """
    regime = model.classify_regime(spec)
    if regime is not model.Regime.LINEAR_SUPERCRITICAL:
        raise UnsupportedRegimeError(
            f"W estimation needs a supercritical linear spec, got {regime}"
        )
    traj = simulate_walk(spec, horizon_W, rng, noise_scale=noise_scale, s1=s1)
    W_hat = np.linalg.solve(matfun.matrix_power(spec.A, horizon_W), traj.S_n)
    return W_hat, replace(traj, W_hat=W_hat)


class Normalization(Enum):
    DIFFUSIVE_SQRT_N = "diffusive_sqrt_n"
    POWER_GAMMA = "power_gamma"
    SUPERCRITICAL_RESIDUAL = "supercritical_residual"
    CRITICAL_LOG_NORM = "critical_log_norm"


def default_normalization(regime):
    """Regime-appropriate terminal normalization."""
    return {
        model.Regime.NONLINEAR_ABOVE: Normalization.DIFFUSIVE_SQRT_N,
        model.Regime.NONLINEAR_ON_LINE: Normalization.DIFFUSIVE_SQRT_N,
        model.Regime.NONLINEAR_BELOW: Normalization.POWER_GAMMA,
        model.Regime.LINEAR_SUBCRITICAL: Normalization.DIFFUSIVE_SQRT_N,
        model.Regime.LINEAR_SUPERCRITICAL: Normalization.SUPERCRITICAL_RESIDUAL,
        model.Regime.LINEAR_CRITICAL: Normalization.CRITICAL_LOG_NORM,
    }[regime]


@dataclass(frozen=True)
class TerminalEnsemble:
    """Normalized terminal vectors of a replicated simulation.

    ``values`` has one row per replica.  Provenance (spec, horizon, replica
    count, base seed) travels with the data, alongside per-replica
    checkpoint norms for growth diagnostics, estimated ``W`` vectors where
    the normalization produces them, and PSD-clamp counts.
    """

    values: np.ndarray
    normalization: Normalization
    spec: model.WalkSpec
    horizon: int
    replicas: int
    seed: int
    w_hats: np.ndarray = None
    checkpoint_ks: np.ndarray = None
    checkpoint_norms: np.ndarray = None
    clamp_counts: np.ndarray = None

    def __post_init__(self):
        if self.replicas < 2 or self.values.shape[0] != self.replicas:
            raise ValueError("an ensemble needs at least two replica rows")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("ensemble rows must be finite")

    @property
    def d(self):
        return self.values.shape[1]


def _simulate_chunk(args):
    """Worker body: simulate a contiguous block of replica ids."""
    (spec, horizon, ids, seed, far_horizon, noise_scale, cps) = args
    B = len(ids)
    d = spec.d
    gens = [RngStream(seed=seed, replica_id=int(r)).generator() for r in ids]
    state = np.zeros((B, d))
    out = np.empty((B, len(cps), d))
    params = _kernel_params(spec)
    try:
        clamps = run_walk_batch(
            state,
            0,
            horizon,
            gens=gens,
            checkpoints=cps,
            out_checks=out,
            noise_scale=noise_scale,
            **params,
        )
        S_term = state.copy()
        S_far = None
        if far_horizon is not None:
            clamps = clamps + run_walk_batch(
                state,
                horizon,
                far_horizon,
                gens=gens,
                noise_scale=noise_scale,
                **params,
            )
            S_far = state.copy()
    except Exception as exc:
        raise type(exc)(
            f"{exc} (while simulating replicas {ids[0]}..{ids[-1]})"
        ) from exc
    cp_norms = np.sqrt((out * out).sum(axis=2))
    return ids, S_term, S_far, cp_norms, clamps


def _spd_sqrt(M, pinv=False):
    lam, V = np.linalg.eigh(np.asarray(M, dtype=float))
    lam = np.clip(lam, 0.0, None)
    root = np.sqrt(lam)
    if pinv:
        inv = np.where(root > 1e-12 * root.max(), 1.0 / np.where(root > 0, root, 1), 0.0)
        return (V * inv) @ V.T
    return (V * root) @ V.T


def _tail_correction(spec, factor):
    """Closed-form variance correction for the finite-tail residual.

    A residual formed against a ``W`` estimate taken at ``factor * N``
    observes only the martingale fluctuation accumulated on
    ``(N, factor * N]``, which deflates the limiting covariance from
    ``-Xi`` to ``-Xi - c^(I/2-A) (-Xi) c^(I/2-A)^T`` (``c`` = factor).
    The returned operator ``L`` maps the deflated residual back so its
    covariance matches ``-Xi``.
    """
    A = spec.A
    d = spec.d
    neg_xi = -matfun.lyapunov_solve(A, spec.Sigma)
    T = matfun.matrix_power(0.5 * np.eye(d) - A, factor)
    deflated = neg_xi - T @ neg_xi @ T.T
    return _spd_sqrt(neg_xi) @ np.linalg.inv(_spd_sqrt(deflated))


def run_ensemble(
    spec,
    horizon,
    M,
    normalization=None,
    base_seed=0,
    workers=None,
    jordan=None,
    continuation_factor=16,
    noise_scale=1.0,
):
    """Simulate ``M`` independent replicas and normalize the terminals.

    Normalizations
    --------------
    * ``DIFFUSIVE_SQRT_N``: rows are ``S_n / sqrt(n)``.
    * ``POWER_GAMMA``: rows are ``n^-gamma S_n``.
    * ``CRITICAL_LOG_NORM``: rows are ``D_n^-1 n^-A S_n`` (needs Jordan data
      or a diagonalizable drift matrix).
    * ``SUPERCRITICAL_RESIDUAL``: each path records ``S_N`` at the ensemble
      horizon, continues on the same stream to ``continuation_factor * N``
      where ``W`` is estimated, and the residual
      ``(S_N - N^A W_hat) / sqrt(N)`` is corrected for the known finite-tail
      covariance deflation (see :func:`_tail_correction`), making its
      covariance consistent for ``-Xi``.

    Replica ``i`` uses the stream ``(base_seed, i)``; results are identical
    for any ``workers`` value.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    regime = model.classify_regime(spec)
    if normalization is None:
        normalization = default_normalization(regime)
    normalization = Normalization(normalization)

    far_horizon = None
    if normalization is Normalization.SUPERCRITICAL_RESIDUAL:
        if regime is not model.Regime.LINEAR_SUPERCRITICAL:
            raise UnsupportedRegimeError(
                "the residual normalization needs a supercritical spec"
            )
        if continuation_factor <= 1:
            raise ValueError("continuation_factor must exceed 1")
        far_horizon = int(continuation_factor) * int(horizon)

    cps = default_checkpoints(horizon)
    ids = np.arange(M, dtype=np.int64)
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, int(workers))

    if workers == 1:
        chunks = [
            _simulate_chunk(
                (spec, int(horizon), ids, int(base_seed), far_horizon, noise_scale, cps)
            )
        ]
    else:
        n_chunks = min(M, 4 * workers)
        parts = np.array_split(ids, n_chunks)
        args = [
            (spec, int(horizon), part, int(base_seed), far_horizon, noise_scale, cps)
            for part in parts
            if len(part)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_simulate_chunk, args))

    d = spec.d
    S_term = np.empty((M, d))
    S_far = np.empty((M, d)) if far_horizon is not None else None
    cp_norms = np.empty((M, len(cps)))
    clamps = np.zeros(M, dtype=np.int64)
    for part_ids, term, far, norms, cl in chunks:
        S_term[part_ids] = term
        if far is not None:
            S_far[part_ids] = far
        cp_norms[part_ids] = norms
        clamps[part_ids] = cl

    w_hats = None
    if normalization is Normalization.DIFFUSIVE_SQRT_N:
        rows = S_term / math.sqrt(horizon)
    elif normalization is Normalization.POWER_GAMMA:
        rows = S_term * float(horizon) ** (-model.gamma_exponent(spec))
    elif normalization is Normalization.CRITICAL_LOG_NORM:
        if jordan is None:
            jordan = matfun.JordanSpec.from_eigendecomposition(spec.A)
        T = np.linalg.inv(matfun.build_Dn(jordan, horizon)) @ matfun.matrix_power(
            -spec.A, horizon
        )
        rows = S_term @ matfun.realify(T, tol=1e-8).T
    else:
        nA = matfun.matrix_power(spec.A, horizon)
        far_inv = np.linalg.inv(matfun.matrix_power(spec.A, far_horizon))
        w_hats = S_far @ far_inv.T
        raw = (S_term - w_hats @ nA.T) / math.sqrt(horizon)
        L = _tail_correction(spec, continuation_factor)
        rows = raw @ L.T

    return TerminalEnsemble(
        values=rows,
        normalization=normalization,
        spec=spec,
        horizon=int(horizon),
        replicas=int(M),
        seed=int(base_seed),
        w_hats=w_hats,
        checkpoint_ks=cps,
        checkpoint_norms=cp_norms,
        clamp_counts=clamps,
    )


def mixed_ensembles(
    spec,
    horizon,
    M,
    base_seed=0,
    workers=None,
    jordan=None,
    continuation_factor=16,
    noise_scale=1.0,
):
    """Blockwise-normalized ensembles for a mixed linear spectrum.

    One simulation pass produces three full-space ensembles from the same
    paths: the stable projection at diffusive scale, the central projection
    at logarithmic scale (zero rows when the central subspace is trivial),
    and the tail-corrected unstable residual at diffusive scale.  The joint
    limit is Gaussian with block-diagonal covariance across the three.
    """
    if jordan is None:
        jordan = matfun.JordanSpec.from_eigendecomposition(spec.A)
    split = matfun.spectral_split(spec.A, jordan=jordan)
    far_horizon = int(continuation_factor) * int(horizon)

    base = run_ensemble(
        spec,
        horizon,
        M,
        normalization=Normalization.DIFFUSIVE_SQRT_N,
        base_seed=base_seed,
        workers=workers,
        noise_scale=noise_scale,
    )
    # re-simulate the continuation on the same streams for the unstable W
    # estimate: cheap relative to clarity would be false economy here, so the
    # pass below reuses the internal chunk runner with a far horizon instead.
    ids = np.arange(M, dtype=np.int64)
    cps = default_checkpoints(horizon)
    chunk = _simulate_chunk(
        (spec, int(horizon), ids, int(base_seed), far_horizon, noise_scale, cps)
    )
    _, S_term, S_far, _, _ = chunk
    sqrt_n = math.sqrt(horizon)

    stable = base.values @ split.P_s.T

    d = spec.d
    has_central = float(np.abs(split.P_c).max()) > 0.0
    if has_central:
        ln_powers = []
        for lam, m in jordan.blocks:
            if abs(lam.real - 0.5) <= 1e-6:
                ln_powers.extend(
                    math.log(horizon) ** (m - k - 0.5) for k in range(m)
                )
            else:
                ln_powers.extend([1.0] * m)
        D = jordan.Q @ np.diag(np.asarray(ln_powers, dtype=complex)) @ np.linalg.inv(
            jordan.Q
        )
        T_c = (
            np.linalg.inv(D)
            @ matfun.matrix_power(-split.A_c, horizon)
            @ split.P_c
        )
        central = S_term @ matfun.realify(T_c, tol=1e-8).T
    else:
        central = np.zeros((M, d))

    has_unstable = float(np.abs(split.P_u).max()) > 0.0
    if has_unstable:
        nA = matfun.matrix_power(spec.A, horizon)
        far_inv = np.linalg.inv(matfun.matrix_power(spec.A, far_horizon))
        w_u = (S_far @ far_inv.T) @ split.P_u.T
        raw = (S_term @ split.P_u.T - w_u @ nA.T) / sqrt_n
        xi_u = matfun.lyapunov_solve(np.eye(d) - split.A_u, split.P_u @ spec.Sigma @ split.P_u.T)
        T = matfun.matrix_power(0.5 * np.eye(d) - spec.A, continuation_factor)
        deflated = xi_u - T @ xi_u @ T.T
        L = _spd_sqrt(xi_u) @ _spd_sqrt(deflated, pinv=True)
        unstable = raw @ L.T
    else:
        w_u = None
        unstable = np.zeros((M, d))

    def wrap(values, w_hats=None):
        return TerminalEnsemble(
            values=values,
            normalization=Normalization.DIFFUSIVE_SQRT_N,
            spec=spec,
            horizon=int(horizon),
            replicas=int(M),
            seed=int(base_seed),
            w_hats=w_hats,
            checkpoint_ks=base.checkpoint_ks,
            checkpoint_norms=base.checkpoint_norms,
            clamp_counts=base.clamp_counts,
        )

    return {
        "stable": wrap(stable),
        "central": wrap(central),
        "unstable": wrap(unstable, w_hats=w_u),
    }
