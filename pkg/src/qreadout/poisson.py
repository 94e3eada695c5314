"""Photon-counting channel: Bernoulli-thinned counts, DMZ-type filters, LLR.

Counts live on the same grid as the filters: ``dn_k`` in {0, 1} is the
number of detections in ``[t_k, t_{k+1})``, drawn with probability
``lambda_m(t_k) dt`` where ``lambda_m = lambda0 (1 + alpha x)``. The grid
must keep every intensity below ``0.1 / dt``.

Filter masses are reported against the null hypothesis (Poisson counts
at the known baseline ``lambda0``), whatever reference intensity
``kappa`` the recursion itself uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import (
    HiddenTrajectory,
    HypothesisModel,
    InvariantBreach,
    ModelError,
    RateSchedule,
    SeedLike,
    TimeGrid,
    make_rng,
    sample_trajectories,
    transition_matrices,
)
from .gaussian import (
    FilterState,
    GaussianRecord,
    llr_estimator_correlator,
    _log,
    _log_integral,
    _prepend_zero,
    _state_from_logs,
)

MAX_RATE_DT = 0.1


@dataclass(frozen=True, eq=False)
class CountRecord:
    grid: TimeGrid
    dn: np.ndarray
    lambda0: RateSchedule | float

    def __post_init__(self):
        lam = RateSchedule(self.lambda0)
        if lam.min() <= 0:
            raise ModelError("baseline intensity lambda0 must be strictly positive")
        lam.on(self.grid)
        dn = np.asarray(self.dn)
        if dn.ndim == 0 or dn.shape[-1] != self.grid.K:
            raise ModelError(f"count record must have K = {self.grid.K} increments per row")
        if not np.all((dn == 0) | (dn == 1)):
            raise ModelError("count increments must be 0 or 1 per step; refine the grid")
        self.grid.check_count_rate(lam.max(), MAX_RATE_DT)
        object.__setattr__(self, "dn", dn.astype(np.int8, copy=False))
        object.__setattr__(self, "lambda0", lam)

    @property
    def n(self) -> np.ndarray:
        """Cumulative count ``n(t_k)`` with ``n(0) = 0``."""
        return _prepend_zero(np.cumsum(self.dn, axis=-1, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class PoissonLLRTrace:
    grid: TimeGrid
    llr: np.ndarray
    nu: np.ndarray

    @property
    def final(self):
        return self.llr[..., -1]


def _max_intensity(model: HypothesisModel, lambda0: RateSchedule, grid: TimeGrid) -> float:
    lam = lambda0.on(grid)
    return float(np.max(lam * np.maximum(1.0, 1.0 + model.amplitude.on(grid))))


def simulate_poisson(
    model: HypothesisModel,
    traj: HiddenTrajectory,
    lambda0,
    grid: TimeGrid,
    seed: SeedLike = None,
) -> CountRecord:
    """Draw ``dn_k ~ Bernoulli(lambda0_k (1 + alpha_k x(t_k)) dt)``."""
    if traj.grid != grid:
        raise ModelError("trajectory and record grids differ")
    model.check_poisson_amplitude()
    lambda0 = RateSchedule(lambda0)
    grid.check_count_rate(_max_intensity(model, lambda0, grid), MAX_RATE_DT)
    rng = make_rng(seed)
    x = traj.x[..., :-1]
    intensity = lambda0.on(grid) * (1.0 + model.amplitude.on(grid) * x)
    dn = rng.random(x.shape) < intensity * grid.dt
    return CountRecord(grid, dn.astype(np.int8), lambda0)


def estimator_nu(state: FilterState, alpha_t):
    p = np.asarray(state.p)
    total = p[..., 0] + p[..., 1]
    if np.any(total <= 0):
        raise ModelError("estimator undefined for zero total mass")
    return alpha_t * p[..., 1] / total


def _log_factors(model, record, kappa):
    """Per-step log multipliers for both states, plus the offset to the null reference.

    With reference intensity kappa, the count update of the DMZ-type
    equation multiplies state x by ``(lambda_x/kappa)^dn exp(-(lambda_x - kappa) dt)``;
    the null itself has mass ``(lambda0/kappa)^dn exp(-(lambda0 - kappa) dt)``
    against the same reference, whose log is subtracted.
    """
    grid = record.grid
    dt = grid.dt
    lam0 = record.lambda0.on(grid)
    lam1 = lam0 * (1.0 + model.amplitude.on(grid))
    kap = lam0 if kappa is None else RateSchedule(kappa).on(grid)
    if np.any(kap <= 0):
        raise ModelError("reference intensity kappa must be strictly positive")
    dn = record.dn.reshape(-1, grid.K).astype(float)
    l0 = dn * np.log(lam0 / kap) - (lam0 - kap) * dt
    l1 = dn * np.log(lam1 / kap) - (lam1 - kap) * dt
    offset = -(dn * np.log(lam0 / kap) - (lam0 - kap) * dt)
    return l0, l1, offset


def poisson_dmz_step(
    state: FilterState,
    model: HypothesisModel,
    dn_k,
    k: int,
    record: CountRecord,
    kappa=None,
) -> FilterState:
    """Advance the counting-channel DMZ filter over step ``k``.

    ``kappa`` defaults to the baseline ``lambda0``, for which the update is
    ``p1 *= (1 + alpha)^dn exp(-lambda0 alpha dt)`` after ``exp(dt L)``.
    ``log_scale`` always tracks the log likelihood ratio against the null.
    """
    grid = record.grid
    dt = grid.dt
    lam0 = record.lambda0.on(grid)[k]
    alpha = model.amplitude.on(grid)[k]
    kap = lam0 if kappa is None else RateSchedule(kappa).on(grid)[k]
    if kap <= 0:
        raise ModelError("reference intensity kappa must be strictly positive")
    lam1 = lam0 * (1.0 + alpha)
    mk = transition_matrices(model, grid)[k]
    p = np.asarray(state.p, float)
    q0 = (mk[0, 0] * p[..., 0] + mk[0, 1] * p[..., 1]) * np.exp(dn_k * np.log(lam0 / kap) - (lam0 - kap) * dt)
    q1 = (mk[1, 0] * p[..., 0] + mk[1, 1] * p[..., 1]) * np.exp(dn_k * np.log(lam1 / kap) - (lam1 - kap) * dt)
    total = q0 + q1
    if not np.all(np.isfinite(total) & (total > 0)):
        raise InvariantBreach("counting filter state became degenerate", k)
    offset = -(dn_k * np.log(lam0 / kap) - (lam0 - kap) * dt)
    return FilterState(np.stack([q0 / total, q1 / total], axis=-1), state.log_scale + np.log(total) + offset)


def poisson_filter_numeric(model: HypothesisModel, record: CountRecord, kappa=None) -> FilterState:
    """Split-step filter over the whole count record (compiled loop)."""
    model.check_poisson_amplitude()
    grid = record.grid
    batch = record.dn.shape[:-1]
    l0, l1, offset = _log_factors(model, record, kappa)
    p0, p1 = model.initial_prob
    p, logs, bad = _kernels.split_filter(p0, p1, transition_matrices(model, grid), l0, l1)
    if bad >= 0:
        raise InvariantBreach("counting filter state became degenerate", bad)
    logs = logs + _prepend_zero(np.cumsum(offset, axis=-1))
    return FilterState(p.reshape(batch + p.shape[1:]), logs.reshape(batch + logs.shape[1:]))


def poisson_solve_no_excitation(model: HypothesisModel, record: CountRecord):
    """Closed form for zero excitation with reference intensity ``lambda0``.

    ``p1(t) = p1(0) exp(sum dn ln(1 + alpha) - sum (lambda0 alpha + L-) dt)``
    and ``p0(t) = p0(0) + sum L- p1 dt``, both as left-endpoint sums.
    """
    if not model.excitation.is_zero():
        raise ModelError("poisson_solve_no_excitation requires a zero excitation rate")
    model.check_poisson_amplitude()
    grid, dt = record.grid, record.grid.dt
    alpha = model.amplitude.on(grid)
    lam0 = record.lambda0.on(grid)
    decay = model.decay.on(grid)
    incr = record.dn * np.log1p(alpha) - (lam0 * alpha + decay) * dt
    log_p1 = _log(model.initial_prob[1]) + _prepend_zero(np.cumsum(incr, axis=-1))
    log_p0 = _log_integral(_log(model.initial_prob[0]), _log(decay * dt), log_p1)
    state = _state_from_logs(log_p0, log_p1, 0.0)
    return state, _trace_from_state(model, record, state)


def poisson_solve_no_decay(model: HypothesisModel, record: CountRecord):
    """Closed form for zero decay with reference ``kappa = lambda0 (1 + alpha)``.

    ``p0(t) = p0(0) exp(-sum dn ln(1 + alpha) + sum (lambda0 alpha - L+) dt)``
    and ``p1(t) = p1(0) + sum L+ p0 dt``. The log mass is shifted by
    ``sum dn ln(1 + alpha) - lambda0 alpha dt`` to refer it to the null.
    """
    if not model.decay.is_zero():
        raise ModelError("poisson_solve_no_decay requires a zero decay rate")
    model.check_poisson_amplitude()
    grid, dt = record.grid, record.grid.dt
    alpha = model.amplitude.on(grid)
    lam0 = record.lambda0.on(grid)
    exc = model.excitation.on(grid)
    jump = record.dn * np.log1p(alpha)
    incr = -jump + (lam0 * alpha - exc) * dt
    log_p0 = _log(model.initial_prob[0]) + _prepend_zero(np.cumsum(incr, axis=-1))
    log_p1 = _log_integral(_log(model.initial_prob[1]), _log(exc * dt), log_p0)
    shift = _prepend_zero(np.cumsum(jump - lam0 * alpha * dt, axis=-1))
    state = _state_from_logs(log_p0, log_p1, shift)
    return state, _trace_from_state(model, record, state)


def correlate_counts(nu: np.ndarray, dn: np.ndarray, lambda0: np.ndarray, dt: float) -> np.ndarray:
    """Ito sum ``sum_{j<k} dn_j ln(1 + nu_j) - dt lambda0_j nu_j``."""
    v = nu[..., :-1]
    if np.any(v <= -1.0):
        raise InvariantBreach("estimator nu reached -1")
    return _prepend_zero(np.cumsum(dn * np.log1p(v) - dt * lambda0 * v, axis=-1))


def _trace_from_state(model, record, state) -> PoissonLLRTrace:
    grid = record.grid
    nu = estimator_nu(state, model.amplitude.at_points(grid))
    llr = correlate_counts(nu, record.dn, record.lambda0.on(grid), grid.dt)
    return PoissonLLRTrace(grid, llr, nu)


def poisson_filter_and_llr(model: HypothesisModel, record: CountRecord):
    """Filter path and LLR trace, closed form when a rate vanishes."""
    if model.excitation.is_zero():
        return poisson_solve_no_excitation(model, record)
    if model.decay.is_zero():
        return poisson_solve_no_decay(model, record)
    state = poisson_filter_numeric(model, record)
    return state, _trace_from_state(model, record, state)


def llr_poisson(model: HypothesisModel, record: CountRecord) -> PoissonLLRTrace:
    """Counting-channel log-likelihood ratio against the baseline null.

    ``llr_{k+1} = llr_k + dn_k ln(1 + nu_k) - dt lambda0_k nu_k`` with the
    estimate ``nu_k = alpha p1 / (p0 + p1)`` taken before ``dn_k``.
    """
    if model.amplitude.is_zero():
        shape = record.dn.shape[:-1] + (record.grid.K + 1,)
        return PoissonLLRTrace(record.grid, np.zeros(shape), np.zeros(shape))
    return poisson_filter_and_llr(model, record)[1]


def gaussian_limit_transform(record: CountRecord) -> GaussianRecord:
    """Centered, scaled counts ``dy = (dn - lambda0 dt) / sqrt(lambda0)``."""
    if not record.lambda0.is_constant:
        raise ModelError("gaussian_limit_transform needs a constant baseline intensity")
    lam = float(record.lambda0.values)
    return GaussianRecord(record.grid, (record.dn - lam * record.grid.dt) / np.sqrt(lam))


def gaussian_limit_model(model: HypothesisModel, lambda0: float) -> HypothesisModel:
    """Counting model with ``alpha = sigma / sqrt(lambda0)`` for a Gaussian model."""
    return model.replace(amplitude=model.amplitude.values / np.sqrt(lambda0))


def gaussian_limit_gaps(
    model: HypothesisModel,
    lambda0: float,
    grid: TimeGrid,
    trials: int,
    seed: SeedLike = None,
) -> np.ndarray:
    """``|LLR_counts - LLR_gaussian(transformed counts)|`` at T for independent records.

    ``model`` carries the Gaussian amplitude sigma; records are drawn from
    the matching counting model with ``alpha = sigma / sqrt(lambda0)``.
    """
    rng = make_rng(seed)
    pmodel = gaussian_limit_model(model, lambda0)
    traj = sample_trajectories(pmodel, grid, trials, rng)
    counts = simulate_poisson(pmodel, traj, lambda0, grid, rng)
    llr_p = llr_poisson(pmodel, counts).final
    llr_g = llr_estimator_correlator(model, gaussian_limit_transform(counts)).final
    return np.abs(llr_p - llr_g)
