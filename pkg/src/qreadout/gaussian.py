"""Gaussian observation channel: record synthesis, DMZ filters and LLR.

All functions work in normalized units: the record is the increment
``dy_k = y(t_{k+1}) - y(t_k)`` of the normalized observation, with
``dy = sigma * x * dt + dW`` under a hypothesis and ``dy = dW`` under the
null. Arrays may carry leading batch dimensions (one record per row);
every filter broadcasts over them.

Stochastic integrals are Ito sums: an integrand evaluated at ``t_k``
multiplies the increment over ``[t_k, t_{k+1})``.
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
    SeedLike,
    TimeGrid,
    make_rng,
    transition_matrices,
)

SCHEMES = ("split", "euler")


@dataclass(frozen=True, eq=False)
class GaussianRecord:
    grid: TimeGrid
    dy: np.ndarray

    def __post_init__(self):
        dy = np.asarray(self.dy, dtype=float)
        if dy.ndim == 0 or dy.shape[-1] != self.grid.K:
            raise ModelError(f"record must have K = {self.grid.K} increments per row")
        if not np.all(np.isfinite(dy)):
            raise ModelError("record contains non-finite increments")
        object.__setattr__(self, "dy", dy)

    @property
    def y(self) -> np.ndarray:
        """Cumulative record ``y(t_k)`` with ``y(0) = 0``."""
        return _prepend_zero(np.cumsum(self.dy, axis=-1))


@dataclass(frozen=True, eq=False)
class FilterState:
    """Unnormalized two-state posterior ``exp(log_scale) * p``.

    ``p`` is kept at unit sum; ``log_scale`` holds the log of the total
    unnormalized mass measured against the null hypothesis. A single state
    has ``p.shape == (..., 2)``; a filter path stacks the grid points on
    the axis before the last (``(..., K + 1, 2)``).
    """

    p: np.ndarray
    log_scale: np.ndarray | float = 0.0

    @classmethod
    def initial(cls, model: HypothesisModel, batch_shape: tuple = ()) -> "FilterState":
        p = np.broadcast_to(np.asarray(model.initial_prob, float), batch_shape + (2,)).copy()
        return cls(p, np.zeros(batch_shape))

    @property
    def mass(self) -> np.ndarray:
        return self.p * np.exp(np.asarray(self.log_scale))[..., None]


@dataclass(frozen=True, eq=False)
class LLRTrace:
    """Running log-likelihood ratio and estimator at the K + 1 grid points."""

    grid: TimeGrid
    llr: np.ndarray
    mu: np.ndarray

    @property
    def final(self) -> np.ndarray | float:
        return self.llr[..., -1]


def _prepend_zero(a: np.ndarray) -> np.ndarray:
    pad = [(0, 0)] * (a.ndim - 1) + [(1, 0)]
    return np.pad(a, pad)


def simulate_gaussian(
    model: HypothesisModel, traj: HiddenTrajectory, grid: TimeGrid, seed: SeedLike = None
) -> GaussianRecord:
    """Synthesize ``dy_k = sigma_k x(t_k) dt + sqrt(dt) g_k`` for each trajectory."""
    if traj.grid != grid:
        raise ModelError("trajectory and record grids differ")
    rng = make_rng(seed)
    sigma = model.amplitude.on(grid)
    x = traj.x[..., :-1]
    noise = rng.standard_normal(x.shape)
    dy = sigma * x * grid.dt + np.sqrt(grid.dt) * noise
    return GaussianRecord(grid, dy)


def estimator_mu(state: FilterState, sigma_t) -> np.ndarray | float:
    """Conditional-mean estimate ``sigma * p1 / (p0 + p1)``."""
    p = np.asarray(state.p)
    total = p[..., 0] + p[..., 1]
    if np.any(total <= 0):
        raise ModelError("estimator undefined for zero total mass")
    return sigma_t * p[..., 1] / total


def _dmz_update(p0, p1, mk, sigma, dy, dt):
    """One split step on normalized masses; returns new masses and log of their sum."""
    q0 = mk[0, 0] * p0 + mk[0, 1] * p1
    q1 = (mk[1, 0] * p0 + mk[1, 1] * p1) * np.exp(sigma * dy - 0.5 * sigma * sigma * dt)
    total = q0 + q1
    return q0 / total, q1 / total, np.log(total)


def _dmz_update_euler(p0, p1, a, b, sigma, dy, dt):
    # a: excitation, b: decay
    q0 = p0 + dt * (-a * p0 + b * p1)
    q1 = p1 + dt * (a * p0 - b * p1) + dy * sigma * p1
    total = q0 + q1
    return q0 / total, q1 / total, np.log(total)


def dmz_step_numeric(
    state: FilterState,
    model: HypothesisModel,
    dy_k,
    k: int,
    grid: TimeGrid,
    scheme: str = "split",
) -> FilterState:
    """Advance the DMZ filter over step ``k`` using the increment ``dy_k``.

    ``scheme="split"`` applies ``exp(dy sigma x - dt sigma^2 x^2 / 2)``
    after the exact Markov propagator ``exp(dt L)``. ``scheme="euler"``
    is plain Euler-Maruyama of the same equation; it exists so the
    quantum integrator can be compared at identical discretization.
    The state is renormalized and ``log(total)`` added to ``log_scale``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    dt = grid.dt
    sigma = model.amplitude.on(grid)[k]
    p = np.asarray(state.p, float)
    if scheme == "split":
        mk = transition_matrices(model, grid)[k]
        n0, n1, lt = _dmz_update(p[..., 0], p[..., 1], mk, sigma, dy_k, dt)
    else:
        a = model.excitation.on(grid)[k]
        b = model.decay.on(grid)[k]
        n0, n1, lt = _dmz_update_euler(p[..., 0], p[..., 1], a, b, sigma, dy_k, dt)
    _check_masses(n0, n1, lt, k)
    return FilterState(np.stack([n0, n1], axis=-1), state.log_scale + lt)


def _check_masses(n0, n1, lt, k):
    if not (np.all(np.isfinite(lt)) and np.all(n0 >= 0) and np.all(n1 >= 0)):
        raise InvariantBreach("filter state became negative or non-finite; dt too large", k)


def dmz_filter_numeric(
    model: HypothesisModel, record: GaussianRecord, scheme: str = "split"
) -> FilterState:
    """Run the DMZ filter over the whole record and return the path of states.

    Same arithmetic as repeated :func:`dmz_step_numeric`, compiled.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    grid = record.grid
    dy = record.dy
    batch = dy.shape[:-1]
    flat = np.ascontiguousarray(dy.reshape(-1, grid.K))
    sigma = model.amplitude.on(grid)
    p0, p1 = model.initial_prob
    if scheme == "split":
        l1 = sigma * flat - 0.5 * sigma * sigma * grid.dt
        p, logs, bad = _kernels.split_filter(
            p0, p1, transition_matrices(model, grid), np.zeros_like(l1), l1
        )
    else:
        p, logs, bad = _kernels.euler_filter(
            p0,
            p1,
            model.excitation.on(grid),
            model.decay.on(grid),
            np.ascontiguousarray(sigma),
            flat,
            grid.dt,
        )
    if bad >= 0:
        raise InvariantBreach("filter state became negative or non-finite; dt too large", bad)
    return FilterState(p.reshape(batch + p.shape[1:]), logs.reshape(batch + logs.shape[1:]))


def _state_from_logs(log_p0: np.ndarray, log_p1: np.ndarray, shift) -> FilterState:
    log_total = np.logaddexp(log_p0, log_p1)
    p = np.stack([np.exp(log_p0 - log_total), np.exp(log_p1 - log_total)], axis=-1)
    return FilterState(p, log_total + shift)


def _log_integral(log_start, log_rate_dt, log_integrand):
    """Log of ``start + sum_{j<k} rate_j dt f_j`` for k = 0..K (left Riemann sum)."""
    terms = np.concatenate(
        [np.broadcast_to(log_start, log_integrand.shape[:-1] + (1,)), log_rate_dt + log_integrand[..., :-1]],
        axis=-1,
    )
    return np.logaddexp.accumulate(terms, axis=-1)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def correlate(mu: np.ndarray, dy: np.ndarray, dt: float) -> np.ndarray:
    """Ito estimator-correlator sum ``sum_{j<k} mu_j dy_j - dt mu_j^2 / 2``."""
    m = mu[..., :-1]
    return _prepend_zero(np.cumsum(m * dy - 0.5 * dt * m * m, axis=-1))


def dmz_solve_no_excitation(model: HypothesisModel, record: GaussianRecord):
    """Closed-form DMZ solution when the excitation rate is identically zero.

    The excited mass is a geometric Brownian motion,
    ``p1(t) = p1(0) exp(sum sigma dy - sum (sigma^2/2 + L-) dt)``, and the
    ground mass collects its decay, ``p0(t) = p0(0) + sum L- p1 dt``.

    Returns
    -------
    (FilterState, LLRTrace)
        The filter path (normalized masses plus log total mass relative to
        the null) and the estimator-correlator trace.
    """
    if not model.excitation.is_zero():
        raise ModelError("dmz_solve_no_excitation requires a zero excitation rate")
    grid, dy, dt = record.grid, record.dy, record.grid.dt
    sigma = model.amplitude.on(grid)
    decay = model.decay.on(grid)
    incr = sigma * dy - (0.5 * sigma**2 + decay) * dt
    log_p1 = _log(model.initial_prob[1]) + _prepend_zero(np.cumsum(incr, axis=-1))
    log_p0 = _log_integral(_log(model.initial_prob[0]), _log(decay * dt), log_p1)
    state = _state_from_logs(log_p0, log_p1, 0.0)
    return state, _trace_from_state(model, record, state)


def dmz_solve_no_decay(model: HypothesisModel, record: GaussianRecord):
    """Closed-form DMZ solution when the decay rate is identically zero.

    Solved in the shifted record ``dy' = dy - sigma dt``, where the ground
    mass is the geometric Brownian motion and the excited mass collects
    the excitation flow. The log mass is shifted back to the null
    reference by ``sum sigma dy - sigma^2 dt / 2``.
    """
    if not model.decay.is_zero():
        raise ModelError("dmz_solve_no_decay requires a zero decay rate")
    grid, dy, dt = record.grid, record.dy, record.grid.dt
    sigma = model.amplitude.on(grid)
    exc = model.excitation.on(grid)
    incr = -sigma * dy + (0.5 * sigma**2 - exc) * dt
    log_p0 = _log(model.initial_prob[0]) + _prepend_zero(np.cumsum(incr, axis=-1))
    log_p1 = _log_integral(_log(model.initial_prob[1]), _log(exc * dt), log_p0)
    shift = _prepend_zero(np.cumsum(sigma * dy - 0.5 * sigma**2 * dt, axis=-1))
    state = _state_from_logs(log_p0, log_p1, shift)
    return state, _trace_from_state(model, record, state)


def _trace_from_state(model, record, state) -> LLRTrace:
    sigma_pts = model.amplitude.at_points(record.grid)
    mu = estimator_mu(state, sigma_pts)
    return LLRTrace(record.grid, correlate(mu, record.dy, record.grid.dt), mu)


def filter_and_llr(model: HypothesisModel, record: GaussianRecord):
    """Filter path and LLR trace from one pass over the record.

    The closed forms are used when the excitation (then decay) rate is
    identically zero; otherwise the numeric split-step filter runs.
    """
    if model.excitation.is_zero():
        return dmz_solve_no_excitation(model, record)
    if model.decay.is_zero():
        return dmz_solve_no_decay(model, record)
    state = dmz_filter_numeric(model, record)
    return state, _trace_from_state(model, record, state)


def llr_estimator_correlator(model: HypothesisModel, record: GaussianRecord) -> LLRTrace:
    """Log-likelihood ratio of ``model`` against the null for ``record``.

    ``llr_{k+1} = llr_k + mu_k dy_k - dt mu_k^2 / 2`` where ``mu_k`` is
    the causal estimate at ``t_k``, computed before ``dy_k`` is used.
    """
    if model.amplitude.is_zero():
        shape = record.dy.shape[:-1] + (record.grid.K + 1,)
        return LLRTrace(record.grid, np.zeros(shape), np.zeros(shape))
    trace = filter_and_llr(model, record)[1]
    if not np.all(np.isfinite(trace.llr)):
        raise InvariantBreach("non-finite log-likelihood ratio")
    return trace
