"""Linear stochastic master equation for a continuously measured qubit.

The unnormalized conditional density matrix ``f`` obeys

    df = dt L- D[s-] f + dt L+ D[s+] f + dt Lx D[x] f + (dy sigma / 2)(x f + f x)

with ``D[c] f = c f c^+ - (c^+ c f + f c^+ c) / 2`` and ``x = diag(0, 1)``.
Its diagonal never sees ``f01``; this module integrates the full matrix
and measures how closely the diagonal reproduces the classical filter.

Two discretizations are offered. ``"euler"`` is Euler-Maruyama on all
entries. ``"split"`` composes exact positive maps: the amplitude-damping
channel (the classical ``exp(dt L)`` on the diagonal), the excess
dephasing ``exp(-(Lx/2 - sigma^2/8) dt)`` on ``f01``, and the measurement
operator ``diag(1, exp((sigma dy - sigma^2 dt / 2) / 2))``; its diagonal
is the classical split-step filter, operation for operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    HypothesisModel,
    InvariantBreach,
    ModelError,
    RateSchedule,
    Schedule,
    TimeGrid,
    transition_matrices,
)
from .gaussian import (
    GaussianRecord,
    _dmz_update,
    _dmz_update_euler,
    dmz_filter_numeric,
    estimator_mu,
)

POSITIVITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConditionalDensityMatrix:
    f00: float
    f11: float
    f01: complex = 0j
    log_scale: float = 0.0

    def __post_init__(self):
        if self.f00 < 0 or self.f11 < 0:
            raise ModelError("diagonal entries must be nonnegative")
        if self.f00 + self.f11 <= 0:
            raise ModelError("density matrix has zero trace")
        if abs(self.f01) ** 2 > self.f00 * self.f11 + POSITIVITY_TOL:
            raise ModelError("|f01|^2 exceeds f00 f11: matrix is not positive")

    @property
    def trace(self) -> float:
        return self.f00 + self.f11

    def matrix(self) -> np.ndarray:
        return np.array([[self.f00, self.f01], [np.conj(self.f01), self.f11]])

    def normalized(self) -> "ConditionalDensityMatrix":
        tr = self.trace
        return ConditionalDensityMatrix(
            self.f00 / tr, self.f11 / tr, self.f01 / tr, self.log_scale + float(np.log(tr))
        )


@dataclass(frozen=True, eq=False)
class QubitRates:
    """Decay, excitation and dephasing rates plus the measurement strength.

    Each field may be a constant or a per-step array. Dephasing must be at
    least ``sigma^2 / 4`` at every step.
    """

    decay: RateSchedule | float = 0.0
    excitation: RateSchedule | float = 0.0
    dephasing: RateSchedule | float = 0.0
    sigma: Schedule | float = 0.0

    def __post_init__(self):
        for name in ("decay", "excitation", "dephasing"):
            object.__setattr__(self, name, RateSchedule(getattr(self, name)))
        object.__setattr__(self, "sigma", Schedule(self.sigma))
        try:
            lx, s = np.broadcast_arrays(self.dephasing.values, self.sigma.values)
        except ValueError as exc:
            raise ModelError("dephasing and sigma schedules have different lengths") from exc
        if np.any(lx < s**2 / 4):
            raise ModelError("dephasing rate must satisfy Lx >= sigma^2 / 4")

    @classmethod
    def from_model(cls, model: HypothesisModel, dephasing=None) -> "QubitRates":
        sigma = model.amplitude.values
        if dephasing is None:
            dephasing = sigma**2 / 4
        return cls(model.decay, model.excitation, dephasing, sigma)

    def classical_model(self, initial_prob) -> HypothesisModel:
        return HypothesisModel(
            "classical", self.decay, self.excitation, self.sigma, initial_prob
        )


def _check_positive(f00, f11, f01, k):
    if not (np.isfinite(f00) and np.isfinite(f11) and np.isfinite(f01)):
        raise InvariantBreach("density matrix became non-finite", k)
    if f00 < 0 or f11 < 0 or abs(f01) ** 2 > f00 * f11 + POSITIVITY_TOL:
        raise InvariantBreach("density matrix lost positivity; reduce dt", k)


def _step(f00, f11, f01, mk, a, b, lx, sigma, dy, dt, scheme):
    """One step; returns unit-trace entries and the log of the new trace."""
    if scheme == "split":
        n0, n1, lt = _dmz_update(f00, f11, mk, sigma, dy, dt)
        g = np.exp(0.5 * (sigma * dy - 0.5 * sigma * sigma * dt))
        damp = np.exp(-0.5 * (a + b) * dt - (0.5 * lx - sigma * sigma / 8.0) * dt)
        c = f01 * damp * g / np.exp(lt)
    elif scheme == "euler":
        n0, n1, lt = _dmz_update_euler(f00, f11, a, b, sigma, dy, dt)
        c = (f01 + f01 * (-0.5 * (a + b + lx) * dt + 0.5 * sigma * dy)) / np.exp(lt)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return n0, n1, c, lt


def sme_step(
    rho: ConditionalDensityMatrix,
    rates: QubitRates,
    dy_k: float,
    k: int,
    grid: TimeGrid,
    scheme: str = "split",
) -> ConditionalDensityMatrix:
    """Advance the master equation over step ``k``; the result has unit trace."""
    model = rates.classical_model((0.5, 0.5))
    mk = transition_matrices(model, grid)[k]
    n0, n1, c, lt = _step(
        rho.f00,
        rho.f11,
        complex(rho.f01),
        mk,
        rates.excitation.on(grid)[k],
        rates.decay.on(grid)[k],
        rates.dephasing.on(grid)[k],
        rates.sigma.on(grid)[k],
        dy_k,
        grid.dt,
        scheme,
    )
    _check_positive(n0, n1, c, k)
    return ConditionalDensityMatrix(float(n0), float(n1), complex(c), rho.log_scale + float(lt))


@dataclass(frozen=True, eq=False)
class SMEPath:
    """Unit-trace entries and log trace at the K + 1 grid points."""

    f00: np.ndarray
    f11: np.ndarray
    f01: np.ndarray
    log_scale: np.ndarray


def integrate_sme(
    rates: QubitRates,
    record: GaussianRecord,
    rho0: ConditionalDensityMatrix,
    scheme: str = "split",
) -> SMEPath:
    grid = record.grid
    dy = np.asarray(record.dy)
    if dy.ndim != 1:
        raise ModelError("integrate_sme takes a single record")
    rho0 = rho0.normalized()
    m = transition_matrices(rates.classical_model((0.5, 0.5)), grid)
    a = rates.excitation.on(grid)
    b = rates.decay.on(grid)
    lx = np.broadcast_to(rates.dephasing.on(grid), (grid.K,))
    sig = rates.sigma.on(grid)
    out = np.empty((4, grid.K + 1))
    off = np.empty(grid.K + 1, dtype=complex)
    f00, f11, f01, acc = rho0.f00, rho0.f11, complex(rho0.f01), rho0.log_scale
    out[:, 0] = f00, f11, 0.0, acc
    off[0] = f01
    for k in range(grid.K):
        f00, f11, f01, lt = _step(f00, f11, f01, m[k], a[k], b[k], lx[k], sig[k], dy[k], grid.dt, scheme)
        _check_positive(f00, f11, f01, k)
        acc += lt
        out[0, k + 1], out[1, k + 1], out[3, k + 1] = f00, f11, acc
        off[k + 1] = f01
    return SMEPath(out[0], out[1], off, out[3])


def quantum_estimator(rho, sigma_t):
    """``sigma f11 / (f00 + f11)``; the coherence ``f01`` plays no part."""
    tr = rho.f00 + rho.f11
    if np.any(np.asarray(tr) <= 0):
        raise ModelError("estimator undefined for zero trace")
    return sigma_t * rho.f11 / tr


@dataclass(frozen=True, eq=False)
class DecouplingReport:
    offdiag_influence: float
    mu_gap: float
    diag_gap: float
    sweep: list = field(default_factory=list)

    @property
    def sweep_spread(self) -> float:
        gaps = [row["mu_gap"] for row in self.sweep]
        return max(gaps) - min(gaps) if gaps else 0.0

    def as_dict(self) -> dict:
        return {
            "offdiag_influence_max": self.offdiag_influence,
            "mu_gap_max": self.mu_gap,
            "diag_gap_max": self.diag_gap,
            "sweep": self.sweep,
            "sweep_spread": self.sweep_spread,
        }


DEFAULT_SWEEP = (1.0, 2.5, 5.0, 7.5, 10.0)


def _mu_gap(rates, record, rho0, scheme):
    path = integrate_sme(rates, record, rho0, scheme)
    rho0n = rho0.normalized()
    model = rates.classical_model((rho0n.f00, rho0n.f11))
    classical = dmz_filter_numeric(model, record, scheme)
    sig = rates.sigma.at_points(record.grid)
    mu_q = quantum_estimator(path, sig)
    mu_c = estimator_mu(classical, sig)
    diag = np.stack([path.f00, path.f11], axis=-1)
    return path, float(np.max(np.abs(mu_q - mu_c))), float(np.max(np.abs(diag - classical.p)))


def decoupling_report(
    rates: QubitRates,
    record: GaussianRecord,
    rho0: ConditionalDensityMatrix,
    scheme: str = "split",
    sweep=DEFAULT_SWEEP,
) -> DecouplingReport:
    """Measure how far the quantum diagonal strays from the classical filter.

    ``offdiag_influence`` compares the full integration against one started
    with ``f01 = 0`` (any difference would be feedback from the coherence).
    ``mu_gap`` and ``diag_gap`` compare against the classical DMZ filter at
    the same discretization. ``sweep`` repeats the estimator comparison with
    the dephasing rate set to each factor times ``max(sigma^2) / 4``.
    """
    full, mu_gap, diag_gap = _mu_gap(rates, record, rho0, scheme)
    rho_diag = ConditionalDensityMatrix(rho0.f00, rho0.f11, 0j, rho0.log_scale)
    bare = integrate_sme(rates, record, rho_diag, scheme)
    influence = max(
        float(np.max(np.abs(full.f00 - bare.f00))),
        float(np.max(np.abs(full.f11 - bare.f11))),
        float(np.max(np.abs(full.log_scale - bare.log_scale))),
    )
    s2 = float(np.max(rates.sigma.values**2))
    rows = []
    for factor in sweep:
        swept = QubitRates(rates.decay, rates.excitation, factor * s2 / 4.0, rates.sigma)
        rows.append({"factor": float(factor), "dephasing": factor * s2 / 4.0,
                     "mu_gap": _mu_gap(swept, record, rho0, scheme)[1]})
    return DecouplingReport(influence, mu_gap, diag_gap, rows)
