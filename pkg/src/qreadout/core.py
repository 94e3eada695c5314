"""Hidden two-state Markov model of the qubit population.

Time is discretized on a uniform :class:`TimeGrid`. Every time-dependent
quantity (rates, amplitudes, baseline intensities) is piecewise constant:
one value per step ``[t_k, t_{k+1})``. With that convention the forward
Kolmogorov evolution over one step is an exact 2x2 matrix exponential,
so the Markov chain itself contributes no discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels

ArrayLike = Union[float, Sequence[float], np.ndarray]
SeedLike = Union[int, np.random.Generator, None]

_MASK64 = (1 << 64) - 1
_UNIFORM_BLOCK = 1 << 22


class ModelError(ValueError):
    """A model, grid or record violates one of its invariants."""


class InvariantBreach(RuntimeError):
    """A numerical invariant failed in the middle of a computation."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(root: int, *indices: int) -> int:
    """Derive a child seed from ``root`` and a path of integer indices.

    Each index is added to the running state and mixed, so seeds for
    different trials or sub-streams are decorrelated and independent of
    how work is later scheduled.
    """
    state = splitmix64(int(root) & _MASK64)
    for i in indices:
        state = splitmix64((state + int(i)) & _MASK64)
    return state


def make_rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k*dt`` on ``[0, T]`` with ``K`` steps."""

    T: float
    K: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ModelError(f"horizon T must be positive and finite, got {self.T}")
        if int(self.K) != self.K or self.K < 1:
            raise ModelError(f"step count K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def times(self) -> np.ndarray:
        """The ``K + 1`` grid points."""
        return np.linspace(0.0, self.T, self.K + 1)

    def check_count_rate(self, max_intensity: float, limit: float = 0.1) -> None:
        """Refuse grids on which a Bernoulli count step would be too coarse."""
        if max_intensity * self.dt > limit:
            k_min = int(np.ceil(max_intensity * self.T / limit))
            raise ModelError(
                f"intensity*dt = {max_intensity * self.dt:.3g} exceeds {limit}; "
                f"use at least K = {k_min} steps"
            )


class Schedule:
    """Piecewise-constant function of time, one value per grid step.

    ``values`` is either a scalar (constant in time) or a 1-D array whose
    length must equal the number of steps of the grid it is used on.
    """

    kind = "schedule"

    def __init__(self, values: ArrayLike | "Schedule"):
        if isinstance(values, Schedule):
            values = values.values
        arr = np.array(values, dtype=float)
        if arr.ndim > 1:
            raise ModelError(f"{self.kind} must be a scalar or 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ModelError(f"{self.kind} contains non-finite values")
        arr.setflags(write=False)
        self.values = arr
        self._check()

    def _check(self) -> None:
        pass

    @property
    def is_constant(self) -> bool:
        return self.values.ndim == 0

    def on(self, grid: TimeGrid) -> np.ndarray:
        """Values on each of the ``K`` steps of ``grid``."""
        if self.is_constant:
            return np.full(grid.K, float(self.values))
        if self.values.shape[0] != grid.K:
            raise ModelError(
                f"{self.kind} has {self.values.shape[0]} entries, grid has {grid.K} steps"
            )
        return np.asarray(self.values)

    def at_points(self, grid: TimeGrid) -> np.ndarray:
        """Values at the ``K + 1`` grid points; the last step is held to ``T``."""
        v = self.on(grid)
        return np.append(v, v[-1])

    def is_zero(self) -> bool:
        return bool(np.all(self.values == 0.0))

    def max(self) -> float:
        return float(np.max(self.values))

    def min(self) -> float:
        return float(np.min(self.values))

    def __repr__(self):
        if self.is_constant:
            return f"{type(self).__name__}({float(self.values)!r})"
        return f"{type(self).__name__}(<{self.values.shape[0]} steps>)"

    def __eq__(self, other):
        return (
            isinstance(other, Schedule)
            and self.values.shape == other.values.shape
            and bool(np.all(self.values == other.values))
        )

    __hash__ = None


class RateSchedule(Schedule):
    """Nonnegative rate (units 1/time)."""

    kind = "rate"

    def _check(self) -> None:
        if np.any(self.values < 0):
            raise ModelError("rates must be nonnegative")


@dataclass(frozen=True, eq=False)
class HypothesisModel:
    """Statistics of the hidden population under one hypothesis.

    Parameters
    ----------
    label : str
        Name of the hypothesis, used for output file names.
    decay, excitation : RateSchedule or float or array
        Transition rates 1 -> 0 and 0 -> 1.
    amplitude : Schedule or float or array
        Normalized signal amplitude: sigma for the Gaussian channel
        (any sign), alpha for the counting channel (alpha > -1).
    initial_prob : pair of float
        ``(P(x=0, t=0), P(x=1, t=0))``.
    """

    label: str = "H"
    decay: RateSchedule | ArrayLike = 0.0
    excitation: RateSchedule | ArrayLike = 0.0
    amplitude: Schedule | ArrayLike = 0.0
    initial_prob: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "decay", RateSchedule(self.decay))
        object.__setattr__(self, "excitation", RateSchedule(self.excitation))
        object.__setattr__(self, "amplitude", Schedule(self.amplitude))
        p = tuple(float(v) for v in np.asarray(self.initial_prob, dtype=float).ravel())
        if len(p) != 2:
            raise ModelError("initial_prob must have two entries")
        if not all(0.0 <= v <= 1.0 for v in p) or abs(p[0] + p[1] - 1.0) > 1e-12:
            raise ModelError(f"initial_prob must be a probability vector, got {p}")
        object.__setattr__(self, "initial_prob", p)

    @property
    def has_transitions(self) -> bool:
        return not (self.decay.is_zero() and self.excitation.is_zero())

    def check_poisson_amplitude(self) -> None:
        if self.amplitude.min() <= -1.0:
            raise ModelError(
                f"hypothesis {self.label!r}: counting amplitude alpha must satisfy alpha > -1"
            )

    def replace(self, **changes) -> "HypothesisModel":
        fields = dict(
            label=self.label,
            decay=self.decay,
            excitation=self.excitation,
            amplitude=self.amplitude,
            initial_prob=self.initial_prob,
        )
        fields.update(changes)
        return HypothesisModel(**fields)


@dataclass(frozen=True, eq=False)
class HiddenTrajectory:
    """Population samples ``x(t_k)`` at the ``K + 1`` grid points.

    ``x`` may carry leading batch dimensions, one trajectory per row.
    """

    grid: TimeGrid
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.shape[-1] != self.grid.K + 1:
            raise ModelError(f"trajectory length {x.shape[-1]} != K + 1 = {self.grid.K + 1}")
        if not np.all((x == 0) | (x == 1)):
            raise ModelError("trajectory entries must be 0 or 1")
        object.__setattr__(self, "x", x.astype(np.int8, copy=False))


def transition_matrices(model: HypothesisModel, grid: TimeGrid) -> np.ndarray:
    """Per-step transition matrices ``exp(dt * L_k)``, shape ``(K, 2, 2)``.

    The generator ``L = [[-a, b], [a, -b]]`` (``a`` excitation, ``b`` decay)
    satisfies ``L @ L = -(a + b) L``, hence
    ``exp(t L) = I + (1 - exp(-(a + b) t)) / (a + b) * L``.
    Columns are the "from" state, so each column sums to one.
    """
    a = model.excitation.on(grid)
    b = model.decay.on(grid)
    s = a + b
    dt = grid.dt
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(s > 0, -np.expm1(-s * dt) / s, dt)
    m = np.empty((grid.K, 2, 2))
    m[:, 0, 0] = 1.0 - c * a
    m[:, 1, 0] = c * a
    m[:, 0, 1] = c * b
    m[:, 1, 1] = 1.0 - c * b
    return m


def kolmogorov_propagate(model: HypothesisModel, grid: TimeGrid) -> np.ndarray:
    """Unconditional state probabilities at every grid point.

    Returns
    -------
    ndarray, shape (K + 1, 2)
        Row ``k`` is ``(P(x=0, t_k), P(x=1, t_k))``.
    """
    m = transition_matrices(model, grid)
    out = np.empty((grid.K + 1, 2))
    p0, p1 = model.initial_prob
    out[0] = p0, p1
    for k in range(grid.K):
        mk = m[k]
        p0, p1 = mk[0, 0] * p0 + mk[0, 1] * p1, mk[1, 0] * p0 + mk[1, 1] * p1
        out[k + 1] = p0, p1
    return out


def sample_trajectories(
    model: HypothesisModel, grid: TimeGrid, n: int, seed: SeedLike = None
) -> HiddenTrajectory:
    """Draw ``n`` independent trajectories, returned as one batch of shape (n, K + 1)."""
    rng = make_rng(seed)
    x = np.empty((n, grid.K + 1), dtype=np.int8)
    x[:, 0] = rng.random(n) < model.initial_prob[1]
    if not model.has_transitions:
        x[:, 1:] = x[:, :1]
        return HiddenTrajectory(grid, x)
    m = transition_matrices(model, grid)
    # uniforms are drawn in fixed row blocks to bound memory
    rows = max(1, _UNIFORM_BLOCK // grid.K)
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        u = rng.random((stop - start, grid.K))
        x[start:stop] = _kernels.markov_sample(x[start:stop, 0].copy(), m, u)
    return HiddenTrajectory(grid, x)


def sample_trajectory(model: HypothesisModel, grid: TimeGrid, seed: SeedLike = None) -> HiddenTrajectory:
    """Draw one trajectory; deterministic for a given integer seed."""
    batch = sample_trajectories(model, grid, 1, seed)
    return HiddenTrajectory(grid, batch.x[0])


def empirical_occupation(
    trajectories: HiddenTrajectory | Iterable[HiddenTrajectory] | np.ndarray,
) -> np.ndarray:
    """Per-time-point frequencies ``(1 - f, f)`` with ``f`` the fraction with x = 1."""
    if isinstance(trajectories, HiddenTrajectory):
        x = trajectories.x.reshape(-1, trajectories.x.shape[-1])
    elif isinstance(trajectories, np.ndarray):
        x = trajectories.reshape(-1, trajectories.shape[-1])
    else:
        rows = [np.atleast_2d(t.x) for t in trajectories]
        if not rows:
            raise ModelError("empirical_occupation needs at least one trajectory")
        if len({r.shape[-1] for r in rows}) != 1:
            raise ModelError("trajectories are not on a common grid")
        x = np.concatenate(rows, axis=0)
    if x.shape[0] == 0:
        raise ModelError("empirical_occupation needs at least one trajectory")
    f = x.mean(axis=0, dtype=float)
    return np.stack([1.0 - f, f], axis=-1)
