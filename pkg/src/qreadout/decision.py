"""Minimum-error Bayesian decisions over M hypotheses and error-rate estimates."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    HypothesisModel,
    ModelError,
    RateSchedule,
    TimeGrid,
    derive_seed,
    make_rng,
    sample_trajectories,
)
from .gaussian import GaussianRecord, llr_estimator_correlator, simulate_gaussian
from .poisson import CountRecord, llr_poisson, simulate_poisson

CHANNELS = ("gaussian", "poisson")

#: Trials per independently seeded block in :func:`monte_carlo_error_rate`.
BLOCK_SIZE = 1000


@dataclass(frozen=True, eq=False)
class HypothesisSet:
    """Hypotheses with their priors; ``models[0]`` is the null (zero amplitude)."""

    models: Sequence[HypothesisModel]
    priors: Sequence[float] | None = None

    def __post_init__(self):
        models = tuple(self.models)
        if len(models) < 2:
            raise ModelError("at least two hypotheses are required")
        if not models[0].amplitude.is_zero():
            raise ModelError("hypothesis 0 is the null and must have zero amplitude")
        labels = [m.label for m in models]
        if len(set(labels)) != len(labels):
            raise ModelError(f"hypothesis labels must be unique, got {labels}")
        if self.priors is None:
            priors = np.full(len(models), 1.0 / len(models))
        else:
            priors = np.asarray(self.priors, dtype=float)
        if priors.shape != (len(models),):
            raise ModelError("one prior per hypothesis is required")
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise ModelError(f"priors must be a probability vector, got {priors.tolist()}")
        priors.setflags(write=False)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "priors", priors)

    def __len__(self):
        return len(self.models)


@dataclass(frozen=True, eq=False)
class DecisionResult:
    chosen: int
    posteriors: np.ndarray
    llrs: np.ndarray


def _log_priors(priors: np.ndarray) -> np.ndarray:
    if np.any(priors <= 0):
        raise ModelError("every tested hypothesis needs a positive prior")
    return np.log(priors)


def decide(hset: HypothesisSet, llrs) -> DecisionResult:
    """Maximum a posteriori choice from final log-likelihood ratios.

    Posteriors are the softmax of ``llr_m + ln prior_m``; ties go to the
    lowest index.
    """
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape != (len(hset),):
        raise ModelError(f"expected {len(hset)} log-likelihood ratios")
    if llrs[0] != 0.0:
        raise ModelError("the null hypothesis has log-likelihood ratio 0 by definition")
    score = llrs + _log_priors(hset.priors)
    w = np.exp(score - score.max())
    post = w / w.sum()
    return DecisionResult(int(np.argmax(score)), post, llrs)


def decide_batch(priors, llrs: np.ndarray) -> np.ndarray:
    """Vectorized MAP choice for a ``(N, M)`` array of final LLRs."""
    return np.argmax(llrs + _log_priors(np.asarray(priors, float)), axis=-1)


def matched_filter_pe(snr: float, log_prior_ratio: float = 0.0) -> tuple[float, float, float]:
    """Minimum error probability for a known signal in white Gaussian noise.

    Parameters
    ----------
    snr : float
        Integrated squared normalized amplitude, ``sum sigma_1^2 dt``.
    log_prior_ratio : float
        ``ln(P(H1) / P(H0))``.

    Returns
    -------
    (pe_min, p_plus, p_minus)
        ``p_plus`` / ``p_minus`` are ``erfc(sqrt(snr/8) (1 +/- 2 lambda/snr)) / 2``.
        ``p_minus`` is the error probability given H0 (the threshold moves
        toward H0 when H1 is a priori likelier) and ``p_plus`` the error
        probability given H1, so ``pe_min = p_minus P(H0) + p_plus P(H1)``.
    """
    if snr < 0:
        raise ModelError("snr must be nonnegative")
    lam = float(log_prior_ratio)
    prior0 = 1.0 / (1.0 + math.exp(lam))
    prior1 = 1.0 - prior0
    if snr == 0:
        # limit of the erfc arguments: the rule picks the larger prior
        p_plus = 0.5 if lam == 0 else float(lam < 0)
        p_minus = 0.5 if lam == 0 else float(lam > 0)
        return p_minus * prior0 + p_plus * prior1, p_plus, p_minus
    root = math.sqrt(snr / 8.0)
    p_plus = 0.5 * math.erfc(root * (1.0 + 2.0 * lam / snr))
    p_minus = 0.5 * math.erfc(root * (1.0 - 2.0 * lam / snr))
    return p_minus * prior0 + p_plus * prior1, p_plus, p_minus


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    pe_hat: float
    stderr: float
    confusion: np.ndarray
    counts: np.ndarray
    trials: int
    root_seed: int

    def as_dict(self) -> dict:
        return {
            "Pe_hat": self.pe_hat,
            "stderr": self.stderr,
            "confusion": self.confusion.tolist(),
            "counts": self.counts.tolist(),
            "trials": self.trials,
            "seed": self.root_seed,
        }


def _check_channel(hset: HypothesisSet, channel: str, lambda0) -> None:
    if channel not in CHANNELS:
        raise ModelError(f"channel must be one of {CHANNELS}, got {channel!r}")
    if channel == "poisson":
        if lambda0 is None:
            raise ModelError("the poisson channel needs a baseline intensity lambda0")
        for m in hset.models:
            m.check_poisson_amplitude()
    elif lambda0 is not None:
        raise ModelError("lambda0 is only meaningful for the poisson channel")


def _run_block(hset, channel, grid, lambda0, root_seed, block, n):
    rng = make_rng(derive_seed(root_seed, block))
    M = len(hset)
    truth = rng.choice(M, size=n, p=hset.priors)
    if channel == "gaussian":
        obs = np.empty((n, grid.K))
    else:
        obs = np.empty((n, grid.K), dtype=np.int8)
    for m, model in enumerate(hset.models):
        idx = np.flatnonzero(truth == m)
        if idx.size == 0:
            continue
        traj = sample_trajectories(model, grid, idx.size, rng)
        if channel == "gaussian":
            obs[idx] = simulate_gaussian(model, traj, grid, rng).dy
        else:
            obs[idx] = simulate_poisson(model, traj, lambda0, grid, rng).dn
    llrs = np.zeros((n, M))
    if channel == "gaussian":
        record = GaussianRecord(grid, obs)
        for m, model in enumerate(hset.models[1:], start=1):
            llrs[:, m] = llr_estimator_correlator(model, record).final
    else:
        record = CountRecord(grid, obs, lambda0)
        for m, model in enumerate(hset.models[1:], start=1):
            llrs[:, m] = llr_poisson(model, record).final
    chosen = decide_batch(hset.priors, llrs)
    confusion = np.zeros((M, M), dtype=np.int64)
    np.add.at(confusion, (truth, chosen), 1)
    return confusion


def _run_block_args(args):
    return _run_block(*args)


def monte_carlo_error_rate(
    hset: HypothesisSet,
    channel: str,
    trials: int,
    grid: TimeGrid,
    root_seed: int,
    lambda0=None,
    workers: int = 1,
) -> MonteCarloResult:
    """Estimate the average error probability of the MAP rule by simulation.

    Trials are split into blocks of :data:`BLOCK_SIZE`; block ``b`` draws
    everything from a generator seeded with ``derive_seed(root_seed, b)``,
    so the result does not depend on ``workers``. Each trial draws its
    true hypothesis from the priors, a hidden trajectory and a record,
    then decides from all M log-likelihood ratios.
    """
    if trials < 1:
        raise ModelError("at least one trial is required")
    _check_channel(hset, channel, lambda0)
    if lambda0 is not None:
        lambda0 = RateSchedule(lambda0)
    jobs = []
    for block, start in enumerate(range(0, trials, BLOCK_SIZE)):
        n = min(BLOCK_SIZE, trials - start)
        jobs.append((hset, channel, grid, lambda0, root_seed, block, n))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block_args, jobs))
    else:
        parts = [_run_block(*job) for job in jobs]
    confusion = np.sum(parts, axis=0)
    errors = trials - int(np.trace(confusion))
    pe = errors / trials
    return MonteCarloResult(
        pe_hat=pe,
        stderr=math.sqrt(pe * (1.0 - pe) / trials),
        confusion=confusion,
        counts=confusion.sum(axis=1),
        trials=trials,
        root_seed=int(root_seed),
    )
