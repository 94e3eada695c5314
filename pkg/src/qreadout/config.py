"""Experiment configuration: JSON text in, validated :class:`ExperimentConfig` out.

Every violation found is reported together in one :class:`ConfigError`.
Unknown keys are errors so that typos cannot silently fall back to
defaults. See README.md for the full key reference.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from numbers import Integral, Real
from typing import Any

import numpy as np

from .core import HypothesisModel, ModelError, TimeGrid
from .decision import CHANNELS, HypothesisSet
from .poisson import MAX_RATE_DT
from .quantum import QubitRates

MODES = ("simulate", "filter", "decide", "montecarlo", "verify-quantum", "verify-limit")

_TOP_KEYS = {
    "mode", "channel", "grid", "hypotheses", "priors", "lambda0", "seed", "trials",
    "truth", "record", "workers", "quantum", "limit",
}
_GRID_KEYS = {"T", "K"}
_HYP_KEYS = {"label", "decay", "excitation", "amplitude", "initial_prob"}
_QUANTUM_KEYS = {"dephasing", "coherence", "scheme", "sweep"}
_LIMIT_KEYS = {"lambda0s", "trials"}
_LABEL = re.compile(r"^[A-Za-z0-9_.-]+$")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True, eq=False)
class QuantumSettings:
    dephasing: Any = None
    coherence: complex = 0j
    scheme: str = "split"
    sweep: tuple = (1.0, 2.5, 5.0, 7.5, 10.0)


@dataclass(frozen=True, eq=False)
class LimitSettings:
    lambda0s: tuple = (1e2, 1e3, 1e4)
    trials: int = 100


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    mode: str
    channel: str
    grid: TimeGrid
    hypotheses: HypothesisSet
    lambda0: float | None = None
    seed: int = 0
    trials: int = 1000
    truth: int = 1
    record: str | None = None
    workers: int = 1
    quantum: QuantumSettings = field(default_factory=QuantumSettings)
    limit: LimitSettings = field(default_factory=LimitSettings)

    @property
    def truth_model(self) -> HypothesisModel:
        return self.hypotheses.models[self.truth]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields["seed"] = int(seed)
        return ExperimentConfig(**fields)

    def echo(self) -> dict:
        """Normalized, JSON-ready view of the effective configuration."""

        def sched(s):
            return float(s.values) if s.is_constant else s.values.tolist()

        out = {
            "mode": self.mode,
            "channel": self.channel,
            "grid": {"T": self.grid.T, "K": self.grid.K},
            "hypotheses": [
                {
                    "label": m.label,
                    "decay": sched(m.decay),
                    "excitation": sched(m.excitation),
                    "amplitude": sched(m.amplitude),
                    "initial_prob": list(m.initial_prob),
                }
                for m in self.hypotheses.models
            ],
            "priors": self.hypotheses.priors.tolist(),
            "seed": self.seed,
            "trials": self.trials,
            "truth": self.truth,
            "workers": self.workers,
        }
        if self.lambda0 is not None:
            out["lambda0"] = self.lambda0
        if self.record is not None:
            out["record"] = self.record
        if self.mode == "verify-quantum":
            q = self.quantum
            out["quantum"] = {
                "dephasing": q.dephasing if q.dephasing is None or np.isscalar(q.dephasing) else list(q.dephasing),
                "coherence": [q.coherence.real, q.coherence.imag],
                "scheme": q.scheme,
                "sweep": list(q.sweep),
            }
        if self.mode == "verify-limit":
            out["limit"] = {"lambda0s": list(self.limit.lambda0s), "trials": self.limit.trials}
        return out


def _is_number(v) -> bool:
    return isinstance(v, Real) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, Integral) and not isinstance(v, bool)


def _schedule(value, where, errors):
    if _is_number(value):
        return float(value)
    if isinstance(value, list) and value and all(_is_number(v) for v in value):
        return [float(v) for v in value]
    errors.append(f"{where}: expected a number or a non-empty list of numbers")
    return None


def _unknown(d: dict, allowed: set, where: str, errors: list) -> None:
    for key in sorted(set(d) - allowed):
        errors.append(f"{where}: unknown key {key!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment description."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be an object"])
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    errors: list[str] = []
    _unknown(raw, _TOP_KEYS, "config", errors)

    mode = raw.get("mode")
    if mode not in MODES:
        errors.append(f"mode: must be one of {list(MODES)}, got {mode!r}")
    channel = raw.get("channel")
    if channel not in CHANNELS:
        errors.append(f"channel: must be one of {list(CHANNELS)}, got {channel!r}")

    grid = None
    g = raw.get("grid")
    if not isinstance(g, dict):
        errors.append("grid: required object with keys T and K")
    else:
        _unknown(g, _GRID_KEYS, "grid", errors)
        T, K = g.get("T"), g.get("K")
        if not (_is_number(T) and T > 0):
            errors.append("grid.T: must be a positive number")
        if not (_is_int(K) and K >= 1):
            errors.append("grid.K: must be a positive integer")
        if _is_number(T) and T > 0 and _is_int(K) and K >= 1:
            grid = TimeGrid(T, K)

    models = []
    hyps = raw.get("hypotheses")
    if not isinstance(hyps, list) or len(hyps) < 2:
        errors.append("hypotheses: required list of at least two hypotheses")
        hyps = []
    for m, h in enumerate(hyps):
        where = f"hypotheses[{m}]"
        if not isinstance(h, dict):
            errors.append(f"{where}: must be an object")
            continue
        _unknown(h, _HYP_KEYS, where, errors)
        label = h.get("label", f"H{m}")
        if not isinstance(label, str) or not _LABEL.match(label):
            errors.append(f"{where}.label: must match [A-Za-z0-9_.-]+")
            label = f"H{m}"
        n_before = len(errors)
        sched = {
            key: _schedule(h.get(key, 0.0), f"{where}.{key}", errors)
            for key in ("decay", "excitation", "amplitude")
        }
        init = h.get("initial_prob", [1.0, 0.0] if m == 0 else [0.0, 1.0])
        if not (isinstance(init, list) and len(init) == 2 and all(_is_number(v) for v in init)):
            errors.append(f"{where}.initial_prob: must be a list of two numbers")
        if len(errors) > n_before:
            continue
        if grid is not None:
            for key, v in sched.items():
                if isinstance(v, list) and len(v) != grid.K:
                    errors.append(f"{where}.{key}: per-step list needs K = {grid.K} entries, got {len(v)}")
        try:
            models.append(HypothesisModel(label, sched["decay"], sched["excitation"], sched["amplitude"], tuple(init)))
        except ModelError as exc:
            errors.append(f"{where}: {exc}")

    priors = raw.get("priors")
    if priors is not None and not (isinstance(priors, list) and all(_is_number(p) for p in priors)):
        errors.append("priors: must be a list of numbers")
        priors = None
    hset = None
    if len(models) == len(hyps) and len(models) >= 2:
        try:
            hset = HypothesisSet(models, priors)
        except ModelError as exc:
            errors.append(f"hypotheses: {exc}")
        if hset is not None and np.any(hset.priors <= 0):
            errors.append("priors: every hypothesis needs a positive prior")

    lambda0 = raw.get("lambda0")
    if channel == "poisson":
        if not (_is_number(lambda0) and lambda0 > 0):
            errors.append("lambda0: the poisson channel needs a positive baseline intensity")
            lambda0 = None
        for m, model in enumerate(models):
            if model.amplitude.min() <= -1:
                errors.append(f"hypotheses[{m}].amplitude: counting amplitude alpha must satisfy alpha > -1")
        if lambda0 is not None and grid is not None and models:
            lam_max = lambda0 * max(1.0, 1.0 + max(m.amplitude.max() for m in models))
            if lam_max * grid.dt > MAX_RATE_DT:
                k_min = math.ceil(lam_max * grid.T / MAX_RATE_DT)
                errors.append(
                    f"grid.K: max intensity*dt = {lam_max * grid.dt:.3g} exceeds {MAX_RATE_DT}; "
                    f"use K >= {k_min}"
                )
    elif lambda0 is not None:
        errors.append("lambda0: only allowed when channel is 'poisson'")
        lambda0 = None

    seed = raw.get("seed", 0)
    if not (_is_int(seed) and 0 <= seed < 2**64):
        errors.append("seed: must be a nonnegative integer below 2**64")
        seed = 0
    trials = raw.get("trials", 1000)
    if not (_is_int(trials) and trials >= 1):
        errors.append("trials: must be a positive integer")
        trials = 1
    workers = raw.get("workers", 1)
    if not (_is_int(workers) and workers >= 1):
        errors.append("workers: must be a positive integer")
        workers = 1
    truth = raw.get("truth", len(hyps) - 1 if hyps else 1)
    if not (_is_int(truth) and 0 <= truth < max(len(hyps), 1)):
        errors.append("truth: must index one of the hypotheses")
        truth = 0
    record = raw.get("record")
    if record is not None and not isinstance(record, str):
        errors.append("record: must be a file path string")
        record = None

    quantum = _parse_quantum(raw.get("quantum", {}), errors)
    if mode == "verify-quantum":
        if channel != "gaussian":
            errors.append("channel: verify-quantum works on the gaussian channel")
        if grid is not None and 0 <= truth < len(models):
            _check_quantum(models[truth], grid, quantum, errors)
    limit = _parse_limit(raw.get("limit", {}), errors)
    if mode == "verify-limit":
        if channel != "gaussian":
            errors.append("channel: verify-limit maps a gaussian model onto counts; use channel 'gaussian'")
        if grid is not None and 0 <= truth < len(models):
            sigma_max = max(0.0, models[truth].amplitude.max())
            for lam in limit.lambda0s:
                lam_max = lam + sigma_max * math.sqrt(lam)
                if lam_max * grid.dt > MAX_RATE_DT:
                    errors.append(
                        f"limit.lambda0s: intensity {lam_max:.4g} needs K >= {math.ceil(lam_max * grid.T / MAX_RATE_DT)}"
                    )

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        mode=mode,
        channel=channel,
        grid=grid,
        hypotheses=hset,
        lambda0=None if lambda0 is None else float(lambda0),
        seed=int(seed),
        trials=int(trials),
        truth=int(truth),
        record=record,
        workers=int(workers),
        quantum=quantum,
        limit=limit,
    )


def _check_quantum(model, grid, q, errors) -> None:
    p0, p1 = model.initial_prob
    if abs(q.coherence) ** 2 > p0 * p1 + 1e-15:
        errors.append(
            f"quantum.coherence: |f01|^2 must not exceed P0 P1 = {p0 * p1:.6g} "
            f"for the initial state of hypothesis {model.label!r}"
        )
    if isinstance(q.dephasing, list) and len(q.dephasing) != grid.K:
        errors.append(f"quantum.dephasing: per-step list needs K = {grid.K} entries")
        return
    try:
        QubitRates.from_model(model, q.dephasing)
    except ModelError as exc:
        errors.append(f"quantum.dephasing: {exc}")


def _parse_quantum(q, errors) -> QuantumSettings:
    if not isinstance(q, dict):
        errors.append("quantum: must be an object")
        return QuantumSettings()
    _unknown(q, _QUANTUM_KEYS, "quantum", errors)
    dephasing = q.get("dephasing")
    if dephasing is not None:
        dephasing = _schedule(dephasing, "quantum.dephasing", errors)
    coh = q.get("coherence", [0.0, 0.0])
    if _is_number(coh):
        coh = [coh, 0.0]
    if not (isinstance(coh, list) and len(coh) == 2 and all(_is_number(v) for v in coh)):
        errors.append("quantum.coherence: must be a number or [real, imag]")
        coh = [0.0, 0.0]
    scheme = q.get("scheme", "split")
    if scheme not in ("split", "euler"):
        errors.append("quantum.scheme: must be 'split' or 'euler'")
    sweep = q.get("sweep", list(QuantumSettings.sweep))
    if not (isinstance(sweep, list) and all(_is_number(v) and v >= 1 for v in sweep)):
        errors.append("quantum.sweep: must be a list of factors >= 1")
        sweep = []
    return QuantumSettings(dephasing, complex(coh[0], coh[1]), scheme, tuple(float(v) for v in sweep))


def _parse_limit(d, errors) -> LimitSettings:
    if not isinstance(d, dict):
        errors.append("limit: must be an object")
        return LimitSettings()
    _unknown(d, _LIMIT_KEYS, "limit", errors)
    lams = d.get("lambda0s", list(LimitSettings.lambda0s))
    if not (isinstance(lams, list) and len(lams) >= 2 and all(_is_number(v) and v > 0 for v in lams)):
        errors.append("limit.lambda0s: must be a list of at least two positive numbers")
        lams = list(LimitSettings.lambda0s)
    trials = d.get("trials", LimitSettings.trials)
    if not (_is_int(trials) and trials >= 1):
        errors.append("limit.trials: must be a positive integer")
        trials = LimitSettings.trials
    return LimitSettings(tuple(float(v) for v in lams), int(trials))
