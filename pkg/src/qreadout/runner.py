"""Run one experiment mode and write its CSV traces and ``summary.json``.

All randomness flows from ``config.seed``: the hidden trajectory uses
``derive_seed(seed, 0)`` and the record noise ``derive_seed(seed, 1)``, so
``simulate``, ``filter``, ``decide`` and ``verify-quantum`` see the same
record for the same seed. Wall time is measured but kept out of the
written files so that reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .core import InvariantBreach, ModelError, derive_seed, sample_trajectory
from .decision import decide, matched_filter_pe, monte_carlo_error_rate
from .gaussian import GaussianRecord, llr_estimator_correlator, simulate_gaussian
from .poisson import CountRecord, llr_poisson, gaussian_limit_gaps, simulate_poisson
from .quantum import ConditionalDensityMatrix, QubitRates, decoupling_report, integrate_sme, quantum_estimator

OFFDIAG_TOL = 1e-12
MU_GAP_TOL = 1e-6


class VerificationFailed(InvariantBreach):
    """A verify mode ran to completion but its check did not hold."""


@dataclass
class RunSummary:
    config: dict
    version: str
    wall_time: float
    outputs: list = field(default_factory=list)
    headline: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        """Contents of ``summary.json`` (wall time excluded for determinism)."""
        return {
            "version": self.version,
            "config": self.config,
            "outputs": self.outputs,
            "headline": self.headline,
        }


def _fmt(x) -> str:
    return "%.17g" % x


def write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_record(path, config: ExperimentConfig):
    """Load a ``record.csv`` written by ``simulate`` (or by hand) for ``config``'s grid."""
    grid = config.grid
    column = "dy" if config.channel == "gaussian" else "dn"
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError([f"record: cannot read {path}: {exc.strerror}"]) from None
    if not rows or [h.strip() for h in rows[0]] != ["t", column]:
        raise ConfigError([f"record: header must be 't,{column}'"])
    body = [r for r in rows[1:] if r]
    if len(body) != grid.K:
        raise ConfigError([f"record: expected K = {grid.K} rows, found {len(body)}"])
    try:
        data = np.array([[float(a), float(b)] for a, b in body])
    except ValueError:
        raise ConfigError(["record: every row needs two numbers"]) from None
    if np.max(np.abs(data[:, 0] - grid.times[:-1])) > 1e-9 * grid.T:
        raise ConfigError(["record: time column does not match the configured grid"])
    try:
        if config.channel == "gaussian":
            return GaussianRecord(grid, data[:, 1])
        return CountRecord(grid, data[:, 1], config.lambda0)
    except ModelError as exc:
        raise ConfigError([f"record: {exc}"]) from None


def synthesize_record(config: ExperimentConfig):
    """Draw the truth hypothesis's hidden trajectory and its record."""
    model = config.truth_model
    traj = sample_trajectory(model, config.grid, derive_seed(config.seed, 0))
    noise = derive_seed(config.seed, 1)
    if config.channel == "gaussian":
        return traj, simulate_gaussian(model, traj, config.grid, noise)
    return traj, simulate_poisson(model, traj, config.lambda0, config.grid, noise)


def _record_for(config, record_path):
    path = record_path or config.record
    if path is not None:
        return None, read_record(path, config)
    return synthesize_record(config)


def _write_record(out: Path, config, record, outputs):
    t = config.grid.times[:-1]
    if config.channel == "gaussian":
        write_csv(out / "record.csv", ["t", "dy"], [t, record.dy])
    else:
        write_csv(out / "record.csv", ["t", "dn"], [t, record.dn])
    outputs.append("record.csv")


def llr_traces(config: ExperimentConfig, record) -> list:
    traces = []
    for model in config.hypotheses.models:
        if config.channel == "gaussian":
            traces.append(llr_estimator_correlator(model, record))
        else:
            traces.append(llr_poisson(model, record))
    return traces


def _filter(config, out, record_path, outputs):
    _, record = _record_for(config, record_path)
    traces = llr_traces(config, record)
    est = "mu" if config.channel == "gaussian" else "nu"
    for model, tr in zip(config.hypotheses.models, traces):
        name = f"llr_{model.label}.csv"
        write_csv(out / name, ["t", "llr", est], [config.grid.times, tr.llr, getattr(tr, est)])
        outputs.append(name)
    finals = {m.label: float(tr.final) for m, tr in zip(config.hypotheses.models, traces)}
    return record, finals


def _mode_simulate(config, out, record_path, outputs):
    traj, record = synthesize_record(config)
    _write_record(out, config, record, outputs)
    write_csv(out / "trajectory.csv", ["t", "x"], [config.grid.times, traj.x])
    outputs.append("trajectory.csv")
    total = record.y[-1] if config.channel == "gaussian" else record.n[-1]
    key = "y_T" if config.channel == "gaussian" else "n_T"
    return {"truth": config.truth_model.label, key: float(total),
            "excited_fraction": float(traj.x.mean())}


def _mode_filter(config, out, record_path, outputs):
    _, finals = _filter(config, out, record_path, outputs)
    return {"llr_final": finals, "max_llr": max(finals.values())}


def _mode_decide(config, out, record_path, outputs):
    _, finals = _filter(config, out, record_path, outputs)
    res = decide(config.hypotheses, [finals[m.label] for m in config.hypotheses.models])
    labels = [m.label for m in config.hypotheses.models]
    return {
        "chosen": labels[res.chosen],
        "chosen_index": res.chosen,
        "posteriors": dict(zip(labels, res.posteriors.tolist())),
        "llr_final": finals,
    }


def _deterministic_snr(config):
    """SNR and log prior ratio when the set is the known-signal binary problem."""
    hs = config.hypotheses
    if config.channel != "gaussian" or len(hs) != 2:
        return None
    h0, h1 = hs.models
    if h0.has_transitions or h1.has_transitions:
        return None
    if h0.initial_prob != (1.0, 0.0) or h1.initial_prob != (0.0, 1.0):
        return None
    snr = float(np.sum(h1.amplitude.on(config.grid) ** 2) * config.grid.dt)
    return snr, float(np.log(hs.priors[1] / hs.priors[0]))


def _mode_montecarlo(config, out, record_path, outputs):
    res = monte_carlo_error_rate(
        config.hypotheses, config.channel, config.trials, config.grid,
        config.seed, config.lambda0, config.workers,
    )
    head = res.as_dict()
    ref = _deterministic_snr(config)
    if ref is not None:
        pe, _, _ = matched_filter_pe(*ref)
        head["snr"] = ref[0]
        head["Pe_matched_filter"] = pe
        head["z_score"] = (res.pe_hat - pe) / np.sqrt(pe * (1 - pe) / res.trials) if 0 < pe < 1 else None
    return head


def _mode_verify_quantum(config, out, record_path, outputs):
    model = config.truth_model
    rates = QubitRates.from_model(model, config.quantum.dephasing)
    p0, p1 = model.initial_prob
    rho0 = ConditionalDensityMatrix(p0, p1, config.quantum.coherence)
    _, record = _record_for(config, record_path)
    if record.dy.ndim != 1:
        raise ConfigError(["record: verify-quantum takes a single record"])
    path = integrate_sme(rates, record, rho0, config.quantum.scheme)
    sig = rates.sigma.at_points(config.grid)
    classical = llr_estimator_correlator(rates.classical_model((p0, p1)), record)
    write_csv(
        out / "sme.csv",
        ["t", "f00", "f11", "f01_re", "f01_im", "mu_quantum", "mu_classical"],
        [config.grid.times, path.f00, path.f11, path.f01.real, path.f01.imag,
         quantum_estimator(path, sig), classical.mu],
    )
    outputs.append("sme.csv")
    rep = decoupling_report(rates, record, rho0, config.quantum.scheme, config.quantum.sweep)
    head = rep.as_dict()
    head["passed"] = rep.offdiag_influence <= OFFDIAG_TOL and rep.mu_gap <= MU_GAP_TOL
    head["tolerances"] = {"offdiag_influence": OFFDIAG_TOL, "mu_gap": MU_GAP_TOL}
    return head


def _mode_verify_limit(config, out, record_path, outputs):
    model = config.truth_model
    lams = config.limit.lambda0s
    med, mean = [], []
    for i, lam in enumerate(lams):
        gaps = gaussian_limit_gaps(model, lam, config.grid, config.limit.trials, derive_seed(config.seed, i))
        med.append(float(np.median(gaps)))
        mean.append(float(np.mean(gaps)))
    write_csv(out / "limit.csv", ["lambda0", "median_gap", "mean_gap"], [lams, med, mean])
    outputs.append("limit.csv")
    decreasing = all(b < a for a, b in zip(med, med[1:]))
    return {"lambda0s": list(lams), "median_gap": med, "mean_gap": mean, "passed": decreasing}


_MODES = {
    "simulate": _mode_simulate,
    "filter": _mode_filter,
    "decide": _mode_decide,
    "montecarlo": _mode_montecarlo,
    "verify-quantum": _mode_verify_quantum,
    "verify-limit": _mode_verify_limit,
}


def run(config: ExperimentConfig, out_dir, record_path=None) -> RunSummary:
    """Execute ``config.mode``, writing outputs into ``out_dir``.

    Raises
    ------
    ConfigError
        Problems that could only be detected once inputs were read.
    InvariantBreach
        A numerical invariant failed mid-run, or a verify mode's check
        failed (:class:`VerificationFailed`, after ``summary.json`` is written).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outputs: list[str] = []
    headline = _MODES[config.mode](config, out, record_path, outputs)
    outputs.append("summary.json")
    summary = RunSummary(config.echo(), __version__, time.perf_counter() - start, outputs, headline)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if headline.get("passed") is False:
        raise VerificationFailed(f"{config.mode} check failed; see summary.json")
    return summary
