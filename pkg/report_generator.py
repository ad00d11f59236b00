"""
CSV and JSON artifacts of solved policies and scenario runs

Tables go through pandas with a fixed float format and JSON is written with
sorted keys, so reruns with the same seed reproduce the files byte for byte.
"""

import json
import logging
import math
import os
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from chain_model import counter_endpoints
from models import BoundReport, ClosedLoopPath, ErrorCurve, FiniteHorizonPolicy, SamplingTrace
from policy_solver import gain_matrix

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
FINITE_HORIZON_POINTS = 200


def _jsonable(value):
    """Plain Python values for json.dump; NaN and inf become null"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _write_table(frame: pd.DataFrame, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Table written: {path} ({len(frame)} rows)")
    return path


def _write_json(document: Dict, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(_jsonable(document), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"JSON written: {path}")
    return path


def write_policy_tables(out_dir: str, plan: Sequence, L: int) -> List[str]:
    """
    Gain table and policy document for every solved phase

    Counters and states are reported with global sensor ids: counter 2l
    releases sensor l, counter 2l+1 samples it, and state L is idle.
    """
    rows = []
    phases = []
    for p, phase in enumerate(plan):
        active = np.asarray(phase.active)
        idle = len(active)
        states = np.append(active, L)
        policy = phase.policy
        for c in range(policy.K.shape[0]):
            counter = 2 * int(active[c // 2]) + c % 2
            for s in range(idle + 1):
                rows.append({"phase": p, "counter": counter, "state": int(states[s]),
                             "gain": policy.K[c, s], "effective_rate": policy.eff_rates[c, s]})
        phases.append({
            "start": phase.start,
            "end": phase.end,
            "sensors": active.tolist(),
            "rho": policy.rho,
            "k0": dict(zip(map(str, states.tolist()), policy.k0.tolist())),
            "residual": policy.residual,
            "iterations": policy.iterations,
            "stationary": dict(zip(map(str, states.tolist()), phase.report.stationary.tolist())),
            "frequency": dict(zip(map(str, active.tolist()), phase.report.frequency.tolist())),
            "mean_gap": dict(zip(map(str, active.tolist()), phase.report.mean_gap.tolist())),
        })
    try:
        gains = _write_table(pd.DataFrame(rows, columns=["phase", "counter", "state", "gain", "effective_rate"]),
                             os.path.join(out_dir, "policy_gains.csv"))
        document = _write_json({"sensors": L, "phases": phases}, os.path.join(out_dir, "policy.json"))
    except OSError as e:
        logger.error(f"Policy export error: {e}")
        raise
    return [gains, document]


def write_finite_horizon_gains(out_dir: str, plan: Sequence, policies: Sequence[FiniteHorizonPolicy], L: int,
                               points: int = FINITE_HORIZON_POINTS) -> str:
    """
    Time-varying gain of each counter at its source state, global ids

    The backward trajectory is thinned to about `points` time instants per
    phase; the first and last instants are always kept.
    """
    rows = []
    for p, (phase, finite) in enumerate(zip(plan, policies)):
        active = np.asarray(phase.active)
        idle = len(active)
        source, _ = counter_endpoints(idle)
        states = np.append(active, L)
        stride = max(1, (len(finite.times) - 1) // points)
        picks = np.unique(np.append(np.arange(0, len(finite.times), stride), len(finite.times) - 1))
        for t in picks:
            K = gain_matrix(phase.mats, finite.k_traj[t])
            for c in range(K.shape[0]):
                rows.append({"phase": p, "time": finite.times[t], "counter": 2 * int(active[c // 2]) + c % 2,
                             "state": int(states[source[c]]), "gain": K[c, source[c]]})
    return _write_table(pd.DataFrame(rows, columns=["phase", "time", "counter", "state", "gain"]),
                        os.path.join(out_dir, "policy_finite_horizon.csv"))


def write_frequency_tables(out_dir: str, frequencies: Dict[str, Dict]) -> List[str]:
    """frequencies.csv for a single phase, one frequencies_phaseN.csv per phase otherwise"""
    paths = []
    single = len(frequencies) == 1
    for key in sorted(frequencies, key=lambda k: int(k.replace("phase", ""))):
        entry = frequencies[key]
        frame = pd.DataFrame({
            "sensor": entry["sensors"],
            "f_analytic": entry["analytic"],
            "f_empirical": entry.get("empirical", [math.nan] * len(entry["sensors"])),
            "se": entry.get("se", [math.nan] * len(entry["sensors"])),
        })
        name = "frequencies.csv" if single else f"frequencies_{key}.csv"
        paths.append(_write_table(frame, os.path.join(out_dir, name)))
    return paths


def write_error_curves(out_dir: str, curves: Sequence[ErrorCurve], label: str) -> str:
    frames = [pd.DataFrame({"time": c.times, "sensor": c.sensor, "mean_sq": c.mean_sq, "ci_half": c.ci_half,
                            "bound": c.bound}) for c in curves]
    frame = pd.concat(frames, ignore_index=True) if frames else \
        pd.DataFrame(columns=["time", "sensor", "mean_sq", "ci_half", "bound"])
    return _write_table(frame, os.path.join(out_dir, f"error_curves_{label}.csv"))


def write_trajectory(out_dir: str, paths: Sequence[ClosedLoopPath], label: str) -> str:
    """
    Sample trajectory as (time, subsystem, state, control) rows

    Either one scalar path per subsystem, including event rows so that
    impulsive resets show up, or a single coupled path whose state and
    control are shaped (grid, L).
    """
    frames = []
    if len(paths) == 1 and np.ndim(paths[0].state) == 2:
        path = paths[0]
        G, L = path.state.shape
        frames.append(pd.DataFrame({
            "time": np.repeat(path.times, L),
            "subsystem": np.tile(np.arange(L), G),
            "state": path.state.ravel(),
            "control": path.control.ravel(),
        }))
    else:
        for l, path in enumerate(paths):
            frames.append(pd.DataFrame({"time": path.times, "subsystem": l, "state": path.state,
                                        "control": path.control}))
    frame = pd.concat(frames, ignore_index=True) if frames else \
        pd.DataFrame(columns=["time", "subsystem", "state", "control"])
    return _write_table(frame, os.path.join(out_dir, f"trajectory_{label}.csv"))


def write_trace(path: str, trace: SamplingTrace) -> str:
    frames = [pd.DataFrame({"sensor": l, "index": np.arange(len(times)), "time": times})
              for l, times in enumerate(trace.events)]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["sensor", "index", "time"])
    return _write_table(frame, path)


def write_stationary(path: str, stationary: np.ndarray) -> str:
    frame = pd.DataFrame({"state": np.arange(len(stationary)), "probability": stationary})
    return _write_table(frame, path)


def write_bounds_table(out_dir: str, rows: List[Dict]) -> str:
    frame = pd.DataFrame(rows, columns=["phase", "sensor", "frequency", "kind", "value", "regime"])
    return _write_table(frame, os.path.join(out_dir, "bounds.csv"))


def write_summary(out_dir: str, report: BoundReport) -> str:
    """summary.json: verdict, bounds, frequencies and one line per error curve"""
    curves = []
    for c in report.curves:
        finite = np.isfinite(c.mean_sq)
        curves.append({
            "label": c.label,
            "sensor": c.sensor,
            "violations": c.violations,
            "warmup": c.warmup,
            "max_mean_sq": float(np.max(c.mean_sq[finite])) if finite.any() else None,
            "final_mean_sq": float(c.mean_sq[-1]) if len(c.mean_sq) else None,
        })
    path = os.path.join(out_dir, "summary.json")
    document = {
        "scenario": report.scenario,
        "passed": report.passed,
        "bounds": report.bounds,
        "frequencies": report.frequencies,
        "curves": curves,
        "artifacts": sorted(os.path.basename(a) for a in report.artifacts) + [os.path.basename(path)],
    }
    return _write_json(document, path)
