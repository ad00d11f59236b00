import json

import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest

import report_generator
from conftest import scalar_estimation_config
from harness import build_phase_plan, finite_horizon_policies
from models import BoundReport, ClosedLoopPath, ErrorCurve, SamplingTrace


def _curve(sensor, label="optimal"):
    times = np.array([0.0, 0.5, 1.0])
    return ErrorCurve(sensor=sensor, label=label, times=times, mean_sq=np.array([0.0, 0.2, np.nan]),
                      ci_half=np.full(3, 0.01), se=np.full(3, 0.004), bound=np.full(3, 0.64))


def test_policy_tables_use_global_ids(tmp_path):
    plan = build_phase_plan(scalar_estimation_config())
    gains, document = report_generator.write_policy_tables(str(tmp_path), plan, 2)
    table = pd.read_csv(gains)
    assert list(table.columns) == ["phase", "counter", "state", "gain", "effective_rate"]
    assert len(table) == 4 * 3
    row = table[(table.counter == 1) & (table.state == 2)].iloc[0]
    assert row.gain == pytest.approx(-0.2272, abs=1e-3)
    with open(document) as f:
        policy = json.load(f)
    assert policy["phases"][0]["rho"] == pytest.approx(0.4563, abs=1e-3)
    assert set(policy["phases"][0]["frequency"]) == {"0", "1"}


def test_finite_horizon_gains_follow_each_counter_from_its_source(tmp_path):
    config = scalar_estimation_config(solver={"ode_steps": 4000})
    plan = build_phase_plan(config)
    policies = finite_horizon_policies(config, plan, 40.0)
    path = report_generator.write_finite_horizon_gains(str(tmp_path), plan, policies, 2, points=20)
    table = pd.read_csv(path)
    assert list(table.columns) == ["phase", "time", "counter", "state", "gain"]
    assert len(table) == 21 * 4
    sources = table.groupby("counter").state.unique().map(list).to_dict()
    assert sources == {0: [0], 1: [2], 2: [1], 3: [2]}
    early = table[table.time == 0.0].set_index("counter")
    assert early.loc[1, "gain"] == pytest.approx(-0.2272, abs=1e-3)
    # zero terminal value leaves only the running-cost part of the gain
    late = table[table.time == table.time.max()].set_index("counter")
    npt.assert_allclose(late.loc[1, "gain"], -0.5 * plan[0].mats.S[1, 2], atol=1e-9)


def test_frequency_tables_per_phase(tmp_path):
    entry = {"sensors": [0, 2], "analytic": [0.5, 0.6], "empirical": [0.51, 0.58], "se": [0.01, 0.01]}
    single = report_generator.write_frequency_tables(str(tmp_path), {"phase0": entry})
    assert [p.endswith("frequencies.csv") for p in single] == [True]
    several = report_generator.write_frequency_tables(str(tmp_path), {"phase1": entry, "phase0": entry})
    assert [p.rsplit("/", 1)[-1] for p in several] == ["frequencies_phase0.csv", "frequencies_phase1.csv"]
    table = pd.read_csv(several[0])
    assert list(table.columns) == ["sensor", "f_analytic", "f_empirical", "se"]
    assert table.sensor.tolist() == [0, 2]


def test_error_curves_stack_sensors(tmp_path):
    path = report_generator.write_error_curves(str(tmp_path), [_curve(0), _curve(1)], "optimal")
    table = pd.read_csv(path)
    assert list(table.columns) == ["time", "sensor", "mean_sq", "ci_half", "bound"]
    assert table.sensor.tolist() == [0, 0, 0, 1, 1, 1]
    assert np.isnan(table.mean_sq.iloc[2])


def test_coupled_trajectory_is_long_format(tmp_path):
    times = np.array([0.0, 0.1])
    state = np.arange(6.0).reshape(2, 3)
    path = ClosedLoopPath(times=times, state=state, control=-state, on_grid=np.ones(2, dtype=bool))
    table = pd.read_csv(report_generator.write_trajectory(str(tmp_path), [path], "pi"))
    assert list(table.columns) == ["time", "subsystem", "state", "control"]
    assert table.subsystem.tolist() == [0, 1, 2, 0, 1, 2]
    assert table.state.tolist() == state.ravel().tolist()


def test_scalar_trajectories_keep_event_rows(tmp_path):
    a = ClosedLoopPath(times=np.array([0.0, 0.3, 0.5]), state=np.array([0.0, 0.0, 0.1]),
                       control=np.array([0.0, -0.4, 0.0]), on_grid=np.array([True, False, True]))
    table = pd.read_csv(report_generator.write_trajectory(str(tmp_path), [a, a], "impulsive"))
    assert len(table) == 6
    assert table.control.tolist()[1] == -0.4


def test_trace_export(tmp_path):
    trace = SamplingTrace(horizon=5.0, events=[np.array([0.5, 1.5]), np.array([2.0])])
    table = pd.read_csv(report_generator.write_trace(str(tmp_path / "trace.csv"), trace))
    assert table.to_dict("list") == {"sensor": [0, 0, 1], "index": [0, 1, 0], "time": [0.5, 1.5, 2.0]}


def test_summary_is_strict_json(tmp_path):
    report = BoundReport(scenario="demo", passed=True, bounds={"phase0/sensor0/estimation": 0.64,
                                                                "phase0/sensor1/pulse": float("nan")},
                         frequencies={"phase0": {"analytic": np.array([0.66, np.inf])}},
                         curves=[_curve(0)], artifacts=[str(tmp_path / "error_curves_optimal.csv")])
    path = report_generator.write_summary(str(tmp_path), report)
    with open(path) as f:
        text = f.read()
    assert "NaN" not in text and "Infinity" not in text
    summary = json.loads(text)
    assert summary["bounds"]["phase0/sensor1/pulse"] is None
    assert summary["frequencies"]["phase0"]["analytic"] == [0.66, None]
    assert summary["curves"][0]["max_mean_sq"] == pytest.approx(0.2)
    assert summary["artifacts"] == ["error_curves_optimal.csv", "summary.json"]
