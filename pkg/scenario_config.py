"""
Scenario configuration

A scenario is one JSON document. Missing settings fall back to
DEFAULT_SETTINGS; unknown keys are rejected.
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Union

import numpy as np

from errors import InvalidSpecError
from models import ControllerKind, ControllerSpec, LinearPlant, ScalarPlant, StepDisturbance
from plant_models import linear_plant, two_tank_matrix, water_tank_gamma

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")

DEFAULT_SETTINGS = {
    "description": "",
    "horizon": 30.0,
    "replicates": 1000,
    "grid_dt": 0.05,
    "seed": 2012,
    "jobs": 1,
    "warmup": None,
    "statistics_horizon": 10000.0,
    "periodic_baseline": False,
    "periodic_offsets": None,
    "plants": [],
    "controllers": [],
    "phases": [],
    "disturbances": [],
    "coupling": 0.1,
    "solver": {"tol": 1e-10, "max_iter": 200, "ode_steps": 10000},
}

REQUIRED_KEYS = {"name", "kind", "sensors", "chain"}
CHAIN_KEYS = {"sample_rate", "release_rate", "xi", "alpha"}
SOLVER_KEYS = {"tol", "max_iter", "ode_steps"}
SCALAR_PLANT_KEYS = {"gamma", "tank", "sigma", "eta"}
VECTOR_PLANT_KEYS = {"A", "two_tank", "H", "C", "R"}
TANK_KEYS = {"outlet", "section", "level", "gravity"}
CONTROLLER_KEYS = {"kind", "rho", "theta", "kp", "ki"}
PHASE_KEYS = {"start", "end", "active", "xi"}
DISTURBANCE_KEYS = {"sensor", "amplitude", "start"}


class ScenarioKind(Enum):
    ESTIMATION_SCALAR = "estimation-scalar"
    ESTIMATION_VECTOR = "estimation-vector"
    ESTIMATION_KALMAN = "estimation-kalman"
    ADHOC_CHURN = "adhoc-churn"
    CONTROL_SCALAR = "control-scalar"
    COUPLED_PI = "coupled-pi"

    @property
    def vector(self) -> bool:
        return self in (ScenarioKind.ESTIMATION_VECTOR, ScenarioKind.ESTIMATION_KALMAN)


@dataclass
class PhaseConfig:
    """Sensors competing for the channel over [start, end) and their sampling costs"""
    start: float
    end: float
    active: np.ndarray
    xi: np.ndarray


@dataclass
class ScenarioConfig:
    name: str
    kind: ScenarioKind
    sensors: int
    sample_rate: np.ndarray
    release_rate: np.ndarray
    xi: np.ndarray
    alpha: Optional[np.ndarray] = None
    plants: List[Union[ScalarPlant, LinearPlant]] = field(default_factory=list)
    controllers: List[ControllerSpec] = field(default_factory=list)
    phases: List[PhaseConfig] = field(default_factory=list)
    disturbances: List[StepDisturbance] = field(default_factory=list)
    horizon: float = 30.0
    replicates: int = 1000
    grid_dt: float = 0.05
    seed: int = 2012
    jobs: int = 1
    warmup: Optional[float] = None
    statistics_horizon: float = 10000.0
    periodic_baseline: bool = False
    periodic_offsets: Optional[np.ndarray] = None
    coupling: float = 0.1
    solver_tol: float = 1e-10
    solver_max_iter: int = 200
    ode_steps: int = 10000
    description: str = ""


def _reject_unknown(section: Dict[str, Any], allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise InvalidSpecError(f"unknown key(s) {unknown} in {where}")


def _per_sensor(value, L: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(L, float(arr))
    if arr.shape != (L,):
        raise InvalidSpecError(f"{what} must be a scalar or have {L} entries, got {arr.shape}")
    return arr


def _tank_gamma(tank: Dict[str, Any]) -> float:
    _reject_unknown(tank, TANK_KEYS, "tank")
    return water_tank_gamma(tank["outlet"], tank["section"], tank["level"], tank.get("gravity", 9.8))


def _parse_scalar_plant(entry: Dict[str, Any]) -> ScalarPlant:
    _reject_unknown(entry, SCALAR_PLANT_KEYS, "scalar plant")
    if ("gamma" in entry) == ("tank" in entry):
        raise InvalidSpecError("scalar plant needs exactly one of 'gamma' or 'tank'")
    gamma = entry["gamma"] if "gamma" in entry else _tank_gamma(entry["tank"])
    return ScalarPlant(gamma=float(gamma), sigma=float(entry.get("sigma", 1.0)), eta=float(entry.get("eta", 0.0)))


def _parse_vector_plant(entry: Dict[str, Any]) -> LinearPlant:
    _reject_unknown(entry, VECTOR_PLANT_KEYS, "vector plant")
    if ("A" in entry) == ("two_tank" in entry):
        raise InvalidSpecError("vector plant needs exactly one of 'A' or 'two_tank'")
    if "A" in entry:
        A = np.asarray(entry["A"], dtype=float)
    else:
        tanks = entry["two_tank"]
        _reject_unknown(tanks, {"top", "bottom"}, "two_tank")
        top, bottom = (tanks[k] for k in ("top", "bottom"))
        for tank in (top, bottom):
            _reject_unknown(tank, TANK_KEYS, "tank")
        A = two_tank_matrix((top["outlet"], top["section"], top["level"]),
                            (bottom["outlet"], bottom["section"], bottom["level"]),
                            gravity=top.get("gravity", 9.8))
    d = A.shape[0]
    R = entry.get("R")
    if R is not None and np.ndim(R) == 0:
        R = float(R) * np.eye(len(entry.get("C", np.eye(d))))
    return linear_plant(A, H=entry.get("H"), C=entry.get("C"), R=R)


def _parse_controller(entry: Dict[str, Any]) -> ControllerSpec:
    _reject_unknown(entry, CONTROLLER_KEYS, "controller")
    try:
        kind = ControllerKind(entry["kind"])
    except (KeyError, ValueError) as e:
        raise InvalidSpecError(f"unknown controller kind {entry.get('kind')!r}") from e
    return ControllerSpec(kind=kind, rho=entry.get("rho"), theta=entry.get("theta"),
                          kp=entry.get("kp"), ki=entry.get("ki"))


def _parse_phase(entry: Dict[str, Any], L: int, default_xi: np.ndarray) -> PhaseConfig:
    _reject_unknown(entry, PHASE_KEYS, "phase")
    active = entry.get("active", L)
    active = np.arange(int(active)) if np.ndim(active) == 0 else np.asarray(active, dtype=int)
    if active.size == 0 or active.min() < 0 or active.max() >= L or len(set(active.tolist())) != active.size:
        raise InvalidSpecError(f"phase active set {active.tolist()} is not a set of sensors in 0..{L - 1}")
    xi = entry.get("xi")
    if xi is None:
        costs = default_xi[active]
    elif isinstance(xi, dict):
        _reject_unknown(xi, {"default", "overrides"}, "phase xi")
        full = np.full(L, float(xi.get("default", 0.0)))
        for sensor, value in xi.get("overrides", {}).items():
            full[int(sensor)] = float(value)
        costs = full[active]
    else:
        costs = _per_sensor(xi, L, "phase xi")[active]
    return PhaseConfig(start=float(entry["start"]), end=float(entry["end"]), active=active, xi=costs)


def parse_scenario(settings: Dict[str, Any]) -> ScenarioConfig:
    """Turn a settings dict (defaults already merged) into a validated ScenarioConfig"""
    _reject_unknown(settings, REQUIRED_KEYS | set(DEFAULT_SETTINGS), "scenario")
    missing = sorted(REQUIRED_KEYS - set(settings))
    if missing:
        raise InvalidSpecError(f"scenario is missing {missing}")
    try:
        kind = ScenarioKind(settings["kind"])
    except ValueError as e:
        raise InvalidSpecError(f"unknown scenario kind {settings['kind']!r}") from e

    L = int(settings["sensors"])
    if L < 1:
        raise InvalidSpecError(f"need at least one sensor, got {L}")
    chain = settings["chain"]
    _reject_unknown(chain, CHAIN_KEYS, "chain")
    xi = _per_sensor(chain.get("xi", 0.0), L, "xi")
    alpha = chain.get("alpha")

    solver = settings["solver"]
    _reject_unknown(solver, SOLVER_KEYS, "solver")

    plants = []
    if kind.vector:
        plants = [_parse_vector_plant(p) for p in settings["plants"]]
    elif kind != ScenarioKind.COUPLED_PI:
        plants = [_parse_scalar_plant(p) for p in settings["plants"]]
    if len(plants) == 1 and L > 1:
        plants = plants * L

    for d in settings["disturbances"]:
        _reject_unknown(d, DISTURBANCE_KEYS, "disturbance")
    offsets = settings["periodic_offsets"]

    config = ScenarioConfig(
        name=str(settings["name"]),
        kind=kind,
        sensors=L,
        sample_rate=_per_sensor(chain["sample_rate"], L, "sample_rate"),
        release_rate=_per_sensor(chain["release_rate"], L, "release_rate"),
        xi=xi,
        alpha=None if alpha is None else np.asarray(alpha, dtype=float),
        plants=plants,
        controllers=[_parse_controller(c) for c in settings["controllers"]],
        phases=[_parse_phase(p, L, xi) for p in settings["phases"]],
        disturbances=[StepDisturbance(sensor=int(d["sensor"]), amplitude=float(d["amplitude"]),
                                      start=float(d["start"])) for d in settings["disturbances"]],
        horizon=float(settings["horizon"]),
        replicates=int(settings["replicates"]),
        grid_dt=float(settings["grid_dt"]),
        seed=int(settings["seed"]),
        jobs=int(settings["jobs"]),
        warmup=None if settings["warmup"] is None else float(settings["warmup"]),
        statistics_horizon=float(settings["statistics_horizon"]),
        periodic_baseline=bool(settings["periodic_baseline"]),
        periodic_offsets=None if offsets is None else _per_sensor(offsets, L, "periodic_offsets"),
        coupling=float(settings["coupling"]),
        solver_tol=float(solver.get("tol", 1e-10)),
        solver_max_iter=int(solver.get("max_iter", 200)),
        ode_steps=int(solver.get("ode_steps", 10000)),
        description=str(settings["description"]),
    )
    validate_scenario(config)
    return config


def validate_scenario(config: ScenarioConfig):
    L = config.sensors
    if config.replicates < 1:
        raise InvalidSpecError(f"need at least one replicate, got {config.replicates}")
    if not config.horizon > 0 or not config.grid_dt > 0 or not config.statistics_horizon > 0:
        raise InvalidSpecError("horizon, grid_dt and statistics_horizon must be positive")
    if config.kind != ScenarioKind.COUPLED_PI and len(config.plants) != L:
        raise InvalidSpecError(f"expected 1 or {L} plant(s), got {len(config.plants)}")
    if config.kind == ScenarioKind.ESTIMATION_VECTOR:
        for plant in config.plants:
            if plant.C.shape != (plant.dim, plant.dim) or not np.allclose(plant.C, np.eye(plant.dim)):
                raise InvalidSpecError("predictor estimation needs full-state measurements (C = I)")
    if config.kind == ScenarioKind.CONTROL_SCALAR and not config.controllers:
        raise InvalidSpecError("control-scalar scenario needs at least one controller")
    if config.kind == ScenarioKind.COUPLED_PI:
        if len(config.controllers) != 1 or config.controllers[0].kind != ControllerKind.PI:
            raise InvalidSpecError("coupled-pi scenario needs exactly one PI controller")
    for d in config.disturbances:
        if not 0 <= d.sensor < L:
            raise InvalidSpecError(f"disturbance targets unknown sensor {d.sensor}")
    if config.phases:
        edges = [(p.start, p.end) for p in config.phases]
        if edges[0][0] != 0.0 or not np.isclose(edges[-1][1], config.horizon):
            raise InvalidSpecError(f"phases must cover [0, {config.horizon}], got {edges}")
        for (s0, e0), (s1, e1) in zip(edges, edges[1:]):
            if not np.isclose(e0, s1):
                raise InvalidSpecError(f"phases must be contiguous, gap between {e0} and {s1}")
        if any(e <= s for s, e in edges):
            raise InvalidSpecError(f"phase intervals must be non-empty: {edges}")


def load_scenario(name_or_path: str) -> ScenarioConfig:
    """Load a scenario from a JSON file or by built-in name"""
    path = name_or_path
    if not os.path.isfile(path):
        path = os.path.join(SCENARIO_DIR, f"{name_or_path}.json")
    if not os.path.isfile(path):
        raise InvalidSpecError(f"no scenario file or built-in scenario named {name_or_path!r}")
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"Failed to parse scenario {path}: {e}")
        raise InvalidSpecError(f"scenario {path} is not valid JSON: {e}") from e

    settings = copy.deepcopy(DEFAULT_SETTINGS)
    solver = {**settings["solver"], **document.pop("solver", {})}
    settings.update(document)
    settings["solver"] = solver
    logger.debug(f"Loaded scenario settings from {path}")
    return parse_scenario(settings)


def apply_overrides(config: ScenarioConfig, **overrides) -> ScenarioConfig:
    """Replace selected fields (None values are ignored) and revalidate"""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if not changes:
        return config
    if "horizon" in changes and config.phases:
        scale = changes["horizon"] / config.horizon
        changes["phases"] = [replace(p, start=p.start * scale, end=p.end * scale) for p in config.phases]
        logger.info(f"Rescaled {len(config.phases)} phase(s) to horizon {changes['horizon']}")
    updated = replace(config, **changes)
    validate_scenario(updated)
    return updated


def list_scenarios() -> List[str]:
    if not os.path.isdir(SCENARIO_DIR):
        return []
    return sorted(os.path.splitext(f)[0] for f in os.listdir(SCENARIO_DIR) if f.endswith(".json"))
