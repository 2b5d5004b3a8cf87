"""JSON scenario files.

A scenario names every :class:`ModelParams` field explicitly, plus optional
``solver``, ``sim`` and ``sweep`` sections and a ``constraint_basis``::

    {"lambda_fg": 6.67, "lambda_bg": 1, ..., "b_max": 0.02,
     "solver": {"tol": 1e-9, "beta0": 1.0},
     "sim": {"horizon": 60000, "seed": 0, "replications": 3},
     "constraint_basis": "rate"}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .constrained import SolverOptions
from .model import ModelParams
from .sim import SimConfig

MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ModelParams))
SOLVER_KEYS = ("tol", "beta0", "epsilon", "max_iters", "via_max_iters", "tol_b", "beta_cap", "bisect_iters", "refine_q")
SIM_KEYS = ("horizon", "warmup", "seed", "replications")
SWEEP_PARAMS = ("lambda_fg", "lambda_bg", "backhaul_delay", "b_max")
INT_KEYS = ("n_m", "n_s", "queue_cap")


class ConfigError(ValueError):
    pass


@dataclass
class SweepSpec:
    parameter: str
    values: list[float]
    base: ModelParams = field(default_factory=ModelParams)
    simulate: bool = True

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMS:
            raise ConfigError(f"sweep.parameter must be one of {', '.join(SWEEP_PARAMS)}, got {self.parameter!r}")
        if not self.values:
            raise ConfigError("sweep.values must be non-empty")
        if any(v < 0 for v in self.values) or list(self.values) != sorted(self.values):
            raise ConfigError("sweep.values must be non-negative and sorted ascending")


@dataclass
class Scenario:
    params: ModelParams = field(default_factory=ModelParams)
    solver: SolverOptions = field(default_factory=SolverOptions)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: SweepSpec | None = None

    def to_dict(self) -> dict:
        out = {k: getattr(self.params, k) for k in MODEL_KEYS}
        out["batch_probs"] = list(self.params.batch_probs)
        out["solver"] = {k: getattr(self.solver, k) for k in SOLVER_KEYS}
        out["sim"] = {k: getattr(self.sim, k) for k in SIM_KEYS}
        out["constraint_basis"] = self.solver.constraint_basis
        if self.sweep is not None:
            out["sweep"] = {
                "parameter": self.sweep.parameter,
                "values": list(self.sweep.values),
                "simulate": self.sweep.simulate,
            }
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _number(section: str, key: str, value, integer: bool = False):
    name = f"{section}.{key}" if section else key
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _section(raw: dict, name: str, allowed: tuple[str, ...]) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected an object")
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"{name}.{k}: unknown key")
    return sec


def parse_scenario(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = set(MODEL_KEYS) | {"solver", "sim", "sweep", "constraint_basis"}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{k}: unknown key")
    model = {}
    for k in MODEL_KEYS:
        if k not in raw:
            raise ConfigError(f"{k}: missing required key")
        if k == "batch_probs":
            v = raw[k]
            if not isinstance(v, list) or not v:
                raise ConfigError("batch_probs: expected a non-empty list of probabilities")
            model[k] = tuple(_number("", f"batch_probs[{i}]", x) for i, x in enumerate(v))
        else:
            model[k] = _number("", k, raw[k], integer=k in INT_KEYS)
    try:
        params = ModelParams(**model)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    solver_raw = _section(raw, "solver", SOLVER_KEYS)
    solver = {}
    for k, v in solver_raw.items():
        if k == "refine_q":
            if not isinstance(v, bool):
                raise ConfigError("solver.refine_q: expected true or false")
            solver[k] = v
        elif k == "epsilon" and v is None:
            solver[k] = None
        else:
            solver[k] = _number("solver", k, v, integer=k in ("max_iters", "via_max_iters", "bisect_iters"))
    basis = raw.get("constraint_basis", "rate")
    if basis not in ("rate", "per_arrival"):
        raise ConfigError(f"constraint_basis: expected 'rate' or 'per_arrival', got {basis!r}")
    try:
        solver_opts = SolverOptions(constraint_basis=basis, **solver)
    except ValueError as e:
        raise ConfigError(f"solver: {e}") from None

    sim_raw = _section(raw, "sim", SIM_KEYS)
    sim = {}
    for k, v in sim_raw.items():
        if k == "warmup" and v is None:
            sim[k] = None
        else:
            sim[k] = _number("sim", k, v, integer=k in ("seed", "replications"))
    try:
        sim_cfg = SimConfig(**sim)
    except ValueError as e:
        raise ConfigError(f"sim: {e}") from None

    sweep = None
    if "sweep" in raw:
        sw = _section(raw, "sweep", ("parameter", "values", "simulate"))
        if "parameter" not in sw:
            raise ConfigError("sweep.parameter: missing required key")
        if "values" not in sw or not isinstance(sw["values"], list):
            raise ConfigError("sweep.values: expected a list of numbers")
        values = [_number("sweep", f"values[{i}]", v) for i, v in enumerate(sw["values"])]
        sweep = SweepSpec(sw["parameter"], values, params, bool(sw.get("simulate", True)))
    return Scenario(params, solver_opts, sim_cfg, sweep)


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_scenario(raw)


def default_scenario_dict() -> dict:
    return Scenario().to_dict()
