"""Problem instances and the JSON problem-file format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jsonschema

from .factor import FactorSpec
from .intensity import IntensityModel, PerPlantIntensity, TabularIntensity, rate_function_from_dict
from .modes import as_op_mode, as_switch_mode, build_tables, leq
from .rewards import RewardSpec, SwitchCostSpec, term_from_dict


class SpecError(ValueError):
    """Problem file failed to parse or validate; ``where`` locates the fault."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{where}: {message}")
        self.where = where


@dataclass
class ProblemSpec:
    T: float
    n: int
    intensity: IntensityModel
    rewards: RewardSpec
    costs: SwitchCostSpec
    factor: FactorSpec | None = None
    x0: float = 0.0
    start_a: tuple = None
    start_b: tuple = None
    start_nu: tuple = None
    start_z: tuple = None
    name: str = "problem"
    seed: int = 0
    source: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        self.n = int(self.n)
        if self.intensity.n != self.n:
            raise ValueError("intensity model plant count does not match n")
        zeros = (0,) * self.n
        self.start_a = as_op_mode(self.start_a if self.start_a is not None else zeros, self.n)
        self.start_b = as_switch_mode(self.start_b if self.start_b is not None else zeros, self.n)
        if not leq(self.start_a, self.start_b):
            raise ValueError("start operation mode must not exceed the start switch mode")
        self.start_nu = tuple(float(v) for v in (self.start_nu or (0.0,) * self.n))
        self.start_z = tuple(float(v) for v in (self.start_z or (0.0,) * self.n))
        if self.factor is not None:
            self.x0 = self.factor.x0

    @property
    def tables(self):
        return build_tables(self.n)

    def spec_hash(self):
        """SHA-256 of the canonical source document (or of the description)."""
        doc = self.source if self.source is not None else self.describe()
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def describe(self):
        return {"T": self.T, "n": self.n, "intensity": self.intensity.describe(),
                "rewards": self.rewards.describe(), "costs": self.costs.describe(),
                "factor": self.factor.describe() if self.factor else None, "x0": self.x0,
                "start": {"a": list(self.start_a), "b": list(self.start_b),
                          "nu": list(self.start_nu), "z": list(self.start_z)}}


@dataclass
class RunConfig:
    n_t: int = 100
    nu_steps: int = 10
    z_steps: int = 10
    tol: float | None = None
    k_max: int | None = None
    n_paths: int = 10000
    delta_switch: float | None = None
    seed: int = 0


# --------------------------------------------------------------------------

_num = {"type": "number"}
_vec = {"type": "array", "items": {"type": "integer", "enum": [-1, 0, 1]}}
_rate = {"oneOf": [_num, {"type": "object", "required": ["form"]}]}
_pl = {"oneOf": [_num, {"type": "object", "required": ["times", "values"],
                        "properties": {"times": {"type": "array", "items": _num},
                                       "values": {"type": "array", "items": _num}}}]}

SCHEMA = {
    "type": "object",
    "required": ["horizon", "plants", "intensity", "rewards", "switching_costs"],
    "properties": {
        "meta": {"type": "object", "properties": {"name": {"type": "string"},
                                                  "seed": {"type": "integer", "minimum": 0}}},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "plants": {"type": "integer", "minimum": 1, "maximum": 8},
        "start": {"type": "object", "properties": {"a": _vec, "b": _vec,
                                                   "nu": {"type": "array", "items": _num},
                                                   "z": {"type": "array", "items": _num}}},
        "intensity": {
            "type": "object", "required": ["kind"],
            "properties": {
                "kind": {"enum": ["per_plant", "tabular"]},
                "startup": {"type": "array", "items": _rate},
                "fail": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "rate_bound": {"type": "number", "exclusiveMinimum": 0},
                "lipschitz_nu": {"type": "number", "minimum": 0},
                "rates": {"type": "array", "items": {
                    "type": "object", "required": ["from", "to", "rate"],
                    "properties": {"from": _vec, "to": _vec, "b": _vec,
                                   "rate": {"type": "number", "minimum": 0}}}},
            },
        },
        "rewards": {"type": "object", "required": ["psi", "upsilon"],
                    "properties": {"psi": {"type": "array", "items": {"type": "object", "required": ["form"]}},
                                   "upsilon": {"type": "array", "items": {"type": "object", "required": ["form"]}},
                                   "k_psi": _num, "k_upsilon": _num}},
        "switching_costs": {
            "type": "object", "required": ["default", "loop_epsilon"],
            "properties": {"default": _pl, "loop_epsilon": _num,
                           "entries": {"type": "array", "items": {
                               "type": "object", "required": ["from", "to", "cost"],
                               "properties": {"from": _vec, "to": _vec, "cost": _pl}}}}},
        "factor": {"type": "object",
                   "required": ["drift", "vol", "x_min", "x_max", "n_x", "x0"],
                   "properties": {"drift": {"type": "array", "items": _num},
                                  "vol": {"type": "array", "items": _num},
                                  "x_min": _num, "x_max": _num,
                                  "n_x": {"type": "integer", "minimum": 2}, "x0": _num}},
        "x0": _num,
        "grid": {"type": "object", "properties": {
            "n_t": {"type": "integer", "minimum": 1},
            "nu_steps": {"type": "integer", "minimum": 1},
            "z_steps": {"type": "integer", "minimum": 1}}},
        "solver": {"type": "object", "properties": {
            "tol": {"type": "number", "exclusiveMinimum": 0},
            "k_max": {"type": "integer", "minimum": 1}}},
        "evaluation": {"type": "object", "properties": {
            "n_paths": {"type": "integer", "minimum": 1},
            "delta_switch": {"type": "number", "minimum": 0}}},
    },
}


def _where(err):
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def parse_problem(doc) -> tuple[ProblemSpec, RunConfig]:
    """Build a problem and run configuration from a parsed JSON document."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SpecError(e.message, _where(e))
    n = doc["plants"]
    T = float(doc["horizon"])

    def modes_ok(v, where):
        if len(v) != n:
            raise SpecError(f"expected {n} components, got {len(v)}", where)
        return tuple(v)

    inten = doc["intensity"]
    try:
        if inten["kind"] == "per_plant":
            if len(inten.get("startup", [])) != n or len(inten.get("fail", [])) != n:
                raise SpecError(f"per_plant intensity needs {n} startup and fail entries", "intensity")
            model = PerPlantIntensity([rate_function_from_dict(r) for r in inten["startup"]],
                                      inten["fail"], inten.get("rate_bound"), inten.get("lipschitz_nu"))
        else:
            entries = {}
            for j, r in enumerate(inten.get("rates", [])):
                w = f"intensity/rates/{j}"
                key = (modes_ok(r["from"], w), modes_ok(r["to"], w),
                       modes_ok(r["b"], w) if "b" in r else None)
                entries[key] = r["rate"]
            model = TabularIntensity(n, entries=entries, rate_bound=inten.get("rate_bound"))
    except (ValueError, KeyError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc), "intensity") from None

    rw = doc["rewards"]
    try:
        rewards = RewardSpec([term_from_dict(t) for t in rw["psi"]],
                             [term_from_dict(t) for t in rw["upsilon"]],
                             rw.get("k_psi"), rw.get("k_upsilon"))
    except ValueError as exc:
        raise SpecError(str(exc), "rewards") from None

    sc = doc["switching_costs"]
    overrides = {}
    for j, e in enumerate(sc.get("entries", [])):
        w = f"switching_costs/entries/{j}"
        overrides[(modes_ok(e["from"], w), modes_ok(e["to"], w))] = e["cost"]
    try:
        costs = SwitchCostSpec(n, sc["default"], overrides, float(sc["loop_epsilon"]))
    except ValueError as exc:
        raise SpecError(str(exc), "switching_costs") from None

    factor = None
    if "factor" in doc:
        f = doc["factor"]
        factor = FactorSpec.polynomial(f["drift"], f["vol"], f["x_min"], f["x_max"], f["n_x"], f["x0"])

    st = doc.get("start", {})
    meta = doc.get("meta", {})
    try:
        problem = ProblemSpec(
            T=T, n=n, intensity=model, rewards=rewards, costs=costs, factor=factor,
            x0=float(doc.get("x0", 0.0)), start_a=st.get("a"), start_b=st.get("b"),
            start_nu=st.get("nu"), start_z=st.get("z"), name=meta.get("name", "problem"),
            seed=int(meta.get("seed", 0)), source=doc,
        )
    except ValueError as exc:
        raise SpecError(str(exc), "start") from None

    g, s, ev = doc.get("grid", {}), doc.get("solver", {}), doc.get("evaluation", {})
    cfg = RunConfig(n_t=g.get("n_t", 100), nu_steps=g.get("nu_steps", 10), z_steps=g.get("z_steps", 10),
                    tol=s.get("tol"), k_max=s.get("k_max"), n_paths=ev.get("n_paths", 10000),
                    delta_switch=ev.get("delta_switch"), seed=int(meta.get("seed", 0)))
    return problem, cfg


def load_problem(path) -> tuple[ProblemSpec, RunConfig]:
    """Read a problem file.  Raises :class:`SpecError` with a line/field location."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return parse_problem(doc)
