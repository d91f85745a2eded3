"""Run configurations: TOML or JSON files validated against a JSON schema."""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .discretization import DiscretizedModel, build_mode_grid, default_u_max
from .model_spec import (FormFactor, ModelSpec, PeriodicEnvelope, RadialProfile, ReservoirSpec,
                         golden_rule_population)

DEFAULTS = {
    "discretization": {"modes": 400, "scheme": "uniform"},
    "integrator": {"steps_per_cycle": 512, "samples_per_cycle": 16, "step_doubling": False},
    "run": {"cycles": 200, "detail": {"head": 1, "tail": 8, "stride": 0}},
    "convergence": {"tol": 1e-6, "window": 5},
    "output": {"snapshot": True},
}
SWEEP_AXES = ("g", "period", "beta1", "beta2", "modes")
BUNDLED = ("equilibrium_null", "two_temperature_engine_sweep", "strict_positivity")


class ConfigError(ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config error at '{key}': {message}")


def schema() -> dict:
    text = resources.files("cyclic_thermo").joinpath("configs/schema.json").read_text()
    return json.loads(text)


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("cyclic_thermo").joinpath(f"configs/{name}.toml")))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_dict(raw: dict):
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        key = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        if exc.validator == "additionalProperties":
            extra = sorted(set(exc.instance) - set(exc.schema.get("properties", {})))
            key = "/".join([key] + extra) if key != "<root>" else "/".join(extra)
        if exc.validator == "required":
            missing = [r for r in exc.validator_value if r not in exc.instance]
            key = "/".join(([key] if key != "<root>" else []) + missing[:1])
        raise ConfigError(key, exc.message) from None


def _envelope(d: dict, period: float) -> PeriodicEnvelope:
    tau = d.get("period", period)
    kind = d["kind"]
    if kind == "constant":
        return PeriodicEnvelope.constant(tau, d.get("value", 1.0))
    if kind == "cosine":
        return PeriodicEnvelope.cosine(tau, d.get("amplitude", 1.0), d.get("offset", 0.0))
    terms = {t["m"]: complex(t.get("re", 0.0), t.get("im", 0.0)) for t in d.get("terms", [])}
    return PeriodicEnvelope.from_harmonics(tau, terms, real=d.get("real", True))


def _profile(d: dict) -> RadialProfile:
    kw = {k: d[k] for k in ("power", "scale", "amplitude", "measure") if k in d}
    if d["kind"] == "tabulated":
        kw.update(table_u=tuple(d.get("table_u", ())), table_phi=tuple(d.get("table_phi", ())))
    return RadialProfile(kind=d["kind"], **kw)


@dataclass
class RunConfig:
    """Resolved configuration (defaults merged in)."""

    data: dict
    source: str = None

    @classmethod
    def from_dict(cls, raw: dict, source=None):
        validate_dict(raw)
        return cls(_merge(DEFAULTS, raw), source)

    @classmethod
    def load(cls, path):
        path = Path(path)
        text = path.read_bytes()
        try:
            raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text.decode())
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError("<file>", f"cannot parse {path.name}: {exc}") from None
        return cls.from_dict(raw, str(path))

    @property
    def name(self):
        return self.data.get("name", "run")

    def content_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def model(self) -> ModelSpec:
        m = self.data["model"]
        try:
            reservoirs = tuple(
                ReservoirSpec(r["beta"], r.get("mu", 0.0),
                              FormFactor(_envelope(r["envelope"], m["period"]), _profile(r["profile"])))
                for r in self.data["reservoirs"])
            pop = m.get("initial_population", 0.5)
            p0 = 0.5 if isinstance(pop, str) else pop
            spec = ModelSpec(m["omega0"], m["g"], reservoirs, p0, m.get("strip_width", 0.5))
            if pop == "golden_rule":
                spec = spec.replace(initial_population=golden_rule_population(spec))
        except ValueError as exc:
            raise ConfigError("model", str(exc)) from None
        return spec

    def discretized(self, model: ModelSpec = None) -> DiscretizedModel:
        model = self.model() if model is None else model
        d = self.data["discretization"]
        u_max = d.get("u_max") or default_u_max(model)
        try:
            grids = [build_mode_grid(r, d["scheme"], d["modes"], u_max, resonance=model.gap)
                     for r in model.reservoirs]
        except ValueError as exc:
            raise ConfigError("discretization", str(exc)) from None
        return DiscretizedModel(model, grids)

    def with_point(self, point: dict) -> "RunConfig":
        """Copy with sweep-axis values substituted and the sweep section removed."""
        data = copy.deepcopy(self.data)
        data.pop("sweep", None)
        for axis, v in point.items():
            if axis == "g":
                data["model"]["g"] = v
            elif axis == "period":
                data["model"]["period"] = v
                for r in data["reservoirs"]:
                    r["envelope"].pop("period", None)
            elif axis in ("beta1", "beta2"):
                data["reservoirs"][int(axis[-1]) - 1]["beta"] = v
            elif axis == "modes":
                data["discretization"]["modes"] = int(v)
        return RunConfig(data, self.source)

    def sweep_points(self):
        """Cartesian product of the non-empty sweep axes, in a fixed order."""
        sw = self.data.get("sweep", {})
        axes = [(a, sw[a]) for a in SWEEP_AXES if sw.get(a)]
        if not axes:
            return [{}]
        pts = [dict(zip([a for a, _ in axes], combo)) for combo in itertools.product(*[v for _, v in axes])]
        limit = sw.get("max_points", 256)
        if len(pts) > limit:
            raise ConfigError("sweep/max_points", f"{len(pts)} points exceed the limit {limit}")
        return pts
