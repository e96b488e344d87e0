"""Run configuration: a strict JSON document with one object per section.

Sections are ``model``, ``sigma``, ``noise``, ``mc``, ``analysis``,
``output`` and the optional ``sweep``. Unknown keys are fatal. Errors carry
the line of the offending key in the source file when it can be located.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, field

from .analysis import Budget, Thresholds
from .generators import CoefficientSource, ModelSpec, NoiseSpec, SigmaSequence

__all__ = ["ConfigError", "RunConfig", "load_config", "spec_hash", "dumps_canonical"]

_MISSING = object()


class ConfigError(ValueError):
    """Invalid configuration. ``at`` is the dotted key path of the problem."""

    def __init__(self, message, line=None, source=None, at=None):
        self.line = line
        self.source = source
        self.keys = tuple(re.sub(r"\[\d+\]", "", k) for k in at.split(".")) if at else ()
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v, path, lo=None, hi=None):
    if not _is_int(v):
        raise ConfigError(f"{path} must be an integer", at=path)
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"{path} must lie in [{lo}, {hi if hi is not None else 'inf'}]", at=path)
    return v


def _num(v, path):
    if not _is_num(v) or not math.isfinite(v):
        raise ConfigError(f"{path} must be a finite number", at=path)
    return float(v)


def _pnum(v, path):
    if v == "inf":
        return math.inf
    return _num(v, path)


def _num_list(v, path):
    if not isinstance(v, list):
        raise ConfigError(f"{path} must be a list of numbers", at=path)
    return [_num(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _blocks(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path} must be a non-empty list", at=path)
    out = []
    for i, b in enumerate(v):
        if _is_num(b):
            out.append(_num(b, f"{path}[{i}]"))
        elif isinstance(b, list) and all(isinstance(r, list) for r in b):
            out.append([_num_list(r, f"{path}[{i}]") for r in b])
        else:
            raise ConfigError(f"{path}[{i}] must be a number or a matrix (list of rows)", at=path)
    return out


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(f"{path} must be true or false", at=path)
    return v


def _str(v, path):
    if not isinstance(v, str):
        raise ConfigError(f"{path} must be a string", at=path)
    return v


_SIGMA_KEYS = {
    "power": {"scale": 1.0, "exponent": _MISSING},
    "geometric": {"scale": 1.0, "ratio": _MISSING},
    "constant_then_zero": {"scale": 1.0, "cutoff": _MISSING},
    "explicit": {"values": _MISSING},
}


def _strict(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must be an object", at=path)
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key}", at=f"{path}.{key}")
    return obj


def _section(fn, raw, name):
    try:
        return fn(raw)
    except ConfigError as exc:
        if not exc.keys:
            exc.keys = (name,)
        raise


def _model(raw):
    m = _strict(raw, {"dimension", "period", "x0", "coefficients", "noise_independent"}, "model")
    d = _int(m.get("dimension", 1), "model.dimension", 1)
    if "period" not in m:
        raise ConfigError("model.period is required", at="model.period")
    K = _int(m["period"], "model.period", 1)
    x0 = m.get("x0", 0.0)
    x0 = [_num(x0, "model.x0")] * d if _is_num(x0) else _num_list(x0, "model.x0")
    if len(x0) != d:
        raise ConfigError(f"model.x0 must have {d} components", at="model.x0")
    if "coefficients" not in m:
        raise ConfigError("model.coefficients is required", at="model.coefficients")
    c = m["coefficients"]
    if not isinstance(c, dict) or "kind" not in c:
        raise ConfigError("model.coefficients needs a kind", at="model.coefficients")
    kind = c["kind"]
    if kind == "explicit":
        _strict(c, {"kind", "blocks"}, "model.coefficients")
        coeff = {"kind": kind, "blocks": _blocks(c.get("blocks"), "model.coefficients.blocks")}
    elif kind == "unit_multiplier":
        _strict(c, {"kind"}, "model.coefficients")
        coeff = {"kind": kind}
    elif kind == "target_L":
        _strict(c, {"kind", "target_L"}, "model.coefficients")
        coeff = {"kind": kind, "target_L": _num(c.get("target_L", 1.0), "model.coefficients.target_L")}
    else:
        raise ConfigError(
            f"model.coefficients.kind must be explicit, unit_multiplier or target_L, got {kind!r}",
            at="model.coefficients.kind",
        )
    return {
        "dimension": d,
        "period": K,
        "x0": x0,
        "coefficients": coeff,
        "noise_independent": _bool(m.get("noise_independent", True), "model.noise_independent"),
    }


def _sigma(raw):
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("sigma needs a kind", at="sigma")
    kind = raw["kind"]
    if kind not in _SIGMA_KEYS:
        raise ConfigError(f"sigma.kind must be one of {sorted(_SIGMA_KEYS)}, got {kind!r}", at="sigma.kind")
    spec = _SIGMA_KEYS[kind]
    _strict(raw, {"kind", *spec}, "sigma")
    out = {"kind": kind}
    for key, default in spec.items():
        v = raw.get(key, default)
        if v is _MISSING:
            raise ConfigError(f"sigma.{key} is required for kind {kind}", at="sigma")
        if key == "values":
            out[key] = _num_list(v, "sigma.values")
        elif key == "cutoff":
            out[key] = _int(v, "sigma.cutoff", 0)
        else:
            out[key] = _num(v, f"sigma.{key}")
    return out


def _noise(raw):
    n = _strict(raw, {"law", "p", "values"}, "noise")
    if "law" not in n:
        raise ConfigError("noise.law is required", at="noise.law")
    law = _str(n["law"], "noise.law")
    out = {"law": law, "p": _pnum(n.get("p", 2.0), "noise.p")}
    if law == "explicit":
        out["values"] = _num_list(n.get("values", []), "noise.values")
    elif "values" in n:
        raise ConfigError("noise.values only applies to the explicit law", at="noise.values")
    return out


def _mc(raw):
    m = _strict(raw, {"paths", "horizon", "seed"}, "mc")
    if "horizon" not in m:
        raise ConfigError("mc.horizon is required", at="mc.horizon")
    return {
        "paths": _int(m.get("paths", 100), "mc.paths", 1),
        "horizon": _int(m["horizon"], "mc.horizon", 0),
        "seed": _int(m.get("seed", 0), "mc.seed", 0, 2**64 - 1),
    }


_TH = Thresholds()


def _analysis(raw):
    a = _strict(raw, {"p", "epsilon", "rho", "growth", "tolerance", "checkpoints", "max_horizon"}, "analysis")
    out = {
        "p": _pnum(a.get("p", _TH.p), "analysis.p"),
        "epsilon": _num(a.get("epsilon", _TH.epsilon), "analysis.epsilon"),
        "rho": _num(a.get("rho", _TH.rho), "analysis.rho"),
        "growth": _num(a.get("growth", _TH.growth), "analysis.growth"),
        "tolerance": _num(a.get("tolerance", _TH.tolerance), "analysis.tolerance"),
        "checkpoints": [],
        "max_horizon": None,
    }
    if out["p"] < 1:
        raise ConfigError("analysis.p must lie in [1, inf]", at="analysis.p")
    if out["tolerance"] <= 0:
        raise ConfigError("analysis.tolerance must be positive", at="analysis.tolerance")
    cps = a.get("checkpoints", [])
    if not isinstance(cps, list):
        raise ConfigError("analysis.checkpoints must be a list of integers", at="analysis.checkpoints")
    out["checkpoints"] = [_int(c, f"analysis.checkpoints[{i}]", 0) for i, c in enumerate(cps)]
    if a.get("max_horizon") is not None:
        out["max_horizon"] = _int(a["max_horizon"], "analysis.max_horizon", 1)
    return out


def _output(raw):
    o = _strict(raw, {"directory", "formats"}, "output")
    fmts = o.get("formats", ["csv", "json"])
    if not isinstance(fmts, list) or any(f not in ("csv", "json") for f in fmts):
        raise ConfigError("output.formats must be a list drawn from 'csv', 'json'", at="output.formats")
    return {"directory": _str(o.get("directory", "out"), "output.directory"), "formats": list(dict.fromkeys(fmts))}


def _sweep(raw):
    s = _strict(raw, {"target_L", "sigma_exponent", "path_budget"}, "sweep")
    out = {"path_budget": _int(s.get("path_budget", 1_000_000), "sweep.path_budget", 0)}
    for key in ("target_L", "sigma_exponent"):
        if key in s:
            out[key] = _num_list(s[key], f"sweep.{key}")
    return out


_SECTIONS = {
    "model": _model,
    "sigma": _sigma,
    "noise": _noise,
    "mc": _mc,
    "analysis": _analysis,
    "output": _output,
    "sweep": _sweep,
}
_REQUIRED = ("model", "sigma", "noise", "mc")


@dataclass
class RunConfig:
    model: dict
    sigma: dict
    noise: dict
    mc: dict
    analysis: dict = field(default_factory=lambda: _analysis({}))
    output: dict = field(default_factory=lambda: _output({}))
    sweep: dict | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key in raw:
            if key not in _SECTIONS:
                raise ConfigError(f"unknown section {key!r}", at=key)
        for key in _REQUIRED:
            if key not in raw:
                raise ConfigError(f"missing section {key!r}")
        parsed = {name: _section(fn, raw.get(name, {}), name) for name, fn in _SECTIONS.items() if name != "sweep"}
        parsed["sweep"] = _section(_sweep, raw["sweep"], "sweep") if "sweep" in raw else None
        cfg = cls(**parsed)
        try:
            cfg.model_spec()
        except ValueError as exc:
            raise ConfigError(f"invalid model: {exc}", at="model") from None
        return cfg

    def to_dict(self) -> dict:
        out = {
            "model": copy.deepcopy(self.model),
            "sigma": dict(self.sigma),
            "noise": dict(self.noise),
            "mc": dict(self.mc),
            "analysis": copy.deepcopy(self.analysis),
            "output": copy.deepcopy(self.output),
        }
        if out["noise"]["p"] == math.inf:
            out["noise"]["p"] = "inf"
        if out["analysis"]["p"] == math.inf:
            out["analysis"]["p"] = "inf"
        if self.sweep is not None:
            out["sweep"] = copy.deepcopy(self.sweep)
        return out

    def dumps(self) -> str:
        return dumps_canonical(self.to_dict())

    def replace(self, **sections) -> RunConfig:
        raw = self.to_dict()
        for name, value in sections.items():
            raw[name] = value
        return RunConfig.from_dict(raw)

    def model_spec(self) -> ModelSpec:
        m, s, n = self.model, self.sigma, self.noise
        c = m["coefficients"]
        if c["kind"] == "explicit":
            coeff = CoefficientSource.explicit(c["blocks"])
        elif c["kind"] == "unit_multiplier":
            coeff = CoefficientSource("unit_multiplier")
        else:
            coeff = CoefficientSource.random(c["target_L"])
        sigma = SigmaSequence(**s)
        noise = NoiseSpec(n["law"], n["p"], tuple(n.get("values", ())))
        return ModelSpec(m["dimension"], m["period"], coeff, sigma, noise, tuple(m["x0"]), m["noise_independent"])

    def thresholds(self) -> Thresholds:
        a = self.analysis
        return Thresholds(a["p"], a["epsilon"], a["rho"], a["growth"], a["tolerance"])

    def budget(self) -> Budget:
        return Budget(self.mc["paths"], self.mc["horizon"], self.analysis["max_horizon"])


def _key_line(text, keys):
    # line of the last key in ``keys`` found in sequence, or of the deepest one found
    pos, line = 0, None
    for key in keys:
        i = text.find(f'"{key}"', pos)
        if i < 0:
            break
        pos = i + 1
        line = text.count("\n", 0, i) + 1
    return line


def load_config(path) -> RunConfig:
    """Parse and validate a config file; errors name the file and line.

    An unreadable file raises the underlying ``OSError``.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, source=str(path)) from None
    try:
        return RunConfig.from_dict(raw)
    except ConfigError as exc:
        line = _key_line(text, exc.keys) if exc.keys else None
        raise ConfigError(str(exc), line=line, source=str(path)) from None


def _clean(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps_canonical(obj) -> str:
    """JSON with sorted keys, non-finite floats as strings, trailing newline."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def spec_hash(spec: ModelSpec) -> str:
    return hashlib.sha256(json.dumps(_clean(spec.to_dict()), sort_keys=True).encode()).hexdigest()
