"""JSON run configurations: parsing, validation and resolution.

A configuration names a registered protocol, its parameters, a schedule and
the ensemble size. Optional blocks add several curves sharing one sample
grid (``curves``), an envelope fit (``fit``) and a parameter sweep
(``sweep``). Numbers may be given as small arithmetic expressions in
strings, e.g. ``"20*pi"``.
"""

from __future__ import annotations

import ast
import copy
import difflib
import json
import math
import operator
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .codes import ProtocolParams
from .engine import OBSERVABLES, Schedule
from .protocols import PROTOCOLS, build_protocol

__all__ = ["ConfigError", "RunConfig", "CurveSpec", "load_config", "parse_config",
           "evaluate_number", "PROTOCOL_EXTRAS"]

# scheme-specific knobs accepted in ``params`` besides the ProtocolParams fields
PROTOCOL_EXTRAS = {
    "classical_drive": {"noise_interval"},
    "interaction": {"noise_interval"},
    "pulsed_dd": {"tau", "omega0", "noise_interval", "fz_range", "fz_interval"},
    "raman_t1": {"dressed", "initial"},
    "flipflop": set(),
    "ramsey_flipflop": set(),
    "sideband": {"boson_dim", "phonon_gamma"},
    "ms": {"initial"},
    "superradiance": set(),
    "multilevel": set(),
    "both_decay": set(),
    "eight_qubit_demo": set(),
}

_PARAM_FIELDS = {f.name for f in fields(ProtocolParams)} - {"extra"}
_SCHEDULE_KEYS = {"dt", "total_time", "sample_times", "sample_grid", "ec_interval", "dd_period",
                  "dd_offset", "dd", "noise_interval", "ec_dead_time"}
_TOP_KEYS = {"protocol", "description", "kind", "params", "schedule", "n_traj", "master_seed",
             "outputs", "curves", "fit", "sweep", "sensitivity", "comment"}
_KINDS = ("ensemble", "sensitivity")


class ConfigError(ValueError):
    """Invalid configuration; carries the JSON path and source line."""

    def __init__(self, message: str, path: str = "", line: int | None = None, source: str = ""):
        self.message, self.path, self.line, self.source = message, path, line, source
        loc = source or "<config>"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {path + ': ' if path else ''}{message}")


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt, "exp": math.exp, "log": math.log}


def evaluate_number(value: Any) -> float:
    """Number or arithmetic string (``+ - * / **``, ``pi``, ``e``, ``sqrt``,
    ``exp``, ``log``) to float."""
    if isinstance(value, bool):
        raise ValueError("expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a number, got {type(value).__name__}")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"unsupported expression {value!r}")

    try:
        tree = ast.parse(value, mode="eval")
    except SyntaxError:
        raise ValueError(f"cannot parse number {value!r}") from None
    try:
        out = ev(tree)
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        if isinstance(exc, ValueError) and str(exc).startswith("unsupported"):
            raise
        raise ValueError(f"cannot evaluate {value!r}: {exc}") from None
    if not math.isfinite(out):
        raise ValueError(f"{value!r} is not finite")
    return out


def _locate(text: str, path: list) -> int | None:
    """Best-effort source line of a JSON path: walk the keys in order."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"' + re.escape(str(key)) + r'"\s*:').search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if path else None


def _fmt_path(path: list) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (("." if out else "") + str(p))
    return out


@dataclass
class CurveSpec:
    label: str
    protocol: str
    params: ProtocolParams
    schedule: Schedule
    ec: bool = True


@dataclass
class RunConfig:
    """Resolved configuration of a single run (one or more curves)."""

    protocol: str
    params: dict
    schedule: dict
    n_traj: int
    master_seed: int
    outputs: list[str]
    curves: list[CurveSpec]
    kind: str = "ensemble"
    fit: dict | None = None
    sweep: dict | None = None
    sensitivity: dict = field(default_factory=dict)
    description: str = ""
    raw: dict = field(default_factory=dict)
    source: str = ""

    def plan(self) -> dict:
        """Human-readable summary of what a run would do."""
        out = {"kind": self.kind, "protocol": self.protocol, "n_traj": self.n_traj,
               "master_seed": self.master_seed, "outputs": self.outputs, "curves": []}
        for c in self.curves:
            s = c.schedule
            out["curves"].append({
                "label": c.label, "protocol": c.protocol, "ec": c.ec,
                "params": _params_dict(c.params), "dt": s.dt, "total_time": s.total_time,
                "ec_interval": s.ec_interval, "n_samples": len(s.sample_times),
                "steps_per_trajectory": int(math.ceil(s.total_time / s.dt - 1e-9)),
            })
        if self.fit:
            out["fit"] = self.fit
        return out


def _params_dict(p: ProtocolParams) -> dict:
    d = p.to_dict() if hasattr(p, "to_dict") else {}
    return d


class _Parser:
    def __init__(self, text: str, source: str):
        self.text, self.source = text, source

    def error(self, message, path):
        return ConfigError(message, _fmt_path(path), _locate(self.text, path), self.source)

    def number(self, value, path, positive=False, nonneg=False):
        try:
            v = evaluate_number(value)
        except ValueError as exc:
            raise self.error(str(exc), path) from None
        if positive and not v > 0:
            raise self.error(f"must be positive, got {v}", path)
        if nonneg and v < 0:
            raise self.error(f"must be non-negative, got {v}", path)
        return v

    def integer(self, value, path, minimum=None):
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(f"expected an integer, got {value!r}", path)
        if minimum is not None and value < minimum:
            raise self.error(f"must be at least {minimum}", path)
        return value

    def mapping(self, value, path):
        if not isinstance(value, dict):
            raise self.error(f"expected an object, got {type(value).__name__}", path)
        return value

    def unknown_keys(self, d, allowed, path):
        for k in d:
            if k not in allowed:
                hint = difflib.get_close_matches(k, sorted(allowed), n=1)
                extra = f" (did you mean {hint[0]!r}?)" if hint else ""
                raise self.error(f"unknown key {k!r}{extra}; allowed: {sorted(allowed)}", path + [k])

    # -- blocks -------------------------------------------------------------------
    def protocol(self, name, path):
        if not isinstance(name, str):
            raise self.error("protocol must be a string", path)
        if name not in PROTOCOLS:
            hint = difflib.get_close_matches(name, sorted(PROTOCOLS), n=1)
            extra = f"did you mean {hint[0]!r}? " if hint else ""
            raise self.error(f"unknown protocol {name!r}; {extra}available: {', '.join(sorted(PROTOCOLS))}",
                             path)
        return name

    def params(self, protocol, d, path) -> ProtocolParams:
        d = dict(self.mapping(d, path))
        kw: dict[str, Any] = {}
        extra: dict[str, Any] = {}
        raman = d.pop("raman", None)
        if raman is not None:
            rp = path + ["raman"]
            self.mapping(raman, rp)
            self.unknown_keys(raman, {"omega_eff", "epsilon"}, rp)
            for k in ("omega_eff", "epsilon"):
                if k not in raman:
                    raise self.error(f"missing {k!r}", rp)
            w = self.number(raman["omega_eff"], rp + ["omega_eff"], positive=True)
            eps = self.number(raman["epsilon"], rp + ["epsilon"], positive=True)
            # equal legs: omega_eff = g*omega/delta with omega/delta = epsilon
            kw.update(g=w / eps, omega=w / eps, delta=w / eps ** 2)
        allowed = _PARAM_FIELDS | PROTOCOL_EXTRAS[protocol] | {"T1"}
        self.unknown_keys(d, allowed, path)
        for k, v in d.items():
            p = path + [k]
            if k == "noise_range" or k == "fz_range":
                if not (isinstance(v, list) and len(v) == 2):
                    raise self.error("expected [low, high]", p)
                lo, hi = (self.number(x, p + [i]) for i, x in enumerate(v))
                if hi < lo:
                    raise self.error("low must not exceed high", p)
                (kw if k == "noise_range" else extra)[k] = (lo, hi)
            elif k == "T1":
                kw["gamma"] = 1.0 / self.number(v, p, positive=True)
            elif k in _PARAM_FIELDS:
                kw[k] = self.number(v, p, nonneg=(k == "gamma"))
            elif k == "initial":
                if not (isinstance(v, list) and len(v) == 2):
                    raise self.error("expected two code-state coefficients", p)
                extra[k] = [complex(self.number(x, p + [i])) if not isinstance(x, list)
                            else complex(self.number(x[0], p + [i, 0]), self.number(x[1], p + [i, 1]))
                            for i, x in enumerate(v)]
            elif k == "dressed":
                if not isinstance(v, bool):
                    raise self.error("expected true or false", p)
                extra[k] = v
            elif k == "boson_dim":
                extra[k] = self.integer(v, p, minimum=2)
            else:
                extra[k] = self.number(v, p, positive=True)
        try:
            return ProtocolParams(**kw, extra=extra)
        except ValueError as exc:
            raise self.error(str(exc), path) from None

    def schedule(self, d, path) -> Schedule:
        d = self.mapping(d, path)
        self.unknown_keys(d, _SCHEDULE_KEYS, path)
        for k in ("dt", "total_time"):
            if k not in d:
                raise self.error(f"missing required key {k!r}", path)
        kw: dict[str, Any] = {"dt": self.number(d["dt"], path + ["dt"], positive=True),
                              "total_time": self.number(d["total_time"], path + ["total_time"],
                                                        nonneg=True)}
        for k in ("ec_interval", "dd_period", "dd_offset", "noise_interval"):
            if d.get(k) is not None:
                kw[k] = self.number(d[k], path + [k], positive=(k != "dd_offset"), nonneg=True)
        if "ec_dead_time" in d:
            kw["ec_dead_time"] = self.number(d["ec_dead_time"], path + ["ec_dead_time"], nonneg=True)
        if "dd" in d:
            if not isinstance(d["dd"], bool):
                raise self.error("expected true or false", path + ["dd"])
            kw["dd"] = d["dd"]
        if "sample_times" in d and "sample_grid" in d:
            raise self.error("give either sample_times or sample_grid", path)
        if "sample_times" in d:
            st = d["sample_times"]
            if not isinstance(st, list) or not st:
                raise self.error("expected a non-empty list", path + ["sample_times"])
            kw["sample_times"] = [self.number(x, path + ["sample_times", i]) for i, x in enumerate(st)]
        elif "sample_grid" in d:
            gp = path + ["sample_grid"]
            g = self.mapping(d["sample_grid"], gp)
            self.unknown_keys(g, {"step", "start"}, gp)
            if "step" not in g:
                raise self.error("missing 'step'", gp)
            step = self.number(g["step"], gp + ["step"], positive=True)
            start = self.number(g.get("start", 0.0), gp + ["start"], nonneg=True)
            k = int(math.floor((kw["total_time"] - start) / step + 1e-9))
            kw["sample_times"] = [start + i * step for i in range(k + 1)]
        try:
            return Schedule(**kw)
        except ValueError as exc:
            raise self.error(str(exc), path) from None


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(d: dict, dotted: str, value) -> dict:
    """Copy of ``d`` with ``value`` stored under a dotted key path."""
    out = copy.deepcopy(d)
    cur = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ValueError(f"cannot set {dotted!r}: {k!r} is not an object")
    cur[keys[-1]] = value
    return out


def parse_config(raw: dict, text: str = "", source: str = "") -> RunConfig:
    """Validate a decoded configuration and resolve it into a :class:`RunConfig`."""
    P = _Parser(text or json.dumps(raw, indent=2), source)
    P.mapping(raw, [])
    P.unknown_keys(raw, _TOP_KEYS, [])
    kind = raw.get("kind", "ensemble")
    if kind not in _KINDS:
        raise P.error(f"kind must be one of {list(_KINDS)}", ["kind"])
    if "protocol" not in raw:
        raise P.error("missing required key 'protocol'", [])
    protocol = P.protocol(raw["protocol"], ["protocol"])
    params_raw = raw.get("params", {})
    P.mapping(params_raw, ["params"])
    sensitivity = dict(P.mapping(raw.get("sensitivity", {}), ["sensitivity"]))
    if kind == "sensitivity":
        P.unknown_keys(sensitivity, {"n", "T", "t_max", "grid"}, ["sensitivity"])
        params = P.params(protocol, params_raw, ["params"])
        if not params.gamma > 0:
            raise P.error("a sensitivity run needs gamma > 0 (or T1)", ["params"])
        for k in ("n", "T", "t_max"):
            if k in sensitivity:
                sensitivity[k] = P.number(sensitivity[k], ["sensitivity", k], positive=True)
        if "grid" in sensitivity:
            sensitivity["grid"] = P.integer(sensitivity["grid"], ["sensitivity", "grid"], minimum=2)
        curves = [CurveSpec("sensitivity", protocol, params, Schedule(1.0, 0.0))]
        cfg = RunConfig(protocol, dict(params_raw), {}, 0, 0, [], curves, kind,
                        sensitivity=sensitivity, description=str(raw.get("description", "")),
                        raw=raw, source=source)
        cfg.sweep = _sweep(P, raw) if "sweep" in raw else None
        return cfg

    for k in ("schedule", "n_traj", "master_seed"):
        if k not in raw:
            raise P.error(f"missing required key {k!r}", [])
    n_traj = P.integer(raw["n_traj"], ["n_traj"], minimum=1)
    seed = P.integer(raw["master_seed"], ["master_seed"], minimum=0)
    outputs = raw.get("outputs", ["fidelity", "survival", "signal"])
    if not isinstance(outputs, list) or not outputs:
        raise P.error("expected a non-empty list of observables", ["outputs"])
    for i, o in enumerate(outputs):
        if o not in OBSERVABLES:
            raise P.error(f"unknown observable {o!r}; choose from {list(OBSERVABLES)}", ["outputs", i])
    sched_raw = P.mapping(raw["schedule"], ["schedule"])

    curves_raw = raw.get("curves") or [{"label": "main"}]
    if not isinstance(curves_raw, list):
        raise P.error("expected a list of curves", ["curves"])
    curves = []
    base_times = None
    for i, c in enumerate(curves_raw):
        cp = ["curves", i]
        P.mapping(c, cp)
        P.unknown_keys(c, {"label", "protocol", "params", "schedule", "ec", "comment"}, cp)
        label = c.get("label", f"curve{i}")
        if not isinstance(label, str) or not re.fullmatch(r"[A-Za-z0-9_.=+-]+", label):
            raise P.error("label must be a non-empty word ([A-Za-z0-9_.=+-])", cp + ["label"])
        if any(x.label == label for x in curves):
            raise P.error(f"duplicate curve label {label!r}", cp + ["label"])
        proto = P.protocol(c.get("protocol", protocol), cp + ["protocol"])
        pr = _merge(params_raw, P.mapping(c.get("params", {}), cp + ["params"]))
        if "raman" in c.get("params", {}):
            pr = {k: v for k, v in pr.items() if k not in ("g", "omega", "delta")}
            pr["raman"] = c["params"]["raman"]
        params = P.params(proto, pr, cp + ["params"] if "params" in c else ["params"])
        sr = _merge(sched_raw, P.mapping(c.get("schedule", {}), cp + ["schedule"]))
        sched = P.schedule(sr, cp + ["schedule"] if "schedule" in c else ["schedule"])
        try:
            sched.validate_for(build_protocol(proto, params))
        except ValueError as exc:
            raise P.error(str(exc), cp + ["schedule", "dt"] if "schedule" in c else ["schedule", "dt"]) \
                from None
        ec = c.get("ec", True)
        if not isinstance(ec, bool):
            raise P.error("expected true or false", cp + ["ec"])
        if base_times is None:
            base_times = sched.sample_times
        elif not np.allclose(base_times, sched.sample_times, rtol=0, atol=1e-12):
            raise P.error("all curves must share the same sample times", cp)
        curves.append(CurveSpec(label, proto, params, sched, ec))

    fit = None
    if "fit" in raw:
        fp = ["fit"]
        f = P.mapping(raw["fit"], fp)
        P.unknown_keys(f, {"observable", "period", "mode", "fit_amplitude", "curves"}, fp)
        fit = {"observable": f.get("observable", "signal"), "mode": f.get("mode", "contrast"),
               "fit_amplitude": bool(f.get("fit_amplitude", True)),
               "period": P.number(f["period"], fp + ["period"], positive=True)
               if f.get("period") is not None else None,
               "curves": f.get("curves")}
        if fit["observable"] not in OBSERVABLES:
            raise P.error(f"unknown observable {fit['observable']!r}", fp + ["observable"])
        if fit["mode"] not in ("contrast", "max"):
            raise P.error("mode must be 'contrast' or 'max'", fp + ["mode"])
        if fit["curves"] is not None:
            labels = [c.label for c in curves]
            if not isinstance(fit["curves"], list) or any(x not in labels for x in fit["curves"]):
                raise P.error(f"curves must list labels from {labels}", fp + ["curves"])

    cfg = RunConfig(protocol, dict(params_raw), dict(sched_raw), n_traj, seed, list(outputs),
                    curves, kind, fit, None, {}, str(raw.get("description", "")), raw, source)
    cfg.sweep = _sweep(P, raw) if "sweep" in raw else None
    return cfg


def _sweep(P: _Parser, raw: dict) -> dict:
    sp = ["sweep"]
    s = P.mapping(raw["sweep"], sp)
    P.unknown_keys(s, {"parameter", "values", "points", "comment"}, sp)
    if ("values" in s) == ("points" in s):
        raise P.error("give exactly one of 'values' (with 'parameter') or 'points'", sp)
    points = []
    if "values" in s:
        if not isinstance(s.get("parameter"), str):
            raise P.error("'parameter' must be a dotted path such as 'params.g'", sp + ["parameter"])
        vals = s["values"]
        if not isinstance(vals, list) or not vals:
            raise P.error("sweep list must be non-empty", sp + ["values"])
        for i, v in enumerate(vals):
            P.number(v, sp + ["values", i])
            points.append({"label": f"{s['parameter'].split('.')[-1]}={v}", "set": {s["parameter"]: v}})
    else:
        pts = s["points"]
        if not isinstance(pts, list) or not pts:
            raise P.error("sweep list must be non-empty", sp + ["points"])
        for i, p in enumerate(pts):
            pp = sp + ["points", i]
            P.mapping(p, pp)
            P.unknown_keys(p, {"label", "set"}, pp)
            if not isinstance(p.get("set"), dict) or not p["set"]:
                raise P.error("'set' must map dotted paths to values", pp)
            points.append({"label": str(p.get("label", f"point{i}")), "set": dict(p["set"])})
    for i, p in enumerate(points):
        for key in p["set"]:
            if key.split(".")[0] not in ("params", "schedule", "n_traj", "sensitivity"):
                raise P.error(f"cannot sweep {key!r}: paths start with params., schedule., "
                              "sensitivity. or n_traj", sp)
    return {"points": points}


def sweep_point_config(cfg: RunConfig, k: int) -> RunConfig:
    """Resolved configuration of sweep point ``k`` (seed ``master_seed + k``)."""
    raw = {key: v for key, v in cfg.raw.items() if key != "sweep"}
    for path, value in cfg.sweep["points"][k]["set"].items():
        raw = set_path(raw, path, value)
        if path.startswith("params.raman."):
            raw["params"] = {a: b for a, b in raw["params"].items() if a not in ("g", "omega", "delta")}
    if cfg.kind == "ensemble":
        raw["master_seed"] = cfg.master_seed + k
    return parse_config(raw, source=f"{cfg.source} (sweep point {k})")


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno,
                          source=str(path)) from None
    return parse_config(raw, text, str(path))
