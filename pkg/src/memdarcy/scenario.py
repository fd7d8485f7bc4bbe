"""Scenario files: strict TOML parsing, range validation and a stable digest."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re

import tomli

from .errors import NonMonotoneLaw, ParseError, ValidationError

DEFAULTS = {
    "mode": "macro",
    "seed": 0,
    "geometry": {"r0": 0.25, "center": [0.5, 0.5], "h_cell": 0.1},
    "evolution": {"family": "constant", "a": 0.0, "omega": 0.0, "g": "sinsin",
                  "R_c": 0.45, "T": 1.0},
    "physics": {"mu": 1.0, "f": [0.0, 0.0], "p_b": "linear", "v0_init": "zero"},
    "grids": {"N_time": 8, "macro_n": 8, "eps_list": [0.5, 0.25, 0.125]},
    "tolerances": {"linear": 1e-10, "quadrature": 1e-8},
}
MODES = ("kernel", "macro", "verify", "diagnostics")
FAMILIES = ("constant", "linear", "sinusoidal", "macro")


class Scenario:
    """Validated scenario with section access as attributes (``sc.geometry["r0"]``)."""

    def __init__(self, data: dict):
        self.data = data

    def __getattr__(self, name):
        try:
            return self.__dict__["data"][name]
        except KeyError as exc:
            raise AttributeError(name) from exc

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def kernel_key(self) -> str:
        """Digest of the fields that determine the kernel (cache key)."""
        sub = {"geometry": self.data["geometry"], "evolution": self.data["evolution"],
               "mu": self.data["physics"]["mu"], "v0_init": self.data["physics"]["v0_init"],
               "N_time": self.data["grids"]["N_time"], "macro_n": self.data["grids"]["macro_n"],
               "linear": self.data["tolerances"]["linear"]}
        return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()

    def with_mode(self, mode):
        data = copy.deepcopy(self.data)
        data["mode"] = mode
        out = Scenario(data)
        validate(out.data)
        return out


def _locate_key(text, section, key):
    """(line, column) of ``key`` inside ``[section]`` (1-based), or (None, None)."""
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[\s*([A-Za-z0-9_.-]+)\s*\]", stripped)
        if m:
            current = m.group(1)
            if section is not None and current == section and key is None:
                return lineno, line.index("[") + 1
            continue
        m = re.match(r"\s*([A-Za-z0-9_\"'-]+)\s*=", line)
        if m and current == section and m.group(1).strip("\"'") == key:
            return lineno, m.start(1) + 1
    return None, None


def parse_text(text: str) -> Scenario:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        raise ParseError(f"malformed scenario: {msg}", line, col) from exc
    data = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if key not in DEFAULTS:
            line, col = _locate_key(text, None, key)
            if line is None:
                line, col = _locate_key(text, key, None)
            raise ParseError(f"unknown key '{key}'", line, col)
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(value, dict):
                line, col = _locate_key(text, None, key)
                raise ParseError(f"'{key}' must be a table", line, col)
            for sub, v in value.items():
                if sub not in DEFAULTS[key]:
                    line, col = _locate_key(text, key, sub)
                    raise ParseError(f"unknown key '{key}.{sub}'", line, col)
                data[key][sub] = v
        else:
            data[key] = value
    validate(data)
    return Scenario(data)


def parse_scenario(path) -> Scenario:
    with open(path, "r") as fh:
        return parse_text(fh.read())


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate(data: dict) -> None:
    """Collect every range violation and raise them together."""
    bad = []
    g, e, p, gr, tol = (data[k] for k in ("geometry", "evolution", "physics", "grids", "tolerances"))

    if data["mode"] not in MODES:
        bad.append(f"mode must be one of {', '.join(MODES)} (got {data['mode']!r})")
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
        bad.append("seed must be an integer")

    r0 = g["r0"]
    center_ok = (isinstance(g["center"], list) and len(g["center"]) == 2
                 and all(_is_number(c) for c in g["center"]))
    if not center_ok:
        bad.append("geometry.center must be a pair of numbers")
    if not _is_number(r0) or not 0.0 < r0 < 0.5:
        bad.append(f"geometry.r0 must lie in (0, 0.5) (got {r0!r})")
    elif center_ok:
        cx, cy = g["center"]
        if min(cx, cy, 1 - cx, 1 - cy) - r0 < 0.05:
            bad.append("geometry.r0 and geometry.center leave less than 0.05 to the cell boundary")
    if not _is_number(g["h_cell"]) or not 0.0 < g["h_cell"] <= 0.25:
        bad.append(f"geometry.h_cell must lie in (0, 0.25] (got {g['h_cell']!r})")

    if e["family"] not in FAMILIES:
        bad.append(f"evolution.family must be one of {', '.join(FAMILIES)}")
    if e["g"] not in ("sinsin", "one"):
        bad.append("evolution.g must be 'sinsin' or 'one'")
    for k in ("a", "omega"):
        if not _is_number(e[k]):
            bad.append(f"evolution.{k} must be a number")
    if not _is_number(e["T"]) or e["T"] <= 0:
        bad.append("evolution.T must be positive")
    if not _is_number(e["R_c"]) or not (_is_number(r0) and r0 < e["R_c"] < 0.5):
        bad.append("evolution.R_c must lie in (geometry.r0, 0.5)")

    if not _is_number(p["mu"]) or p["mu"] <= 0:
        bad.append("physics.mu must be positive")
    if not (isinstance(p["f"], list) and len(p["f"]) == 2 and all(_is_number(c) for c in p["f"])):
        bad.append("physics.f must be a pair of numbers")
    if not (p["p_b"] in ("linear", "zero") or _is_number(p["p_b"])):
        bad.append("physics.p_b must be 'linear', 'zero' or a number")
    if p["v0_init"] not in ("zero", "stokes_mode"):
        bad.append("physics.v0_init must be 'zero' or 'stokes_mode'")

    N = gr["N_time"]
    if not isinstance(N, int) or isinstance(N, bool) or not 1 <= N <= 4096:
        bad.append("grids.N_time must be an integer in [1, 4096]")
    mn = gr["macro_n"]
    if not isinstance(mn, int) or isinstance(mn, bool) or not 1 <= mn <= 128:
        bad.append("grids.macro_n must be an integer in [1, 128]")
    el = gr["eps_list"]
    if not isinstance(el, list) or not el:
        bad.append("grids.eps_list must be a non-empty list")
    else:
        for eps in el:
            if not _is_number(eps) or eps <= 0 or abs(1 / eps - round(1 / eps)) > 1e-9 \
                    or not 2 <= round(1 / eps) <= 32:
                bad.append(f"grids.eps_list entry {eps!r} is not 1/n with n in [2, 32]")

    for k in ("linear", "quadrature"):
        if not _is_number(tol[k]) or tol[k] <= 0:
            bad.append(f"tolerances.{k} must be positive")

    if not bad:
        from .kinematics import MicrostructureEvolution, RadiusLaw
        ev = MicrostructureEvolution(RadiusLaw(e["family"], float(r0), float(e["a"]),
                                               float(e["omega"]), e["g"]),
                                     center=tuple(g["center"]), R_c=float(e["R_c"]),
                                     T=float(e["T"]))
        try:
            ev.check_admissible()
        except NonMonotoneLaw as exc:
            bad.append(f"evolution: {exc}")
    if bad:
        raise ValidationError(bad)
