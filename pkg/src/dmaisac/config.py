"""Scenario files (JSON) with unit strings, validated into ScenarioConfig.

Quantities may be bare numbers (SI units; angles in degrees) or strings such
as "30 dB", "-100 dBm", "20 GHz", "25 deg", "lambda/5", "0.5 lambda".
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .scenario import (C0, PanelConfig, ScenarioConfig, SphericalPoint, aoi_points, db_to_linear,
                       dbm_to_watt, pathloss_reflections)

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_UNITS = {
    "power": {"W": 1.0, "mW": 1e-3, "uW": 1e-6},
    "freq": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3},
}


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def parse_quantity(value, kind, wavelength=None):
    """Convert one config value to SI (angles to radians, ratios to linear)."""
    if isinstance(value, bool):
        raise ValueError(f"expected a {kind}, got {value!r}")
    if isinstance(value, (int, float)):
        x = float(value)
        return float(np.deg2rad(x)) if kind == "angle" else x
    if not isinstance(value, str):
        raise ValueError(f"expected a number or string {kind}, got {value!r}")
    s = value.strip().replace("−", "-")
    if kind == "length":
        m = re.fullmatch(r"lambda\s*/\s*(" + _NUM + ")", s)
        if m:
            return _need_lambda(wavelength) / float(m.group(1))
        m = re.fullmatch("(" + _NUM + r")\s*\*?\s*lambda", s)
        if m:
            return float(m.group(1)) * _need_lambda(wavelength)
    m = re.fullmatch("(" + _NUM + r")\s*([A-Za-z]*)", s)
    if not m:
        raise ValueError(f"cannot parse {value!r} as a {kind}")
    x, unit = float(m.group(1)), m.group(2)
    if kind == "angle":
        if unit in ("", "deg"):
            return float(np.deg2rad(x))
        if unit == "rad":
            return x
    elif kind == "ratio":
        if unit == "dB":
            return float(db_to_linear(x))
        if unit == "":
            return x
    elif kind == "power" and unit == "dBm":
        return float(dbm_to_watt(x))
    elif unit == "" or unit in _UNITS.get(kind, {}):
        return x * _UNITS.get(kind, {}).get(unit, 1.0)
    raise ValueError(f"unit {unit!r} not valid for a {kind} ({value!r})")


def _need_lambda(wavelength):
    if wavelength is None:
        raise ValueError("wavelength-relative length needs a valid carrier_freq")
    return wavelength


class _Collector:
    def __init__(self):
        self.errors = []

    def get(self, obj, key, kind, path, default=None, required=False, wavelength=None, check=None, expect=""):
        if key not in obj:
            if required:
                self.errors.append(f"{path}: missing")
            return default
        try:
            v = parse_quantity(obj[key], kind, wavelength) if kind else obj[key]
        except ValueError as exc:
            self.errors.append(f"{path}: {exc}")
            return default
        if check is not None and not check(v):
            self.errors.append(f"{path}: {obj[key]!r} out of range, expected {expect}")
            return default
        return v

    def integer(self, obj, key, path, default=None, minimum=0):
        if key not in obj:
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            self.errors.append(f"{path}: expected an integer >= {minimum}, got {v!r}")
            return default
        return v


def scenario_from_dict(data: dict) -> tuple[ScenarioConfig | None, list[str]]:
    """Build a ScenarioConfig; returns (config, []) or (None, every error found)."""
    col = _Collector()
    if not isinstance(data, dict):
        return None, ["<root>: expected a JSON object"]
    known = {"panel", "targets", "num_ues", "reflection", "aoi", "noise_var", "p_max", "snr_thresholds",
             "num_symbols", "radiation_exponent", "name", "description"}
    for key in sorted(set(data) - known):
        col.errors.append(f"{key}: unknown key")

    pd = data.get("panel", {})
    if not isinstance(pd, dict):
        col.errors.append("panel: expected an object")
        pd = {}
    n_rf = col.integer(pd, "n_rf", "panel.n_rf", 8, minimum=1)
    n_e = col.integer(pd, "n_e", "panel.n_e", 64, minimum=1)
    freq = col.get(pd, "carrier_freq", "freq", "panel.carrier_freq", 20e9, check=lambda f: f > 0, expect="> 0 Hz")
    lam = C0 / freq if freq else None
    d_e = col.get(pd, "d_e", "length", "panel.d_e", None, wavelength=lam, check=lambda v: v > 0, expect="> 0 m")
    d_rf = col.get(pd, "d_rf", "length", "panel.d_rf", None, wavelength=lam, check=lambda v: v > 0,
                   expect="> 0 m")
    if d_e is None and lam is not None and "d_e" not in pd:
        d_e = lam / 5
    if d_rf is None and lam is not None and "d_rf" not in pd:
        d_rf = lam / 2
    alpha = col.get(pd, "waveguide_alpha", "", "panel.waveguide_alpha", 0.0)
    beta_wg = pd.get("waveguide_beta")
    for name, v in (("waveguide_alpha", alpha), ("waveguide_beta", beta_wg)):
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            col.errors.append(f"panel.{name}: expected a number, got {v!r}")

    targets = []
    raw_targets = data.get("targets")
    if not isinstance(raw_targets, list) or not raw_targets:
        col.errors.append("targets: expected a non-empty list")
        raw_targets = []
    for k, t in enumerate(raw_targets):
        path = f"targets[{k}]"
        if isinstance(t, list) and len(t) == 3:
            t = dict(zip(("r", "theta", "phi"), t))
        if not isinstance(t, dict):
            col.errors.append(f"{path}: expected [r, theta_deg, phi_deg] or an object")
            continue
        r = col.get(t, "r", "length", f"{path}.r", required=True, check=lambda v: v > 0, expect="r > 0 m")
        th = col.get(t, "theta", "angle", f"{path}.theta", required=True, check=lambda v: 0 < v < np.pi,
                     expect="theta in (0, 180) deg")
        ph = col.get(t, "phi", "angle", f"{path}.phi", required=True, check=lambda v: -np.pi < v <= np.pi,
                     expect="phi in (-180, 180] deg")
        if None not in (r, th, ph):
            targets.append(SphericalPoint(r, th, ph))

    num_ues = col.integer(data, "num_ues", "num_ues", 0)
    if num_ues is not None and raw_targets and num_ues > len(raw_targets):
        col.errors.append(f"num_ues: {num_ues} exceeds the number of targets ({len(raw_targets)})")

    noise = col.get(data, "noise_var", "power", "noise_var", required=True, check=lambda v: v > 0,
                    expect="> 0 W")
    p_max = col.get(data, "p_max", "power", "p_max", required=True, check=lambda v: v > 0, expect="> 0 W")
    raw_g = data.get("snr_thresholds", [])
    if not isinstance(raw_g, list):
        raw_g = [raw_g] * (num_ues or 0)
    gammas = []
    for u, g in enumerate(raw_g):
        v = col.get({"g": g}, "g", "ratio", f"snr_thresholds[{u}]", check=lambda x: x > 0, expect="> 0 (linear)")
        gammas.append(v)
    if num_ues is not None and len(raw_g) != num_ues:
        col.errors.append(f"snr_thresholds: {len(raw_g)} values for {num_ues} UEs")
    num_symbols = col.integer(data, "num_symbols", "num_symbols", 100, minimum=1)
    rad = col.get(data, "radiation_exponent", "", "radiation_exponent", 0.0,
                  check=lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0,
                  expect="a number >= 0")

    panel = None
    if None not in (n_rf, n_e, freq, d_e, d_rf) and not any(e.startswith("panel.") for e in col.errors):
        panel = PanelConfig(n_rf=n_rf, n_e=n_e, d_e=d_e, d_rf=d_rf, carrier_freq=freq,
                            waveguide_alpha=float(alpha), waveguide_beta=beta_wg)

    refl = data.get("reflection", {"mode": "pathloss", "seed": 0})
    betas = None
    if isinstance(refl, dict) and refl.get("mode", "pathloss") == "pathloss":
        seed = col.integer(refl, "seed", "reflection.seed", 0)
        if panel is not None and len(targets) == len(raw_targets):
            betas = pathloss_reflections(panel, targets, seed)
    elif isinstance(refl, dict) and refl.get("mode") == "unit":
        betas = (1.0 + 0j,) * len(raw_targets)
    elif isinstance(refl, dict) and refl.get("mode") == "explicit":
        vals = refl.get("values", [])
        try:
            betas = tuple(complex(float(v[0]), float(v[1])) for v in vals)
        except (TypeError, ValueError, IndexError):
            col.errors.append("reflection.values: expected a list of [re, im] pairs")
        if betas is not None and len(betas) != len(raw_targets):
            col.errors.append(f"reflection.values: {len(betas)} values for {len(raw_targets)} targets")
    else:
        col.errors.append("reflection.mode: expected 'pathloss', 'unit' or 'explicit'")

    ad = data.get("aoi", {})
    aoi = None
    if not isinstance(ad, dict):
        col.errors.append("aoi: expected an object")
    elif "points" in ad:
        pts = []
        for k, t in enumerate(ad["points"]):
            path = f"aoi.points[{k}]"
            if not (isinstance(t, list) and len(t) == 3):
                col.errors.append(f"{path}: expected [r, theta_deg, phi_deg]")
                continue
            t = dict(zip(("r", "theta", "phi"), t))
            r = col.get(t, "r", "length", f"{path}.r", check=lambda v: v > 0, expect="r > 0 m")
            th = col.get(t, "theta", "angle", f"{path}.theta", check=lambda v: 0 < v < np.pi,
                         expect="theta in (0, 180) deg")
            ph = col.get(t, "phi", "angle", f"{path}.phi", check=lambda v: -np.pi < v <= np.pi,
                         expect="phi in (-180, 180] deg")
            if None not in (r, th, ph):
                pts.append(SphericalPoint(r, th, ph))
        aoi = tuple(pts) if pts else None
        if not ad["points"]:
            col.errors.append("aoi.points: expected at least one point")
    else:
        n_pts = col.integer(ad, "n_points", "aoi.n_points", 8, minimum=1)
        th = col.get(ad, "theta", "angle", "aoi.theta", float(np.deg2rad(30.0)), check=lambda v: 0 < v < np.pi,
                     expect="theta in (0, 180) deg")
        phr = ad.get("phi_range", ["10 deg", "80 deg"])
        rr = ad.get("r_range", [2.0, 10.0])
        pattern = ad.get("pattern", "diagonal")
        if pattern not in ("diagonal", "grid"):
            col.errors.append(f"aoi.pattern: expected 'diagonal' or 'grid', got {pattern!r}")
        ok = True
        try:
            phr = tuple(parse_quantity(v, "angle") for v in phr)
            if len(phr) != 2:
                raise ValueError("needs two values")
        except (TypeError, ValueError) as exc:
            col.errors.append(f"aoi.phi_range: {exc}")
            ok = False
        try:
            rr = tuple(parse_quantity(v, "length") for v in rr)
            if len(rr) != 2 or min(rr) <= 0:
                raise ValueError("needs two positive ranges")
        except (TypeError, ValueError) as exc:
            col.errors.append(f"aoi.r_range: {exc}")
            ok = False
        if ok and None not in (n_pts, th) and pattern in ("diagonal", "grid"):
            try:
                aoi = aoi_points(n_pts, theta=th, phi_range=phr, r_range=rr, pattern=pattern)
            except ValueError as exc:
                col.errors.append(f"aoi: {exc}")

    if col.errors:
        return None, col.errors
    sc_kwargs = dict(panel=panel, targets=tuple(targets), num_ues=num_ues, reflection_coeffs=betas, aoi=aoi,
                     noise_var=noise, p_max=p_max, snr_thresholds=tuple(gammas), num_symbols=num_symbols,
                     radiation_exponent=float(rad))
    try:
        return ScenarioConfig(**sc_kwargs), []
    except ValueError as exc:
        return None, str(exc).split("; ")


def validate_config(path) -> tuple[ScenarioConfig | None, list[str]]:
    """Load and validate a scenario file; never raises on bad content."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        return None, [f"{path}: {exc.strerror or exc}"]
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]
    sc, errors = scenario_from_dict(data)
    return sc, [f"{path}: {e}" for e in errors]


def load_scenario(path) -> ScenarioConfig:
    sc, errors = validate_config(path)
    if errors:
        raise ConfigError(errors)
    return sc


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    """Exact echo of a config: SI numbers, angles as "<x> rad", reflections listed.

    ``scenario_from_dict(scenario_to_dict(sc))`` reproduces ``sc`` bit for bit.
    """
    p = sc.panel
    rad = lambda x: f"{float(x)!r} rad"  # noqa: E731
    point = lambda t: [t.r, rad(t.theta), rad(t.phi)]  # noqa: E731
    return {
        "panel": {"n_rf": p.n_rf, "n_e": p.n_e, "carrier_freq": p.carrier_freq, "d_e": p.d_e, "d_rf": p.d_rf,
                  "waveguide_alpha": p.waveguide_alpha, "waveguide_beta": p.waveguide_beta},
        "targets": [point(t) for t in sc.targets],
        "num_ues": sc.num_ues,
        "reflection": {"mode": "explicit", "values": [[b.real, b.imag] for b in sc.reflection_coeffs]},
        "aoi": {"points": [point(t) for t in sc.aoi]},
        "noise_var": sc.noise_var,
        "p_max": sc.p_max,
        "snr_thresholds": list(sc.snr_thresholds),
        "num_symbols": sc.num_symbols,
        "radiation_exponent": sc.radiation_exponent,
    }
