"""Config parsing, validation, and reproducible output emission.

All user-facing numbers are plain-frequency kHz and ms (converted to rad/ms
internally); CSV floats are written with 12 significant digits and outputs
are byte-identical across reruns of the same config.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import KHZ, Basis, ModelParams, QuantumState


class ConfigError(ValueError):
    """Invalid run configuration; carries every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


PARAM_KEYS = {
    "n_spins": int,
    "g_khz": float,
    "delta_khz": float,
    "bx0_khz": float,
    "bz_khz": float,
    "gamma_per_s": float,
    "nbar": float,
    "n_max": object,     # int or "auto"
}
REQUIRED_KEYS = ("n_spins", "g_khz", "delta_khz", "bx0_khz")

PRESETS = {
    # experimental operating point: 75 ions, near-critical detuning,
    # thermal phonons, lab-measured dephasing rate
    "fig3": {"n_spins": 75, "g_khz": 0.935, "delta_khz": -1.0,
             "bx0_khz": 7.0, "nbar": 6.0, "gamma_per_s": 60.0},
}


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    label: str | None
    echo: dict


def validate_params_dict(raw: dict) -> list[str]:
    """Collect every schema/physics violation instead of stopping at the first."""
    problems = []
    unknown = set(raw) - set(PARAM_KEYS)
    if unknown:
        problems.append(f"unknown parameter keys: {sorted(unknown)}")
    for key in REQUIRED_KEYS:
        if raw.get(key) is None:
            problems.append(f"missing required key {key}")

    def usable(key):
        if key not in raw or raw[key] is None:
            return None
        try:
            return float(raw[key])
        except (TypeError, ValueError):
            problems.append(f"{key} must be a number, got {raw[key]!r}")
            return None

    n_spins = usable("n_spins")
    if n_spins is not None and (int(n_spins) != n_spins or n_spins < 1):
        problems.append(f"n_spins must be a positive integer, got {raw['n_spins']}")
    delta = usable("delta_khz")
    if delta is not None and not delta < 0:
        problems.append(f"delta_khz must be strictly negative, got {raw['delta_khz']}")
    for key in ("g_khz", "nbar", "gamma_per_s"):
        value = usable(key)
        if value is not None and value < 0:
            problems.append(f"{key} must be non-negative, got {raw[key]!r}")
    usable("bx0_khz")
    usable("bz_khz")
    n_max = raw.get("n_max", "auto")
    if n_max not in (None, "auto"):
        try:
            ok = int(n_max) == n_max and n_max >= 0
        except (TypeError, ValueError):
            ok = False
        if not ok:
            problems.append(
                f"n_max must be 'auto' or a non-negative integer, got {n_max!r}")
    return problems


def params_from_dict(raw: dict, strict: bool = True) -> ModelParams:
    problems = validate_params_dict(raw)
    if problems:
        raise ConfigError(problems)
    n_max = raw.get("n_max", "auto")
    params = ModelParams.from_khz(
        n_spins=int(raw["n_spins"]),
        g_khz=float(raw["g_khz"]),
        delta_khz=float(raw["delta_khz"]),
        bx0_khz=float(raw["bx0_khz"]),
        bz_khz=float(raw.get("bz_khz", 0.0) or 0.0),
        gamma_per_s=float(raw.get("gamma_per_s", 0.0) or 0.0),
        nbar=float(raw.get("nbar", 0.0) or 0.0),
        n_max=None if n_max in (None, "auto") else int(n_max),
    )
    if strict:
        soft = params.validate()
        if soft:
            raise ConfigError(soft)
    return params


def params_to_dict(params: ModelParams) -> dict:
    return {
        "n_spins": params.n_spins,
        "g_khz": params.g / KHZ,
        "delta_khz": params.delta / KHZ,
        "bx0_khz": params.b_x0 / KHZ,
        "bz_khz": params.b_z / KHZ,
        "gamma_per_s": params.gamma_dephase * 1000.0,
        "nbar": params.nbar,
        "n_max": params.n_max,
    }


def parse_and_validate(config_path: str | None = None, overrides: dict | None = None,
                       preset: str | None = None, strict: bool = True) -> RunConfig:
    """Merge config file, preset, and flag overrides (flags win); validate all.

    Returns a RunConfig or raises ConfigError listing every violation.
    """
    raw: dict = {}
    label = None
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"unknown preset {preset!r}; available: {sorted(PRESETS)}"])
        raw.update(PRESETS[preset])
        label = preset
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError([f"config file not found: {config_path}"])
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file is not valid JSON: {exc}"]) from exc
        label = loaded.pop("label", label)
        loaded.pop("created_at", None)
        params_block = loaded.pop("params", None)
        if params_block is not None:
            unknown = set(loaded)
            if unknown:
                raise ConfigError([f"unknown config keys: {sorted(unknown)}"])
            raw.update(params_block)
        else:
            raw.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    params = params_from_dict(raw, strict=strict)
    return RunConfig(params=params, label=label, echo=params_to_dict(params))


# ---------------------------------------------------------------------------
# emission


def fmt_float(x) -> str:
    """12-significant-digit float formatting, empty for None/NaN."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return f"{x:.11e}"


def write_csv(path, header, rows):
    """Write rows (sequences matching header) with fixed formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return fmt_float(value)


def sha256_of(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def params_hash(params: ModelParams) -> str:
    canonical = json.dumps(params_to_dict(params), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def write_sidecar(csv_path, config: RunConfig, summary: dict,
                  timing_s: float | None = None):
    """JSON sidecar with config echo and a content hash of the CSV.

    Wall time is opt-in so identical inputs produce byte-identical files.
    """
    from . import __version__
    doc = {
        "config": config.echo,
        "label": config.label,
        "params_hash": params_hash(config.params),
        "code_version": __version__,
        "csv_sha256": sha256_of(csv_path),
        "summary": summary,
    }
    if timing_s is not None:
        doc["wall_time_s"] = round(timing_s, 3)
    path = Path(str(csv_path) + ".json")
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# state and schedule files


def save_state(path, state: QuantumState):
    doc = {
        "n_spins": state.basis.n_spins,
        "n_max": state.basis.n_max,
        "re": state.vector.real.tolist(),
        "im": state.vector.imag.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_state(path) -> QuantumState:
    doc = json.loads(Path(path).read_text())
    vec = np.asarray(doc["re"], dtype=float) + 1j * np.asarray(doc["im"], dtype=float)
    return QuantumState(vec, Basis(int(doc["n_spins"]), int(doc["n_max"])))


def load_schedule(path, params: ModelParams):
    """Schedule from a JSON document; LA kind is rebuilt from params."""
    from .dynamics import (BangBangSchedule, ConstantSchedule,
                           TabulatedSchedule, la_schedule)
    doc = json.loads(Path(path).read_text())
    kind = doc.get("kind")
    if kind == "constant":
        return ConstantSchedule(b_x=KHZ * float(doc["b_x_khz"]),
                                t_total=float(doc["duration_ms"]))
    if kind == "bang_bang":
        return BangBangSchedule(b_hold=KHZ * float(doc["b_hold_khz"]),
                                t_hold=float(doc["t_hold_ms"]),
                                b_final=KHZ * float(doc.get("b_final_khz", 0.0)))
    if kind == "tabulated":
        return TabulatedSchedule(times=np.asarray(doc["t_ms"], dtype=float),
                                 fields=KHZ * np.asarray(doc["b_khz"], dtype=float))
    if kind == "locally_adiabatic":
        return la_schedule(params, float(doc["tau_ms"]))
    raise ConfigError([f"unknown schedule kind {kind!r}"])
