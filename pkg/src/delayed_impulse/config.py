"""JSON run configuration and CSV/JSON artifact writers.

A configuration is one JSON object.  The model comes either from a
``"model"`` section (``control`` constants plus ``speeds``) or from
``"control"`` + ``"hydraulics"`` (speeds built from the sediment formulas).
The regime chain is inline (``{"matrix": [[...]]}``), a CSV file
(``{"csv": "path"}``, relative to the config file) or a birth-death chain
(``{"birth_death": {"regimes": n, "up": a, "down": b}}``); without it the
model has a single regime.

Example::

    {
      "model": {"control": {"lambda": 0.142857, "mu": 1.0, "delta": 0.1,
                            "c": 0.3, "d": 0.2},
                "speeds": [0.07]},
      "grid": {"hjbe_intervals": 50, "fpe_intervals": 50},
      "scheme": {"interpolation": "weno", "reconstruction": "weno"},
      "simulation": {"path_count": 100000, "rng_seed": 1},
      "mu_sweep": [0.5, 1.0, 2.0]
    }
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .markov import RegimeChain, birth_death_chain, load_chain_csv
from .model import HydraulicParams, ModelSpec, build_sediment_model
from .montecarlo import SimConfig

__all__ = ["RunConfig", "load_config", "parse_config", "write_csv", "write_json", "fmt"]

_SECTIONS = {
    "model", "control", "hydraulics", "time_unit_seconds", "chain", "grid", "scheme",
    "simulation", "exact", "study", "mu_sweep", "output",
}


@dataclass
class RunConfig:
    """Validated run configuration."""

    model: ModelSpec
    chain: RegimeChain
    hjbe_intervals: int = 50
    fpe_intervals: int = 50
    interpolation: str = "weno"
    reconstruction: str = "weno"
    hjbe_tol: float = 1e-14
    fpe_tol: float = 1e-14
    hjbe_dt: float | None = None
    fpe_dt: float | None = None
    max_iter: int = 50_000_000
    simulation: SimConfig = field(default_factory=SimConfig)
    cost_starts: list = field(default_factory=list)
    exact_samples: int = 201
    study_resolutions: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    study_base_intervals: int = 50
    mu_sweep: list = field(default_factory=list)
    output: str | None = None
    source: Path | None = None
    raw: dict = field(default_factory=dict)


def _section_error(where: str, exc: Exception) -> ValidationError:
    return ValidationError(f"{where}: {exc}")


def _positive(where: str, value, integer: bool = False):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError) as exc:
        raise _section_error(where, exc) from None
    if integer and v != value:
        raise ValidationError(f"{where}: must be an integer")
    if not (math.isfinite(v) and v > 0):
        raise ValidationError(f"{where}: must be > 0")
    return v


def _load_chain(data, base: Path | None) -> RegimeChain | None:
    if data is None:
        return None
    if isinstance(data, list):
        data = {"matrix": data}
    if not isinstance(data, dict):
        raise ValidationError("chain: expected an object")
    try:
        if "matrix" in data:
            chain = RegimeChain(np.asarray(data["matrix"], dtype=np.float64))
            chain.check()
            return chain
        if "csv" in data:
            path = Path(data["csv"])
            if base is not None and not path.is_absolute():
                path = base / path
            return load_chain_csv(path)
        if "birth_death" in data:
            bd = data["birth_death"]
            return birth_death_chain(int(bd["regimes"]), float(bd["up"]), float(bd["down"]))
    except ValidationError as exc:
        raise _section_error("chain", exc) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise _section_error("chain", exc) from None
    raise ValidationError("chain: expected one of 'matrix', 'csv', 'birth_death'")


def parse_config(data: dict, base: Path | None = None) -> RunConfig:
    """Validate a configuration mapping; relative paths resolve against ``base``."""
    if not isinstance(data, dict):
        raise ValidationError("config: expected a JSON object")
    unknown = set(data) - _SECTIONS
    if unknown:
        raise ValidationError(f"config: unknown section(s) {', '.join(sorted(unknown))}")
    chain = _load_chain(data.get("chain"), base)
    if "model" in data:
        try:
            model = ModelSpec.from_dict(data["model"])
        except (KeyError, TypeError, ValueError) as exc:
            raise _section_error("model", exc) from None
    elif "hydraulics" in data or "control" in data:
        if chain is None:
            raise ValidationError("chain: required to build a model from hydraulics")
        try:
            h = HydraulicParams(**data.get("hydraulics", {}))
        except (TypeError, ValueError) as exc:
            raise _section_error("hydraulics", exc) from None
        try:
            unit = float(data.get("time_unit_seconds", 1.0))
            model = build_sediment_model(chain, h, data["control"], time_unit_seconds=unit)
        except (KeyError, TypeError, ValueError) as exc:
            raise _section_error("control", exc) from None
    else:
        raise ValidationError("config: needs a 'model' section or 'control' + 'hydraulics'")
    if chain is None:
        chain = RegimeChain.single() if model.regime_count == 1 else None
        if chain is None:
            raise ValidationError("chain: required for a multi-regime model")
    if chain.regime_count != model.regime_count:
        raise ValidationError(
            f"chain: {chain.regime_count} regimes but model.speeds has {model.regime_count}"
        )

    cfg = RunConfig(model=model, chain=chain, source=base, raw=data)
    grid = data.get("grid", {})
    cfg.hjbe_intervals = _positive("grid.hjbe_intervals", grid.get("hjbe_intervals", 50), integer=True)
    cfg.fpe_intervals = _positive("grid.fpe_intervals", grid.get("fpe_intervals", 50), integer=True)
    for name in ("hjbe_intervals", "fpe_intervals"):
        if getattr(cfg, name) < 3:
            raise ValidationError(f"grid.{name}: must be at least 3")

    scheme = data.get("scheme", {})
    cfg.interpolation = scheme.get("interpolation", "weno")
    if cfg.interpolation not in ("weno", "linear"):
        raise ValidationError("scheme.interpolation: expected 'weno' or 'linear'")
    cfg.reconstruction = scheme.get("reconstruction", "weno")
    if cfg.reconstruction not in ("weno", "upwind"):
        raise ValidationError("scheme.reconstruction: expected 'weno' or 'upwind'")
    cfg.hjbe_tol = _positive("scheme.hjbe_tol", scheme.get("hjbe_tol", 1e-14))
    cfg.fpe_tol = _positive("scheme.fpe_tol", scheme.get("fpe_tol", 1e-14))
    for key in ("hjbe_dt", "fpe_dt"):
        if scheme.get(key) is not None:
            setattr(cfg, key, _positive(f"scheme.{key}", scheme[key]))
    cfg.max_iter = _positive("scheme.max_iter", scheme.get("max_iter", 50_000_000), integer=True)

    sim = dict(data.get("simulation", {}))
    starts = sim.pop("cost_starts", [])
    try:
        cfg.simulation = SimConfig(**sim)
        cfg.simulation.check_against(model, chain)
    except (TypeError, ValueError) as exc:
        raise _section_error("simulation", exc) from None
    try:
        cfg.cost_starts = [(int(r), float(x)) for r, x in starts]
    except (TypeError, ValueError) as exc:
        raise _section_error("simulation.cost_starts", exc) from None
    for r, x in cfg.cost_starts:
        if not (0 <= r < model.regime_count and 0.0 <= x <= 1.0):
            raise ValidationError(f"simulation.cost_starts: ({r}, {x}) out of range")

    cfg.exact_samples = _positive("exact.samples", data.get("exact", {}).get("samples", 201), integer=True)
    study = data.get("study", {})
    try:
        cfg.study_resolutions = [int(n) for n in study.get("resolutions", [1, 2, 4, 8, 16])]
    except (TypeError, ValueError) as exc:
        raise _section_error("study.resolutions", exc) from None
    if not cfg.study_resolutions or min(cfg.study_resolutions) < 1:
        raise ValidationError("study.resolutions: expected positive integers")
    cfg.study_base_intervals = _positive("study.base_intervals", study.get("base_intervals", 50), integer=True)
    try:
        cfg.mu_sweep = [float(m) for m in data.get("mu_sweep", [])]
    except (TypeError, ValueError) as exc:
        raise _section_error("mu_sweep", exc) from None
    for m in cfg.mu_sweep:
        if not m > model.lam:
            raise ValidationError(f"mu_sweep: mu={m:g} must exceed lambda={model.lam:g}")
    cfg.output = data.get("output")
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a JSON configuration file.

    Missing or unreadable files raise :class:`OSError`; malformed content
    raises :class:`ValidationError`.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    try:
        return parse_config(data, base=path.parent)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def fmt(value) -> str:
    """Round-trip-safe number formatting with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return f"{float(value):.17g}"


def write_csv(path, header: list, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path
