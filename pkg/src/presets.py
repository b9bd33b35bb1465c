"""
Benchmark presets and flat key/value configuration files.
Files hold one `section.key=value` per line; list entries use dotted indices
(`boundary.profiles.0.side=left`). Values are validated by the RunConfig model.
"""

import math
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError

from .errors import ConfigError
from .state import RunConfig


def _profile(index: int, side: str, center: float, width: float, height: float, kind: str,
             normal: float = 1.0, tangential: float = 0.0) -> Dict[str, Any]:
    key = f"boundary.profiles.{index}"
    return {
        f"{key}.side": side,
        f"{key}.center": center,
        f"{key}.width": width,
        f"{key}.height": height,
        f"{key}.kind": kind,
        f"{key}.normal": normal,
        f"{key}.tangential": tangential,
    }


RUGBY = {
    "name": "rugby",
    "domain.x1": 1.0,
    "domain.y1": 5.0,
    "domain.initial_area": 1.0 / 1600.0,
    "params.gamma": 0.01,
    "params.mu": 1.0,
    "boundary.background_x": 0.0,
    "boundary.background_y": 1.0,
    "initial.kind": "disc",
    "initial.center_x": 0.5,
    "initial.center_y": 0.5,
    "initial.radius": math.sqrt(1.0 / (10.0 * math.pi)),
    "initial.refine_interface": True,
    "marking.theta_r": 0.2,
    "marking.theta_c": 0.05,
    "marking.a_min": 1e-7,
    "marking.a_max": 5e-4,
    "notes": "flow attacks from the bottom; drag direction (0, 1)",
}

# Five rows of the treelike boundary table: one inlet, four outlets
TREELIKE = {
    "name": "treelike",
    "domain.initial_area": 2e-5,
    "params.gamma": 0.01,
    "params.mu": 0.01,
    "params.alpha_bar": 5.0,
    "params.beta": 0.0,
    "initial.kind": "constant",
    "initial.value": 0.0,
    **_profile(0, "left", 0.80, 0.2, 3.0, "inflow"),
    **_profile(1, "bottom", 0.80, 0.1, 1.0, "outflow"),
    **_profile(2, "top", 0.65, 0.1, 1.0, "outflow"),
    **_profile(3, "right", 0.70, 0.2, 1.0, "outflow"),
    **_profile(4, "right", 0.25, 0.2, 1.0, "outflow"),
    "marking.theta_r": 0.1,
    "marking.theta_c": 0.05,
    "marking.a_min": 4e-7,
    "marking.a_max": 0.01,
    "marking.start_below": 2.0,
    "continuation.stages.0.grad_w_below": 1.0,
    "continuation.stages.0.alpha_bar": 50.0,
    "stopping.tol_abs": 1e-5,
    "notes": "initial mesh size 2e-5 read as simplex area",
}

BASSOON_1 = {
    **{k: v for k, v in TREELIKE.items() if not k.startswith("boundary.")},
    "name": "bassoon-1",
    "params.gamma": 1e-4,
    "params.mu": 1e-3,
    "params.beta": 0.1,
    "initial.value": 0.1,
    **_profile(0, "right", 0.5, 0.1, 1.0, "inflow", normal=1.0, tangential=1.0),
    **_profile(1, "bottom", 0.8, 0.2, 0.5, "outflow"),
    "notes": "inflow at 45 degrees upwards; treelike schedule and initial mesh",
}

BASSOON_2 = {
    **BASSOON_1,
    "name": "bassoon-2",
    "boundary.profiles.1.center": 0.3,
}

INTERFACE_WIDTH = {
    "name": "interface-width",
    "domain.initial_area": 1.0 / 2048.0,
    "params.gamma": 0.1,
    "params.mu": 1.0,
    "params.beta": 0.0,
    "params.alpha_epsilon_scaling": False,
    "initial.kind": "constant",
    "initial.value": 0.0,
    **_profile(0, "left", 0.5, 0.2, 1.0, "inflow"),
    **_profile(1, "right", 0.5, 0.2, 1.0, "outflow"),
    "marking.a_min": 1e-6,
    "marking.a_max": 0.01,
    "notes": "alpha(-1) = alpha_bar; vary params.epsilon and params.alpha_bar",
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "rugby": RUGBY,
    "treelike": TREELIKE,
    "bassoon-1": BASSOON_1,
    "bassoon-2": BASSOON_2,
    "interface-width": INTERFACE_WIDTH,
}


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """Dotted keys to nested dicts; all-integer key sets become lists."""
    root: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"malformed key '{key}'", key=key)
        node = root
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key '{key}' conflicts with a scalar value", key=key)
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"key '{key}' conflicts with a section", key=key)
        node[parts[-1]] = value
    return _listify(root)


def _listify(node: Any) -> Any:
    if not isinstance(node, dict):
        return node
    node = {k: _listify(v) for k, v in node.items()}
    if node and all(k.isdigit() for k in node):
        indices = sorted(int(k) for k in node)
        if indices != list(range(len(indices))):
            raise ConfigError(f"list indices must be 0..{len(indices) - 1}, got {indices}")
        return [node[str(i)] for i in indices]
    return node


def flatten(data: Any, prefix: str = "") -> Dict[str, Any]:
    """Inverse of unflatten; None values are dropped."""
    out: Dict[str, Any] = {}
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    if isinstance(data, dict):
        items = data.items()
    elif isinstance(data, list):
        items = ((str(i), v) for i, v in enumerate(data))
    else:
        return {prefix: data} if data is not None else {}
    for key, value in items:
        out.update(flatten(value, f"{prefix}.{key}" if prefix else str(key)))
    return out


def apply_overrides(flat: Mapping[str, Any], overrides: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    """Apply `key=value` strings on top of a flat mapping."""
    merged = dict(flat)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value", key=item)
        key, value = item.split("=", 1)
        merged[key.strip()] = value.strip()
    return merged


def build_config(flat: Mapping[str, Any]) -> RunConfig:
    """Validate a flat mapping; the first failing key is named in the error."""
    nested = unflatten(flat)
    try:
        return RunConfig.model_validate(nested)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(f"invalid configuration at '{key}': {first['msg']}", key=key) from e


def load_config(path: str, overrides: Optional[Iterable[str]] = None) -> RunConfig:
    """Read a flat key/value configuration file."""
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    values = dotenv_values(file, interpolate=False)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"key '{missing[0]}' has no value", key=missing[0])
    return build_config(apply_overrides(values, overrides))


def preset(name: str, overrides: Optional[Iterable[str]] = None) -> RunConfig:
    """Named benchmark configuration, optionally with `key=value` overrides."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (available: {', '.join(sorted(PRESETS))})", key="preset")
    return build_config(apply_overrides(PRESETS[name], overrides))


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return str(value)


def write_config(config: RunConfig, path: str) -> Path:
    """Write a RunConfig as a flat key/value file that load_config reads back."""
    file = Path(path)
    file.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {config.name}"]
    lines += [f"{key}={_format_value(value)}" for key, value in flatten(config).items()]
    file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return file
