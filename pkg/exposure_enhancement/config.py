import dataclasses
import re
from dataclasses import dataclass, field

import yaml

from typing import Any, Callable, Dict, Optional, Tuple, Union

from exposure_enhancement.exceptions import ConfigError, InvalidParameter
from exposure_enhancement.illumination import GammaParams
from exposure_enhancement.multiscale import JbuParams
from exposure_enhancement.solver import SolverConfig
from exposure_enhancement.video import PropagationConfig


REPORT_KEYS = [
    "outer_iterations",
    "de_in",
    "de_out",
    "clamped_pixels",
    "residual_edge_violations",
    "wall_ms",
]

KEY_VALUE_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


def _number(value: Any) -> float:
    # YAML 1.1 reads exponent forms without a dot, such as 1e-5, as strings
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise TypeError("expected a number")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError("expected a number")
    return float(value)


def _integer(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError("expected an integer")
    return value


def _flag(value: Any) -> bool:
    if not isinstance(value, bool):
        raise TypeError("expected true or false")
    return value


def _text(value: Any) -> str:
    if not isinstance(value, str):
        raise TypeError("expected a string")
    return value


# config key -> (settings section, field name, value check)
setting_dispatch: Dict[str, Tuple[str, str, Callable[[Any], Any]]] = {
    "lambda": ("solver", "lam", _number),
    "tau": ("solver", "tau", _number),
    "conv_tol": ("solver", "conv_tol", _number),
    "max_outer": ("solver", "max_outer", _integer),
    "cg_tol": ("solver", "cg_tol", _number),
    "cg_max_iter": ("solver", "cg_max_iter", _integer),
    "delta_slack": ("solver", "delta_slack", _number),
    "linear_solver": ("solver", "linear_solver", _text),
    "cg_fallback": ("solver", "cg_fallback", _flag),
    "color_constraint": ("solver", "color_constraint", _flag),
    "detail_constraint": ("solver", "detail_constraint", _flag),
    "exposure_constraint": ("solver", "exposure_constraint", _flag),
    "gamma": ("gamma", "gamma", _number),
    "max_dim": ("jbu", "max_dim", _integer),
    "sigma_d": ("jbu", "sigma_d", _number),
    "sigma_r": ("jbu", "sigma_r", _number),
    "ell": ("propagation", "keyframe_ell", _number),
    "kf_ratio": ("propagation", "keyframe_ratio", _number),
    "window": ("propagation", "window_n", _integer),
    "parzen_d": ("propagation", "parzen_d", _number),
    "bins": ("propagation", "bins", _integer),
    "denoise": ("pipeline", "denoise", _number),
}


@dataclass(frozen=True)
class Settings:
    """
    Every tunable of the photo and video pipelines.

    Args:
      solver (SolverConfig): illumination solver settings.
      jbu (JbuParams): fast path settings.
      propagation (PropagationConfig): video keyframe/propagation settings.
      denoise (float): temporal denoise strength in [0, 1].
    """

    solver: SolverConfig = field(default_factory=SolverConfig)
    jbu: JbuParams = field(default_factory=JbuParams)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    denoise: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.denoise <= 1.0:
            raise InvalidParameter("denoise strength must be in [0,1]")


def _key_value_to_yaml(text: str) -> str:
    lines = []
    for line in text.splitlines():
        match = KEY_VALUE_LINE.match(line)
        lines.append("{}: {}".format(match.group(1), match.group(2)) if match else line)
    return "\n".join(lines)


def _looks_like_key_value(text: str) -> bool:
    lines = [
        line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")
    ]
    return bool(lines) and all(KEY_VALUE_LINE.match(line) for line in lines)


def load(config: str) -> Dict[str, Any]:
    """
    Function for loading setting overrides from disk.

    The file is either a YAML mapping (`lambda: 0.8`) or plain `key=value`
    lines (`lambda=0.8`); both give the same overrides. Keys mirror the
    command line flags.

    Args:
      config (str): Location to load from disk.

    Returns:
      overrides (dict): key to value, keys validated against
        `setting_dispatch`.
    """
    try:
        with open(config) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("cannot read config {}: {}".format(config, e))

    if _looks_like_key_value(text):
        text = _key_value_to_yaml(text)
    try:
        config_data = yaml.load(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        raise ConfigError("malformed config {}: {}".format(config, e))

    if config_data is None:
        return {}
    if not isinstance(config_data, dict):
        raise ConfigError("config {} must be a mapping of settings".format(config))

    for key in config_data:
        if key not in setting_dispatch.keys():
            raise ConfigError("unknown config key: {}".format(key))
    return dict(config_data)


def build_settings(
    overrides: Optional[Dict[str, Any]] = None, base: Optional[Settings] = None
) -> Settings:
    """
    Apply overrides on top of `base` (the defaults when omitted). Later
    calls layer on earlier ones, so file values are applied first and
    explicit flags second.
    """
    settings = base or Settings()
    sections: Dict[str, Dict[str, Any]] = {
        "solver": {},
        "gamma": {},
        "jbu": {},
        "propagation": {},
        "pipeline": {},
    }
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        try:
            section, name, check = setting_dispatch[key]
        except KeyError:
            raise ConfigError("unknown config key: {}".format(key))
        try:
            sections[section][name] = check(value)
        except TypeError as e:
            raise ConfigError("invalid value for {}: {!r} ({})".format(key, value, e))

    gamma: GammaParams = dataclasses.replace(settings.solver.gamma, **sections["gamma"])
    solver = dataclasses.replace(settings.solver, gamma=gamma, **sections["solver"])
    return Settings(
        solver=solver,
        jbu=dataclasses.replace(settings.jbu, **sections["jbu"]),
        propagation=dataclasses.replace(settings.propagation, **sections["propagation"]),
        denoise=sections["pipeline"].get("denoise", settings.denoise),
    )


def format_report(values: Dict[str, Union[int, float]]) -> str:
    """
    Render report values as `key=value` lines, known keys first in their
    fixed order.
    """
    keys = [key for key in REPORT_KEYS if key in values]
    keys += sorted(key for key in values if key not in REPORT_KEYS)
    lines = []
    for key in keys:
        value = values[key]
        if isinstance(value, float):
            lines.append("{}={:.6g}".format(key, value))
        else:
            lines.append("{}={}".format(key, value))
    return "\n".join(lines) + "\n"


def save_report(values: Dict[str, Union[int, float]], path: str) -> str:
    """
    Function for saving a key=value report.

    Returns:
      path (str): Location on disk where the report was saved.
    """
    with open(path, "w") as f:
        f.write(format_report(values))
    return path
