"""Tracker configuration and the key=value config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ParseError

# Keys accepted in config files / override dicts, mapped to attribute names.
_KEY_TO_ATTR = {
    "padding": "padding",
    "patch_w": "patch_w",
    "patch_h": "patch_h",
    "kernel_sigma": "kernel_sigma",
    "eta": "eta",
    "lambda": "lambda_",
    "scales": "scales",
    "scale_factor": "scale_factor",
    "stability_window": "stability_window",
    "decoder": "decoder",
    "adaptive_lr": "adaptive_lr",
    "features": "features",
    "label_bandwidth": "label_bandwidth",
    "eta_max_factor": "eta_max_factor",
    "inverse_stability": "inverse_stability",
    "decoder_weights": "decoder_weights",
    "hog_orientations": "hog_orientations",
}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}

_BOOL_ATTRS = {"decoder", "adaptive_lr", "inverse_stability"}
_INT_ATTRS = {"patch_w", "patch_h", "scales", "stability_window", "hog_orientations"}
_FLOAT_ATTRS = {
    "padding", "kernel_sigma", "eta", "lambda_", "scale_factor",
    "label_bandwidth", "eta_max_factor",
}


@dataclass
class TrackerConfig:
    """All tunables of the tracking pipeline, with published defaults."""

    padding: float = 2.2
    patch_w: int = 240
    patch_h: int = 160
    kernel_sigma: float = 0.2
    eta: float = 0.0025
    lambda_: float = 1e-4
    scales: int = 11
    scale_factor: float = 1.02
    stability_window: int = 5
    decoder: bool = True
    adaptive_lr: bool = True
    features: str = "gray"
    label_bandwidth: float = 0.1
    eta_max_factor: float = 10.0
    inverse_stability: bool = False
    decoder_weights: str = ""
    hog_orientations: int = 9

    def validate(self) -> "TrackerConfig":
        if self.padding <= 0:
            raise ValueError("padding must be positive")
        if self.patch_w <= 0 or self.patch_h <= 0:
            raise ValueError("patch dimensions must be positive")
        if self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")
        if self.scales < 1 or self.scales % 2 == 0:
            raise ValueError("scales must be an odd positive count")
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")
        if self.stability_window < 1:
            raise ValueError("stability_window must be >= 1")
        if self.eta_max_factor <= 0:
            raise ValueError("eta_max_factor must be positive")
        mode = self.features
        if not (mode in ("gray", "hog") or mode.startswith("kmcf:")):
            raise ValueError(f"unknown features mode: {mode!r}")
        return self

    def to_text(self) -> str:
        """Render as config-file text; parse_config round-trips it."""
        lines = []
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if field.name in _BOOL_ATTRS:
                value = "on" if value else "off"
            lines.append(f"{_ATTR_TO_KEY[field.name]}={value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        out = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            out[_ATTR_TO_KEY[field.name]] = value
        return out


def _convert(attr: str, raw: str, line: int | None):
    raw = raw.strip()
    try:
        if attr in _BOOL_ATTRS:
            low = raw.lower()
            if low in ("on", "true", "1", "yes"):
                return True
            if low in ("off", "false", "0", "no"):
                return False
            raise ValueError(raw)
        if attr in _INT_ATTRS:
            return int(raw)
        if attr in _FLOAT_ATTRS:
            return float(raw)
    except ValueError as exc:
        raise ParseError(f"bad value {raw!r} for key {_ATTR_TO_KEY[attr]!r}", line) from exc
    return raw


def parse_config_text(text: str, base: TrackerConfig | None = None) -> TrackerConfig:
    """Parse key=value lines ('#' comments and blanks ignored) over ``base``."""
    cfg = dataclasses.replace(base) if base is not None else TrackerConfig()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw_line.strip()!r}", lineno)
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if key not in _KEY_TO_ATTR:
            raise ParseError(f"unknown config key {key!r}", lineno)
        attr = _KEY_TO_ATTR[key]
        setattr(cfg, attr, _convert(attr, raw_value, lineno))
    cfg.validate()
    return cfg


def load_config(path: str, base: TrackerConfig | None = None) -> TrackerConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


def apply_overrides(cfg: TrackerConfig, overrides: dict) -> TrackerConfig:
    """Apply a {key: value} dict using config-file key names and coercions."""
    out = dataclasses.replace(cfg)
    for key, value in overrides.items():
        if key not in _KEY_TO_ATTR:
            raise ParseError(f"unknown config key {key!r}")
        attr = _KEY_TO_ATTR[key]
        if isinstance(value, str):
            value = _convert(attr, value, None)
        setattr(out, attr, value)
    out.validate()
    return out
