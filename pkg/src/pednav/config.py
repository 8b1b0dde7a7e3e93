"""Pipeline configuration: one plain-text key=value file (# comments allowed),
overridable by CLI flags; the PEDNAV_CONFIG environment variable supplies the
default path."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .edgemap import EdgeParams
from .matcher import SearchParams
from .navigate import NavParams

ENV_CONFIG = "PEDNAV_CONFIG"


class ConfigError(ValueError):
    """Bad or incomplete configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the batch CLI and the service need to run."""

    calibration: str | None = None
    model: str | None = None
    plan: str | None = None
    sequence: str | None = None
    scenario: str | None = None
    needles: tuple[tuple[float, float], ...] | None = None
    registration_tol_cm: float = 0.1

    acceptance: float = 70.0
    target_acceptance: float = 0.0
    fit_error_weight: float = 1.0
    max_fit_error: float = 2.0

    edge_high: float | None = None
    edge_low: float | None = None
    edge_high_ratio: float = 0.2
    edge_low_ratio: float = 0.4
    min_chain_px: float = 5.0

    window_px: float = 32.0
    n_lost: int = 3
    debounce: int = 2

    port: int = 7433
    frame_rate: float = 30.0
    live_synth: bool = False

    def __post_init__(self) -> None:
        for name in ("calibration", "model", "plan", "sequence", "scenario"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{name} file does not exist: {path}")
        if not 0 <= self.acceptance <= 100 or not 0 <= self.target_acceptance <= 100:
            raise ConfigError("acceptance levels must be in [0, 100]")
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")

    def search_params(self) -> SearchParams:
        return SearchParams(
            acceptance=self.acceptance,
            target_acceptance=self.target_acceptance,
            fit_error_weight=self.fit_error_weight,
            max_fit_error=self.max_fit_error,
        )

    def edge_params(self) -> EdgeParams:
        return EdgeParams(
            high=self.edge_high,
            low=self.edge_low,
            high_ratio=self.edge_high_ratio,
            low_ratio=self.edge_low_ratio,
            min_chain_px=self.min_chain_px,
        )

    def nav_params(self) -> NavParams:
        return NavParams(window_px=self.window_px, n_lost=self.n_lost, debounce_frames=self.debounce)


def _parse_needles(text: str) -> tuple[tuple[float, float], ...]:
    pts = []
    for tok in text.replace(" ", ";").split(";"):
        if not tok:
            continue
        u, v = tok.split(",")
        pts.append((float(u), float(v)))
    if len(pts) != 3:
        raise ConfigError(f"needles must be three u,v points, got {len(pts)}")
    return tuple(pts)


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def parse_config_text(text: str, base_dir: Path | None = None) -> PipelineConfig:
    kv: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line: {raw!r}")
        key, val = line.split("=", 1)
        kv[key.strip()] = val.strip()

    known = {f.name: f for f in fields(PipelineConfig)}
    out: dict[str, object] = {}
    for key, val in kv.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
        if key == "needles":
            out[key] = _parse_needles(val)
        elif key in ("calibration", "model", "plan", "sequence", "scenario"):
            p = Path(val)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            out[key] = str(p)
        elif key == "live_synth":
            try:
                out[key] = _BOOL[val.lower()]
            except KeyError:
                raise ConfigError(f"live_synth must be a boolean, got {val!r}") from None
        elif key in ("n_lost", "debounce", "port"):
            out[key] = int(val)
        else:
            out[key] = float(val)
    return PipelineConfig(**out)  # type: ignore[arg-type]


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load a config file; falls back to PEDNAV_CONFIG, then to defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file does not exist: {p}")
    return parse_config_text(p.read_text(), base_dir=p.parent)


def override(config: PipelineConfig, **updates) -> PipelineConfig:
    """A copy of the config with the non-None updates applied."""
    filtered = {k: v for k, v in updates.items() if v is not None}
    return replace(config, **filtered) if filtered else config
