"""Run configuration: defaults, INI config files, CLI overrides, manifests.

Precedence is CLI flag > config file > built-in default.  The manifest is a
JSON record of every reproducibility-relevant setting, written before any
compute starts; two runs whose manifests match produce byte-identical
disparity output.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__
from .aggregation import SIZE_CLASS_PRESETS, AggregationParams
from .cost_volume import CostParams
from .errors import ConfigError

_PIPELINE_FIELDS = {
    "tree": str,
    "hdp": bool,
    "seed": int,
    "size_class": str,
    "block_size": int,
    "levels": int,
    "delta0": float,
    "beta": float,
    "gamma": float,
    "median_prefilter": bool,
    "d_max": int,
    "scale": int,
}
_COST_FIELDS = {"alpha": float, "tau_color": float, "tau_grad": float}


@dataclass
class RunConfig:
    """Everything a matching run depends on, in one flat record."""

    tree: str = "mst"
    hdp: bool = False
    seed: int = 0
    size_class: str = "half"
    block_size: int = 2
    levels: int = 3
    delta0: float | None = None
    beta: float | None = None
    gamma: float = 0.1
    alpha: float = 0.9
    tau_color: float = 0.0275
    tau_grad: float = 0.0078
    median_prefilter: bool = False
    d_max: int | None = None
    scale: int | None = None  # output PGM scale; default floor(255 / d_max)
    model: str | None = None

    def validate(self) -> "RunConfig":
        if self.tree not in ("mst", "rt"):
            raise ConfigError(f"tree must be 'mst' or 'rt', got {self.tree!r}")
        if self.size_class not in SIZE_CLASS_PRESETS:
            raise ConfigError(
                f"size_class must be one of {sorted(SIZE_CLASS_PRESETS)}, "
                f"got {self.size_class!r}"
            )
        if self.d_max is not None and self.d_max < 1:
            raise ConfigError(f"d_max must be >= 1, got {self.d_max}")
        if self.scale is not None and self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        # Range checks on the numeric knobs happen in the dataclasses below.
        self.aggregation_params()
        self.cost_params()
        return self

    def aggregation_params(self) -> AggregationParams:
        return AggregationParams(
            gamma=self.gamma,
            size_class=self.size_class,
            block_size=self.block_size,
            levels=self.levels,
            delta0=self.delta0,
            beta=self.beta,
            seed=self.seed,
        ).resolved()

    def cost_params(self) -> CostParams:
        return CostParams(
            alpha=self.alpha, tau_color=self.tau_color, tau_grad=self.tau_grad
        )

    def output_scale(self) -> int:
        if self.scale is not None:
            return self.scale
        if self.d_max is None or self.d_max > 255:
            return 1
        return max(1, 255 // self.d_max)

    def method_label(self) -> str:
        parts = []
        if self.median_prefilter:
            parts.append("m")
        if self.hdp:
            parts.append("hdp")
        parts.append(self.tree)
        return "+".join(parts)


def _parse_value(section: str, key: str, raw: str, kind: type):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected {kind.__name__}") from exc


def load_config_file(path: str | Path) -> dict:
    """Read overrides from an INI file with [pipeline] and [cost] sections."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    out: dict = {}
    for section, fields in (("pipeline", _PIPELINE_FIELDS), ("cost", _COST_FIELDS)):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in [{section}] of {path}")
            out[key] = _parse_value(section, key, raw, fields[key])
    known = set(("pipeline", "cost"))
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)} in {path}")
    return out


def build_config(
    config_path: str | Path | None, cli_overrides: dict
) -> RunConfig:
    """Merge defaults <- config file <- CLI flags (None means 'not given')."""
    merged: dict = {}
    if config_path is not None:
        merged.update(load_config_file(config_path))
    merged.update({k: v for k, v in cli_overrides.items() if v is not None})
    valid_keys = set(RunConfig.__dataclass_fields__)
    unknown = set(merged) - valid_keys
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return RunConfig(**merged).validate()


def manifest_dict(config: RunConfig, inputs: dict) -> dict:
    agg = config.aggregation_params()
    cfg = asdict(config)
    cfg["delta0"] = agg.delta0  # record resolved values, not None placeholders
    cfg["beta"] = agg.beta
    cfg["scale"] = config.output_scale()
    return {
        "tool": "treestereo",
        "version": __version__,
        "config": cfg,
        "inputs": inputs,
    }


def write_manifest(path: str | Path, config: RunConfig, inputs: dict) -> dict:
    data = manifest_dict(config, inputs)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return data
