"""Experiment configuration: flat INI sections parsed into a validated dataclass.

Example::

    [topology]
    kind = ring
    nodes = 30
    self_weight = 0.7
    prev_weight = 0.15
    skip_weight = 0.15

    [objective]
    kind = localization
    x_true = 0, 0
    noise_var = 0.01
    seed = 0

    [run]
    variant = proposed
    stepsize = scan
    beta = 0.1
    rounds = 5000
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..dnewton import CONSENSUS_FLOOR, DIVERGENCE_THRESHOLD, Variant
from ..runner import ModeError, StepSizeMode


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


TOPOLOGY_KINDS = ("ring", "symmetric_ring", "complete", "file")
OBJECTIVE_KINDS = ("localization", "quadratic_file")


@dataclass(frozen=True)
class ExperimentConfig:
    # topology
    topology: str = "ring"
    nodes: int = 30
    self_weight: float = 0.7
    prev_weight: float = 0.15
    skip_weight: float = 0.15
    topology_path: Optional[Path] = None
    # objective
    objective: str = "localization"
    x_true: tuple = (0.0, 0.0)
    noise_var: float = 0.01
    seed: int = 0
    init_scale: float = 1.0
    quadratic_path: Optional[Path] = None
    # run
    variant: str = "proposed"
    stepsize: str = "scan"
    beta: float = 0.1
    rounds: int = 5000
    threshold: float = DIVERGENCE_THRESHOLD
    consensus_floor: float = CONSENSUS_FLOOR
    gamma: Optional[float] = None
    delta: Optional[float] = None
    r_start: str = "input"
    out: Path = field(default_factory=lambda: Path("out"))
    # scan
    scan_lo: float = 1e-4
    scan_hi: float = 0.02
    scan_points: int = 200
    # spectrum
    power_rounds: int = 1000

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    @property
    def variant_enum(self) -> Variant:
        return Variant.parse(self.variant)

    @property
    def uses_scan(self) -> bool:
        return self.stepsize == "scan"

    def mode(self, alpha_scan: Optional[float] = None) -> StepSizeMode:
        if self.uses_scan:
            if alpha_scan is None:
                raise ConfigError("stepsize = scan needs the scanned value")
            return StepSizeMode("fixed", float(alpha_scan))
        return StepSizeMode.parse(self.stepsize)

    def validate(self) -> None:
        if self.topology not in TOPOLOGY_KINDS:
            raise ConfigError(f"[topology] kind must be one of {', '.join(TOPOLOGY_KINDS)}; got {self.topology!r}")
        if self.topology == "file":
            if self.topology_path is None:
                raise ConfigError("[topology] kind = file needs a path")
            if not self.topology_path.is_file():
                raise ConfigError(f"[topology] path {self.topology_path} does not exist")
        elif self.nodes < 1:
            raise ConfigError(f"[topology] nodes must be >= 1, got {self.nodes}")
        if self.topology == "ring":
            ws = (self.self_weight, self.prev_weight, self.skip_weight)
            if min(ws) < 0 or abs(sum(ws) - 1.0) > 1e-12:
                raise ConfigError(f"[topology] ring weights must be nonnegative and sum to 1, got {ws}")
        if self.objective not in OBJECTIVE_KINDS:
            raise ConfigError(f"[objective] kind must be one of {', '.join(OBJECTIVE_KINDS)}; got {self.objective!r}")
        if self.objective == "quadratic_file":
            if self.quadratic_path is None:
                raise ConfigError("[objective] kind = quadratic_file needs a path")
            if not self.quadratic_path.is_file():
                raise ConfigError(f"[objective] path {self.quadratic_path} does not exist")
        if self.objective == "localization" and len(self.x_true) < 1:
            raise ConfigError("[objective] x_true needs at least one coordinate")
        if self.noise_var < 0:
            raise ConfigError(f"[objective] noise_var must be >= 0, got {self.noise_var}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.init_scale < 0:
            raise ConfigError(f"[objective] init_scale must be >= 0, got {self.init_scale}")
        try:
            variant = Variant.parse(self.variant)
        except ValueError as exc:
            raise ConfigError(f"[run] {exc}") from exc
        if not self.uses_scan:
            try:
                mode = StepSizeMode.parse(self.stepsize)
            except ModeError as exc:
                raise ConfigError(f"[run] stepsize: {exc}") from exc
            if mode.kind == "global":
                if variant is not Variant.PROPOSED:
                    raise ConfigError("[run] stepsize = global is defined for variant = proposed only")
                if self.gamma is None or self.delta is None:
                    raise ConfigError("[run] stepsize = global needs gamma and delta")
        for name in ("gamma", "delta"):
            val = getattr(self, name)
            if val is not None and val < 0:
                raise ConfigError(f"[run] {name} must be >= 0, got {val}")
        if self.beta <= 0:
            raise ConfigError(f"[run] beta must be > 0, got {self.beta}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.threshold <= 0:
            raise ConfigError(f"[run] threshold must be > 0, got {self.threshold}")
        if self.r_start not in ("input", "identity"):
            raise ConfigError(f"[run] r_start must be input or identity, got {self.r_start!r}")
        if not 0 < self.scan_lo < self.scan_hi < 1:
            raise ConfigError(f"[scan] need 0 < lo < hi < 1, got lo={self.scan_lo}, hi={self.scan_hi}")
        if self.scan_points < 2:
            raise ConfigError(f"[scan] points must be >= 2, got {self.scan_points}")
        if self.power_rounds < 2:
            raise ConfigError(f"[spectrum] power_rounds must be >= 2, got {self.power_rounds}")


# (section, key) -> (field, converter)
_KEYS = {
    ("topology", "kind"): ("topology", str),
    ("topology", "nodes"): ("nodes", int),
    ("topology", "self_weight"): ("self_weight", float),
    ("topology", "prev_weight"): ("prev_weight", float),
    ("topology", "skip_weight"): ("skip_weight", float),
    ("topology", "path"): ("topology_path", Path),
    ("objective", "kind"): ("objective", str),
    ("objective", "x_true"): ("x_true", lambda s: tuple(float(v) for v in s.split(","))),
    ("objective", "noise_var"): ("noise_var", float),
    ("objective", "seed"): ("seed", int),
    ("objective", "init_scale"): ("init_scale", float),
    ("objective", "path"): ("quadratic_path", Path),
    ("run", "variant"): ("variant", str),
    ("run", "stepsize"): ("stepsize", str),
    ("run", "beta"): ("beta", float),
    ("run", "rounds"): ("rounds", int),
    ("run", "threshold"): ("threshold", float),
    ("run", "consensus_floor"): ("consensus_floor", float),
    ("run", "gamma"): ("gamma", float),
    ("run", "delta"): ("delta", float),
    ("run", "r_start"): ("r_start", str),
    ("run", "out"): ("out", Path),
    ("scan", "lo"): ("scan_lo", float),
    ("scan", "hi"): ("scan_hi", float),
    ("scan", "points"): ("scan_points", int),
    ("spectrum", "power_rounds"): ("power_rounds", int),
}


def parse_config(text: str, base_dir: Optional[Path] = None, source: str = "<string>") -> ExperimentConfig:
    """Parse INI text; relative input paths are resolved against ``base_dir``, ``out`` against the cwd."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    known_sections = {s for s, _ in _KEYS}
    values = {}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            spec = _KEYS.get((section, key))
            if spec is None:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            name, conv = spec
            try:
                val = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r} is not valid ({exc})") from exc
            if isinstance(val, str):
                val = val.lower()
            if name != "out" and isinstance(val, Path) and base_dir is not None and not val.is_absolute():
                val = base_dir / val
            values[name] = val
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), base_dir=path.parent, source=str(path))
