"""Run configuration: defaults, JSON files, key=value overrides and a stable digest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from typing import Any, Iterable

from .context import RelevanceCoefficients
from .fusion import FusionWeights, Thresholds
from .triage import TriageCoefficients

PRESETS = ("full", "sequential", "static", "single_agent", "rag_only")
COMPONENTS = ("sceptic", "verification", "context", "memory", "scheduler")
BACKENDS = ("rules", "llm")
TIMING_MODES = ("auto", "measured", "modeled")
# keys that change how a run executes but not what it computes
NON_SEMANTIC_KEYS = ("workers", "cache_dir")
_FLOAT_KEYS = (
    "alpha", "beta", "gamma", "lambda1", "lambda2", "lambda3", "tau_high", "tau_low",
    "verify_timeout_secs", "llm_timeout_secs",
)


class ConfigError(ValueError):
    """Unknown key or invalid value in a configuration."""


@dataclass(frozen=True)
class Config:
    alpha: float = 0.4
    beta: float = 0.2
    gamma: float = 0.4
    lambda1: float = 0.5
    lambda2: float = 0.3
    lambda3: float = 0.2
    k: int = 8
    context_budget: int = 6000
    tau_high: float = 0.82
    tau_low: float = 0.48
    weights: tuple[float, ...] = (0.20, 0.15, 0.15, 0.25, 0.25, 0.30)
    backend: str = "rules"
    verify_enabled: bool = True
    verify_timeout_secs: float = 10.0
    preset: str = "full"
    disable: tuple[str, ...] = ()
    timing: str = "auto"
    workers: int = 1
    cache_dir: str | None = None
    rules_path: str | None = None
    compiler: str = "cc"
    llm_timeout_secs: float = 60.0
    llm_max_retries: int = 2

    def __post_init__(self) -> None:
        for name in _FLOAT_KEYS:
            value = getattr(self, name)
            if isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, name, float(value))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "disable", tuple(sorted(set(self.disable))))
        self.validate()

    def validate(self) -> None:
        try:
            self.triage_coefficients()
            self.relevance_coefficients()
            self.fusion_weights()
            self.thresholds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k!r}")
        if isinstance(self.context_budget, bool) or not isinstance(self.context_budget, int) or self.context_budget < 1:
            raise ConfigError(f"context_budget must be a positive integer, got {self.context_budget!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.timing not in TIMING_MODES:
            raise ConfigError(f"timing must be one of {TIMING_MODES}, got {self.timing!r}")
        unknown = set(self.disable) - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"cannot disable unknown components {sorted(unknown)}; known: {COMPONENTS}")
        if not self.verify_timeout_secs > 0:
            raise ConfigError("verify_timeout_secs must be positive")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")

    def triage_coefficients(self) -> TriageCoefficients:
        return TriageCoefficients(self.alpha, self.beta, self.gamma)

    def relevance_coefficients(self) -> RelevanceCoefficients:
        return RelevanceCoefficients(self.lambda1, self.lambda2, self.lambda3)

    def fusion_weights(self) -> FusionWeights:
        return FusionWeights.from_list(self.weights)

    def thresholds(self) -> Thresholds:
        return Thresholds(self.tau_high, self.tau_low)

    def disabled(self, component: str) -> bool:
        return component in self.disable

    @property
    def modeled_timing(self) -> bool:
        return self.timing == "modeled" or (self.timing == "auto" and self.backend == "rules")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["weights"] = list(self.weights)
        d["disable"] = list(self.disable)
        return d

    def digest(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in NON_SEMANTIC_KEYS}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


KNOWN_KEYS = tuple(f.name for f in fields(Config))


def default_config() -> Config:
    text = resources.files("vulnaudit.data").joinpath("default_config.json").read_text(encoding="utf-8")
    return from_dict(json.loads(text))


def from_dict(data: dict[str, Any], base: Config | None = None) -> Config:
    unknown = sorted(set(data) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = dict(data)
    if "weights" in values:
        values["weights"] = tuple(values["weights"])
    if "disable" in values:
        values["disable"] = tuple(values["disable"])
    try:
        return replace(base, **values) if base is not None else Config(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | None = None) -> Config:
    """Defaults, with the JSON file at ``path`` layered on top."""
    base = default_config()
    if path is None:
        return base
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return from_dict(data, base)


def _parse_value(key: str, raw: str) -> Any:
    if key == "disable":
        return tuple(p for p in raw.replace("+", " ").replace("|", " ").split() if p) if raw.strip() else ()
    if key == "weights":
        parts = raw.replace("/", " ").replace(":", " ").replace("[", " ").replace("]", " ").split()
        return tuple(float(p) for p in parts)
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def split_overrides(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def apply_overrides(config: Config, pairs: Iterable[str]) -> Config:
    """Apply ``key=value`` strings; ``w1``..``w6`` address single fusion weights."""
    updates: dict[str, Any] = {}
    weights = list(config.weights)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = (s.strip() for s in pair.split("=", 1))
        if key in ("w1", "w2", "w3", "w4", "w5", "w6"):
            try:
                weights[int(key[1]) - 1] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"{key} needs a number, got {raw!r}") from exc
            updates["weights"] = tuple(weights)
            continue
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        if key == "weights":
            weights = list(updates[key])
    return from_dict(updates, config)
