from __future__ import annotations

import json
from dataclasses import replace

import pytest

from vulnaudit.config import COMPONENTS, PRESETS, Config, ConfigError, apply_overrides, load_config, split_overrides


def test_defaults_match_shipped_file():
    assert load_config() == Config()
    c = Config()
    assert (c.k, c.context_budget, c.tau_high, c.tau_low) == (8, 6000, 0.82, 0.48)
    assert PRESETS == ("full", "sequential", "static", "single_agent", "rag_only")
    assert COMPONENTS == ("sceptic", "verification", "context", "memory", "scheduler")


def test_load_layers_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"k": 4, "disable": ["sceptic"]}))
    c = load_config(str(path))
    assert c.k == 4 and c.disable == ("sceptic",)
    path.write_text(json.dumps({"kay": 4}))
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text("[1]")
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text("{oops")
    with pytest.raises(ConfigError):
        load_config(str(path))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"k": 0},
        {"context_budget": 0},
        {"tau_high": 0.3, "tau_low": 0.5},
        {"alpha": 0.9},
        {"weights": (0.2, 0.2, 0.2, 0.2, 0.2)},
        {"preset": "turbo"},
        {"backend": "oracle"},
        {"disable": ("brakes",)},
        {"workers": 0},
        {"verify_timeout_secs": 0},
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        Config(**kwargs)


def test_overrides():
    c = apply_overrides(Config(), split_overrides("k=12, context_budget=4000,disable=sceptic+memory,w6=0.5"))
    assert (c.k, c.context_budget, c.disable) == (12, 4000, ("memory", "sceptic"))
    assert c.weights[5] == 0.5
    c = apply_overrides(Config(), ["weights=0.1/0.2/0.2/0.25/0.25/0.3", "preset=static"])
    assert c.weights[0] == 0.1 and c.preset == "static"
    for bad in (["k"], ["nope=1"], ["w1=x"], ["w1=0.9"]):
        with pytest.raises(ConfigError):
            apply_overrides(Config(), bad)


def test_digest_ignores_runtime_only_keys():
    base = Config()
    assert replace(base, workers=4, cache_dir="/tmp/x").digest() == base.digest()
    assert replace(base, k=4).digest() != base.digest()
    assert len(base.digest()) == 16


def test_integers_promote_for_float_keys():
    c = Config(tau_high=1, tau_low=0)
    assert isinstance(c.tau_high, float)
    assert c.modeled_timing and not Config(backend="llm").modeled_timing
