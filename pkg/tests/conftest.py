from __future__ import annotations

import json
import os
import time
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from vulnaudit.config import Config
from vulnaudit.corpus import generate_synthetic_corpus
from vulnaudit.harness import load_dataset, run_benchmark

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS_SEED = 7
CORPUS_SIZE = 200
CORPUS_FRACTION = 0.4
BENCH_WORKERS = min(8, os.cpu_count() or 1)

_criteria: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None:
        return
    doc = (item.function.__doc__ or "").strip().splitlines()
    label = doc[0] if doc else item.name
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _criteria[number] = (label, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        label, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {label}")


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("corpus")
    generate_synthetic_corpus(CORPUS_SEED, CORPUS_SIZE, CORPUS_FRACTION, out)
    return out


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    return load_dataset(corpus_dir / "corpus.jsonl")


@pytest.fixture(scope="session")
def corpus_truth(corpus_dir) -> dict[str, dict]:
    with open(corpus_dir / "truth.jsonl", encoding="utf-8") as fh:
        return {d["id"]: d for d in map(json.loads, fh)}


@pytest.fixture(scope="session")
def base_config() -> Config:
    return Config(workers=BENCH_WORKERS)


@pytest.fixture(scope="session")
def timed_full_run(corpus, base_config):
    started = time.perf_counter()
    bench = run_benchmark(corpus, base_config)
    return bench, time.perf_counter() - started


@pytest.fixture(scope="session")
def full_run(timed_full_run):
    return timed_full_run[0]


@pytest.fixture(scope="session")
def sequential_run(corpus, base_config):
    return run_benchmark(corpus, replace(base_config, preset="sequential"))


@pytest.fixture
def fixture_repo() -> Path:
    return FIXTURES / "repo"


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Path:
    """A 30-sample corpus for tests that run the pipeline end to end."""
    out = tmp_path_factory.mktemp("small")
    generate_synthetic_corpus(3, 30, 0.5, out)
    return out
