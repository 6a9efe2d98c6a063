from __future__ import annotations

import csv
import io
import json
from dataclasses import replace

import pytest
from conftest import FIXTURES

from vulnaudit.config import Config, ConfigError
from vulnaudit.corpus import generate_synthetic_corpus
from vulnaudit.harness import (
    BUDGET_SWEEP_COLUMNS,
    THRESHOLD_SWEEP_COLUMNS,
    DatasetError,
    Sample,
    SnapshotCache,
    ablate,
    false_positive_rate,
    load_dataset,
    rows_to_csv,
    run_benchmark,
    sweep,
    sweep_columns,
)
from vulnaudit.metrics import CSV_COLUMNS


def _row(i, **kw):
    d = {"id": f"x{i}", "task": "function", "code_or_diff": "int f(void)\n{\n    return 0;\n}\n", "label": "benign"}
    d.update(kw)
    return json.dumps(d)


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample("", "function", "x", "benign")
    with pytest.raises(ValueError):
        Sample("a", "patch", "x", "benign")
    with pytest.raises(ValueError):
        Sample("a", "function", "x", "maybe")
    with pytest.raises(ValueError):
        Sample("a", "function", "  ", "benign")
    with pytest.raises(ValueError):
        Sample("a", "commit", (FIXTURES / "malformed_hunk.diff").read_text(), "benign")
    s = Sample.from_dict({"id": 3, "task": "function", "code_or_diff": "x", "label": "vulnerable",
                          "vulnerable_lines": [["a.c", "4"]]})
    assert s.id == "3" and s.vulnerable and s.vulnerable_lines == (("a.c", 4),) and s.split == "test"


def test_load_dataset_skips_malformed_and_duplicates(tmp_path):
    lines = [_row(i) for i in range(20)] + [_row(0), "{broken", ""]
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join(lines) + "\n")
    ds = load_dataset(path)
    assert len(ds.samples) == 20 and ds.malformed == 2 and ds.total_lines == 22
    assert ds.root == tmp_path


def test_load_dataset_rejects_mostly_malformed(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join([_row(i) for i in range(8)] + ["nope", "nope"]) + "\n")
    with pytest.raises(DatasetError):
        load_dataset(path)
    path.write_text("\n")
    with pytest.raises(DatasetError):
        load_dataset(path)
    with pytest.raises(OSError):
        load_dataset(tmp_path / "missing.jsonl")


def test_generated_corpus_is_reproducible(tmp_path):
    a = generate_synthetic_corpus(5, 12, 0.5, tmp_path / "a")
    b = generate_synthetic_corpus(5, 12, 0.5, tmp_path / "b")
    assert a["samples"] == 12 and a["vulnerable"] == 6
    for name in ("corpus.jsonl", "truth.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    files_a = sorted(p.relative_to(tmp_path / "a").as_posix() for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b").as_posix() for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    ds = load_dataset(tmp_path / "a" / "corpus.jsonl")
    assert ds.malformed == 0
    for s in ds.samples:
        if s.vulnerable:
            for path, line in s.vulnerable_lines:
                text = (tmp_path / "a" / "repos" / s.project / path).read_text().splitlines()
                assert 1 <= line <= len(text)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(5, 1, 0.5, tmp_path / "c")
    with pytest.raises(ValueError):
        generate_synthetic_corpus(5, 10, 1.0, tmp_path / "c")


def test_snapshot_cache_handles_missing_projects(tmp_path):
    cache = SnapshotCache(tmp_path)
    assert cache.get("ghost").files == ()
    assert cache.get("ghost") is cache.get("ghost")
    assert SnapshotCache(None).get("x").functions == ()


@pytest.fixture(scope="module")
def small_bench(small_corpus):
    return run_benchmark(small_corpus / "corpus.jsonl", Config(workers=2))


def test_benchmark_on_small_corpus(small_bench, tmp_path):
    bench = small_bench
    assert len(bench.results) == 30
    assert [r.sample_id for r in bench.results] == [s.id for s in bench.samples]
    assert bench.metrics.n_cases == 30 and bench.metrics.n_errors == 0
    paths = bench.write(tmp_path)
    assert paths["report"].name == f"full-{bench.digest}.report.json"
    rows = list(csv.DictReader(io.StringIO(paths["metrics"].read_text())))
    assert tuple(rows[0]) == CSV_COLUMNS and rows[0]["preset"] == "full"
    assert 0.0 <= false_positive_rate(bench) <= 1.0


def test_preset_argument_overrides_config(small_corpus):
    bench = run_benchmark(small_corpus / "corpus.jsonl", Config(), preset="static")
    assert bench.preset == "static" and bench.metrics.avg_tokens == 0


def test_sweep_reports_invalid_values(small_corpus):
    ds = load_dataset(small_corpus / "corpus.jsonl")
    rows = sweep("k", [4, 0], ds, Config())
    assert rows[0]["valid"] is True and rows[0]["value"] == 4
    assert rows[1]["valid"] is False and rows[1]["note"]
    rows = sweep("thresholds", [(0.3, 0.6)], ds, Config())
    assert rows == [{"param": "thresholds", "tau_high": 0.3, "tau_low": 0.6, "valid": False, "note": rows[0]["note"]}]
    with pytest.raises(ValueError):
        sweep("alpha", [1], ds, Config())
    with pytest.raises(ValueError):
        sweep("k", [], ds, Config())


def test_sweep_columns_and_csv():
    assert sweep_columns("k") == BUDGET_SWEEP_COLUMNS
    assert sweep_columns("thresholds") == THRESHOLD_SWEEP_COLUMNS
    text = rows_to_csv([{"param": "k", "value": 4, "f1": 0.5, "valid": True}], BUDGET_SWEEP_COLUMNS)
    assert text.splitlines() == [",".join(BUDGET_SWEEP_COLUMNS), "k,4,0.500000,,,,true,"]


def test_ablate_validates_components(small_corpus):
    with pytest.raises(ConfigError):
        ablate(small_corpus / "corpus.jsonl", Config(), ["brakes"])
    bench = ablate(small_corpus / "corpus.jsonl", replace(Config(), preset="static"), ["sceptic"])
    assert bench.preset == "full" and bench.config.disable == ("sceptic",)
    assert all(f.evidence is None or f.evidence.e_ctr == 0.0 for r in bench.results for f in r.findings)
