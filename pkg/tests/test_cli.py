from __future__ import annotations

import csv
import io
import json

import pytest

from vulnaudit.cli import PARETO_COLUMNS, main
from vulnaudit.core import parse_report
from vulnaudit.harness import ABLATION_COLUMNS, BUDGET_SWEEP_COLUMNS
from vulnaudit.metrics import CSV_COLUMNS


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    assert main(["gen-corpus", "--seed", "11", "--n", "10", "--fraction", "0.5", "--out", str(out)]) == 0
    return out


def test_gen_corpus_prints_summary(tmp_path, capsys):
    assert main(["gen-corpus", "--n", "4", "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["samples"] == 4 and (tmp_path / "corpus.jsonl").exists()
    assert main(["gen-corpus", "--n", "1", "--out", str(tmp_path)]) == 2
    assert main(["gen-corpus", "--fraction", "1.5", "--out", str(tmp_path)]) == 2


def test_analyze_source_file(fixture_repo, tmp_path, capsys):
    code = main(["analyze", "--repo", str(fixture_repo), "--target", str(fixture_repo / "src/parse.c"),
                 "--overrides", f"cache_dir={tmp_path}"])
    assert code == 0
    digest, results = parse_report(capsys.readouterr().out.encode())
    assert [r.sample_id for r in results] == ["src/parse.c:parse_header"]
    assert {f.location.line_start for f in results[0].findings} >= {7, 8}


def test_analyze_one_function_and_diff(fixture_repo, tmp_path, capsys):
    assert main(["analyze", "--repo", str(fixture_repo), "--target", str(fixture_repo / "src/main.c"),
                 "--function", "replay_log", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "analyze.report.json").exists()
    _, results = parse_report(capsys.readouterr().out.encode())
    assert [r.sample_id for r in results] == ["src/main.c:replay_log"]
    assert main(["analyze", "--repo", str(fixture_repo), "--target", str(fixture_repo.parent / "repo_change.diff")]) == 0
    _, results = parse_report(capsys.readouterr().out.encode())
    assert results[0].sample_id == "repo_change.diff"
    assert 7 in {f.location.line_start for f in results[0].findings}


def test_usage_errors_exit_2(fixture_repo, tmp_path, capsys):
    target = str(fixture_repo / "src/parse.c")
    assert main(["analyze", "--repo", str(fixture_repo), "--target", target, "--function", "nope"]) == 2
    assert main(["analyze", "--repo", str(fixture_repo), "--target", target, "--overrides", "k=0"]) == 2
    assert main(["analyze", "--repo", str(fixture_repo), "--target", target, "--overrides", "bogus=1"]) == 2
    assert "vulnaudit analyze:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["bench", "--dataset", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path)]) == 1
    assert "missing.jsonl" in capsys.readouterr().err


def test_bench_writes_reports_and_metrics(tiny, tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--dataset", str(tiny / "corpus.jsonl"), "--preset", "full,static", "--out", str(out)]) == 0
    rows = _csv(capsys.readouterr().out)
    assert [r["preset"] for r in rows] == ["full", "static"]
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(list(out.glob("*.report.json"))) == 2 and (out / "bench.metrics.csv").exists()
    assert main(["bench", "--dataset", str(tiny / "corpus.jsonl"), "--preset", "turbo", "--out", str(out)]) == 2


def test_sweep_writes_csv_and_plot(tiny, tmp_path, capsys):
    args = ["sweep", "--dataset", str(tiny / "corpus.jsonl"), "--out", str(tmp_path)]
    assert main(args + ["--param", "k", "--values", "4,8"]) == 0
    rows = _csv((tmp_path / "sweep-k.csv").read_text())
    assert tuple(rows[0]) == BUDGET_SWEEP_COLUMNS and [r["value"] for r in rows] == ["4", "8"]
    assert (tmp_path / "sweep-k.png").exists()
    assert main(args + ["--param", "thresholds", "--values", "0.82:0.48,0.3:0.6"]) == 0
    rows = _csv((tmp_path / "sweep-thresholds.csv").read_text())
    assert [r["valid"] for r in rows] == ["true", "false"]
    assert main(args + ["--param", "thresholds", "--values", "0.8"]) == 2
    capsys.readouterr()


def test_ablate(tiny, tmp_path, capsys):
    args = ["ablate", "--dataset", str(tiny / "corpus.jsonl"), "--out", str(tmp_path)]
    assert main(args + ["--disable", "sceptic,memory"]) == 0
    assert _csv(capsys.readouterr().out)[0]["preset"] == "full"
    assert len(list(tmp_path.glob("ablate-memory+sceptic-*.report.json"))) == 1
    assert main(args) == 2
    assert main(args + ["--disable", "brakes"]) == 2
    assert main(args + ["--table"]) == 0
    rows = _csv((tmp_path / "ablation.csv").read_text())
    assert tuple(rows[0]) == ABLATION_COLUMNS
    assert [r["variant"] for r in rows] == [
        "full", "without_sceptic", "without_verification", "without_context", "without_memory",
        "without_scheduler", "single_agent",
    ]
    assert (tmp_path / "ablation.png").exists()


def test_report_renders_markdown_and_pareto(tiny, tmp_path, capsys):
    bench_out = tmp_path / "bench"
    assert main(["bench", "--dataset", str(tiny / "corpus.jsonl"), "--preset", "full,sequential",
                 "--out", str(bench_out)]) == 0
    reports = sorted(str(p) for p in bench_out.glob("*.report.json"))
    out = tmp_path / "report"
    capsys.readouterr()
    assert main(["report", *reports, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("# Audit report") and text == (out / "report.md").read_text()
    rows = _csv((out / "pareto.csv").read_text())
    assert tuple(rows[0]) == PARETO_COLUMNS
    assert {r["preset"] for r in rows} == {"full", "sequential"}
    assert any(r["pareto_optimal"] == "true" for r in rows)
    assert (out / "pareto.png").exists()


def test_report_uses_dataset_labels_without_metrics(tiny, tmp_path, capsys):
    assert main(["bench", "--dataset", str(tiny / "corpus.jsonl"), "--preset", "static", "--out", str(tmp_path)]) == 0
    (report,) = tmp_path.glob("*.report.json")
    lone = tmp_path / "lone" / "static-x.report.json"
    lone.parent.mkdir()
    lone.write_bytes(report.read_bytes())
    capsys.readouterr()
    assert main(["report", str(lone), "--dataset", str(tiny / "corpus.jsonl"), "--out", str(tmp_path / "r")]) == 0
    (row,) = _csv((tmp_path / "r" / "pareto.csv").read_text())
    assert row["f1"] != ""
