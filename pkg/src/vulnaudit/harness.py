"""Benchmark harness: dataset ingestion, preset runs, sweeps and ablations."""

from __future__ import annotations

import csv
import io
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .config import COMPONENTS, Config, ConfigError
from .core import CaseResult, render_report
from .diffs import parse_unified_diff
from .ingest import RepoSnapshot, build_snapshot
from .metrics import CSV_COLUMNS, MetricsReport, compute_metrics
from .scheduler import Backends, MemoryStore, make_backends, run_pipeline

log = logging.getLogger(__name__)

TASKS = ("function", "commit")
LABELS = ("vulnerable", "benign")
SPLITS = ("train", "valid", "test")
MAX_MALFORMED_FRACTION = 0.10
SWEEP_PARAMS = ("k", "context_budget", "tau_high", "tau_low", "thresholds")
# grids of the sensitivity tables
K_GRID = (4, 8, 12, 16)
B_GRID = (2000, 4000, 6000, 8000)
TAU_GRID = ((0.75, 0.40), (0.82, 0.48), (0.88, 0.48), (0.82, 0.35), (0.82, 0.55))
BUDGET_SWEEP_COLUMNS = ("param", "value", "f1", "avg_tokens", "verification_rate", "config_digest", "valid", "note")
THRESHOLD_SWEEP_COLUMNS = (
    "param", "tau_high", "tau_low", "f1", "avg_tokens", "verification_rate", "config_digest", "valid", "note",
)
ABLATION_COLUMNS = ("variant", "precision", "recall", "f1", "fpr", "avg_tokens", "verification_rate", "config_digest")


class DatasetError(ValueError):
    """The dataset is unusable (too many malformed lines)."""


@dataclass(frozen=True)
class Sample:
    id: str
    task: str
    code_or_diff: str
    label: str
    project: str = ""
    vulnerable_lines: tuple[tuple[str, int], ...] | None = None
    split: str = "test"

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sample id is empty")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if not self.code_or_diff.strip():
            raise ValueError("empty code_or_diff")
        if self.task == "commit":
            parse_unified_diff(self.code_or_diff)

    @property
    def vulnerable(self) -> bool:
        return self.label == "vulnerable"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Sample:
        lines = d.get("vulnerable_lines")
        if lines is not None:
            lines = tuple((str(f), int(n)) for f, n in lines)
        return cls(
            id=str(d["id"]),
            task=d["task"],
            code_or_diff=d["code_or_diff"],
            label=d["label"],
            project=str(d.get("project") or ""),
            vulnerable_lines=lines,
            split=d.get("split") or "test",
        )


@dataclass
class Dataset:
    path: str
    samples: list[Sample]
    malformed: int = 0
    total_lines: int = 0

    @property
    def root(self) -> Path:
        return Path(self.path).parent


def load_dataset(path: str | Path, max_malformed: float = MAX_MALFORMED_FRACTION) -> Dataset:
    """Read a JSONL dataset, skipping and counting malformed lines.

    Raises OSError when the file cannot be read and DatasetError when more than
    ``max_malformed`` of the nonblank lines are malformed.
    """
    samples: list[Sample] = []
    seen: set[str] = set()
    malformed = total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            total += 1
            try:
                sample = Sample.from_dict(json.loads(line))
                if sample.id in seen:
                    raise ValueError(f"duplicate id {sample.id!r}")
            except (ValueError, KeyError, TypeError) as exc:
                malformed += 1
                log.warning("%s:%d: skipping malformed sample: %s", path, lineno, exc)
                continue
            seen.add(sample.id)
            samples.append(sample)
    if total and malformed / total > max_malformed:
        raise DatasetError(f"{path}: {malformed} of {total} lines are malformed (limit {max_malformed:.0%})")
    if not samples:
        raise DatasetError(f"{path}: no usable samples")
    return Dataset(str(path), samples, malformed, total)


class SnapshotCache:
    """Snapshots of ``<repos>/<project>`` built once and shared across runs."""

    def __init__(self, repos_dir: str | Path | None):
        self.repos_dir = Path(repos_dir) if repos_dir is not None else None
        self._cache: dict[str, RepoSnapshot] = {}
        self._lock = threading.Lock()

    def get(self, project: str) -> RepoSnapshot:
        with self._lock:
            if project in self._cache:
                return self._cache[project]
        root = self.repos_dir / project if self.repos_dir is not None and project else None
        if root is not None and root.is_dir():
            snap = build_snapshot(root)
        else:
            if root is not None:
                log.warning("no repository for project %r under %s; using an empty snapshot", project, self.repos_dir)
            snap = RepoSnapshot.empty()
        with self._lock:
            return self._cache.setdefault(project, snap)


@dataclass
class BenchmarkResult:
    preset: str
    config: Config
    results: list[CaseResult]
    metrics: MetricsReport
    samples: list[Sample] = field(repr=False, default_factory=list)
    backend_calls: dict[str, int] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return self.config.digest()

    def report_json(self) -> str:
        return render_report(self.results, self.digest)

    def csv_row(self) -> dict[str, str]:
        return metrics_row(self.preset, self.digest, self.metrics)

    def write(self, out_dir: str | Path, stem: str | None = None) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.preset}-{self.digest}"
        report = out / f"{stem}.report.json"
        report.write_bytes(self.report_json().encode("utf-8"))
        metrics = out / f"{stem}.metrics.csv"
        metrics.write_text(rows_to_csv([self.csv_row()], CSV_COLUMNS), encoding="utf-8")
        return {"report": report, "metrics": metrics}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def metrics_row(preset: str, digest: str, m: MetricsReport) -> dict[str, str]:
    values = {"preset": preset, "config_digest": digest, **m.as_dict()}
    return {c: _fmt(values[c]) for c in CSV_COLUMNS}


def rows_to_csv(rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _fmt(row.get(c)) for c in columns})
    return buf.getvalue()


def _run_project(samples: list[tuple[int, Sample]], config: Config, backends: Backends, memory: MemoryStore,
                 snapshots: SnapshotCache) -> list[tuple[int, CaseResult]]:
    out = []
    for index, sample in samples:
        try:
            snapshot = snapshots.get(sample.project)
        except OSError as exc:
            log.warning("cannot index project %r: %s", sample.project, exc)
            snapshot = RepoSnapshot.empty()
        out.append((index, run_pipeline(sample, snapshot, config, backends, memory, sample.project)))
    return out


def run_benchmark(
    dataset: Dataset | str | Path,
    config: Config,
    preset: str | None = None,
    repos_dir: str | Path | None = None,
    snapshots: SnapshotCache | None = None,
    backends: Backends | None = None,
) -> BenchmarkResult:
    """Run one preset over every sample.

    Projects run concurrently (``config.workers`` threads); samples within a
    project run in dataset order so that memory effects are reproducible.
    """
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    if preset is not None and preset != config.preset:
        config = replace(config, preset=preset)
    if snapshots is None:
        snapshots = SnapshotCache(repos_dir if repos_dir is not None else dataset.root / "repos")
    backends = backends or make_backends(config)
    memory = MemoryStore(config.cache_dir, enabled=not config.disabled("memory"))

    groups: dict[str, list[tuple[int, Sample]]] = {}
    for i, s in enumerate(dataset.samples):
        groups.setdefault(s.project, []).append((i, s))
    results: list[CaseResult | None] = [None] * len(dataset.samples)
    if config.workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_project, g, config, backends, memory, snapshots) for g in groups.values()]
            for fut in futures:
                for i, r in fut.result():
                    results[i] = r
    else:
        for g in groups.values():
            for i, r in _run_project(g, config, backends, memory, snapshots):
                results[i] = r

    final = [r for r in results if r is not None]
    labels = [s.vulnerable for s in dataset.samples]
    truths = [s.vulnerable_lines for s in dataset.samples]
    metrics = compute_metrics(final, labels, truths)
    return BenchmarkResult(config.preset, config, final, metrics, list(dataset.samples), dict(backends.calls))


# --------------------------------------------------------------------------- #
# Sweeps and ablations
# --------------------------------------------------------------------------- #


def _sweep_config(config: Config, param: str, value) -> Config:
    if param == "thresholds":
        high, low = value
        return replace(config, tau_high=float(high), tau_low=float(low))
    if param in ("k", "context_budget"):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{param} must be an integer, got {value}")
        return replace(config, **{param: int(value)})
    return replace(config, **{param: float(value)})


def sweep(
    param: str,
    values: Sequence,
    dataset: Dataset | str | Path,
    config: Config,
    repos_dir: str | Path | None = None,
) -> list[dict[str, Any]]:
    """One benchmark per value with everything else fixed; invalid values give an invalid row."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose from {SWEEP_PARAMS}")
    if not values:
        raise ValueError("sweep needs at least one value")
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    snapshots = SnapshotCache(repos_dir if repos_dir is not None else dataset.root / "repos")
    rows = []
    for value in values:
        row: dict[str, Any] = {"param": param}
        if param in ("k", "context_budget"):
            row["value"] = value
        try:
            cfg = _sweep_config(config, param, value)
        except (ConfigError, ValueError, TypeError) as exc:
            if param != "k" and param != "context_budget":
                row.update(_tau_pair(config, param, value))
            row.update(valid=False, note=str(exc))
            rows.append(row)
            continue
        if param not in ("k", "context_budget"):
            row.update(tau_high=cfg.tau_high, tau_low=cfg.tau_low)
        bench = run_benchmark(dataset, cfg, snapshots=snapshots)
        row.update(
            f1=bench.metrics.f1,
            avg_tokens=bench.metrics.avg_tokens,
            verification_rate=bench.metrics.verification_rate,
            config_digest=cfg.digest(),
            valid=True,
            note="",
        )
        rows.append(row)
    return rows


def _tau_pair(config: Config, param: str, value) -> dict[str, Any]:
    if param == "thresholds":
        try:
            high, low = value
            return {"tau_high": high, "tau_low": low}
        except (TypeError, ValueError):
            return {}
    return {"tau_high": value if param == "tau_high" else config.tau_high,
            "tau_low": value if param == "tau_low" else config.tau_low}


def sweep_columns(param: str) -> tuple[str, ...]:
    return BUDGET_SWEEP_COLUMNS if param in ("k", "context_budget") else THRESHOLD_SWEEP_COLUMNS


def ablate(
    dataset: Dataset | str | Path,
    config: Config,
    disable: Sequence[str],
    repos_dir: str | Path | None = None,
    snapshots: SnapshotCache | None = None,
) -> BenchmarkResult:
    """The full preset with the named components switched off."""
    unknown = set(disable) - set(COMPONENTS)
    if unknown:
        raise ConfigError(f"unknown components {sorted(unknown)}; known: {COMPONENTS}")
    cfg = replace(config, preset="full", disable=tuple(sorted(set(config.disable) | set(disable))))
    return run_benchmark(dataset, cfg, repos_dir=repos_dir, snapshots=snapshots)


def false_positive_rate(bench: BenchmarkResult) -> float:
    negatives = [r for r, s in zip(bench.results, bench.samples) if not s.vulnerable]
    if not negatives:
        return 0.0
    return sum(1 for r in negatives if r.verdict == "vulnerable") / len(negatives)


def ablation_table(
    dataset: Dataset | str | Path,
    config: Config,
    repos_dir: str | Path | None = None,
) -> list[dict[str, Any]]:
    """The full system, each component removed in turn, and the single-agent preset."""
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    snapshots = SnapshotCache(repos_dir if repos_dir is not None else dataset.root / "repos")
    variants: list[tuple[str, BenchmarkResult]] = [
        ("full", run_benchmark(dataset, replace(config, preset="full", disable=()), snapshots=snapshots))
    ]
    for component in COMPONENTS:
        variants.append((f"without_{component}", ablate(dataset, replace(config, disable=()), [component], snapshots=snapshots)))
    variants.append(("single_agent", run_benchmark(dataset, replace(config, preset="single_agent", disable=()), snapshots=snapshots)))
    rows = []
    for name, bench in variants:
        m = bench.metrics
        rows.append(
            {
                "variant": name,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "fpr": false_positive_rate(bench),
                "avg_tokens": m.avg_tokens,
                "verification_rate": m.verification_rate,
                "config_digest": bench.digest,
            }
        )
    return rows
