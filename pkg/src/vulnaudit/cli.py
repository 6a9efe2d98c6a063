"""Command-line entry point.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error (bad flag,
unknown config key or invalid value). Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .config import COMPONENTS, PRESETS, Config, ConfigError, apply_overrides, load_config, split_overrides
from .core import CaseResult, parse_report, render_report
from .corpus import generate_synthetic_corpus
from .harness import (
    ABLATION_COLUMNS,
    B_GRID,
    K_GRID,
    SWEEP_PARAMS,
    TAU_GRID,
    ablate,
    ablation_table,
    load_dataset,
    rows_to_csv,
    run_benchmark,
    sweep,
    sweep_columns,
)
from .ingest import build_snapshot, file_regions
from .metrics import CSV_COLUMNS, compute_metrics
from .scheduler import MemoryStore, make_backends, run_pipeline

log = logging.getLogger("vulnaudit")

DIFF_SUFFIXES = (".diff", ".patch")
PARETO_COLUMNS = ("label", "preset", "config_digest", "avg_tokens", "f1", "pareto_optimal")
DEFAULT_GRIDS = {"k": K_GRID, "context_budget": B_GRID, "thresholds": TAU_GRID}


class UsageError(Exception):
    """Bad arguments detected after parsing."""


@dataclass(frozen=True)
class Target:
    id: str
    task: str
    code_or_diff: str


# --------------------------------------------------------------------------- #
# Helpers
# --------------------------------------------------------------------------- #


def _config(args) -> Config:
    cfg = load_config(args.config)
    if args.overrides:
        cfg = apply_overrides(cfg, split_overrides(args.overrides))
    if getattr(args, "workers", None):
        cfg = apply_overrides(cfg, [f"workers={args.workers}"])
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv_list(text: str | None) -> list[str]:
    return [p.strip() for p in (text or "").split(",") if p.strip()]


def _is_diff(path: Path, text: str) -> bool:
    head = text.lstrip()
    return path.suffix.lower() in DIFF_SUFFIXES or head.startswith("diff --git") or head.startswith("--- ")


def _targets(repo: Path, target: Path, function: str | None) -> list[Target]:
    text = target.read_text(encoding="utf-8", errors="replace")
    try:
        rel = target.resolve().relative_to(repo.resolve()).as_posix()
    except ValueError:
        rel = target.name
    if _is_diff(target, text):
        return [Target(rel, "commit", text)]
    funcs = file_regions(rel, text)
    if function:
        funcs = [(n, body) for n, body in funcs if n == function]
        if not funcs:
            raise UsageError(f"no function named {function!r} in {target}")
    if not funcs:
        # not a parseable source file; analyse it as a single unit
        return [Target(rel, "function", text)]
    return [Target(f"{rel}:{name}", "function", body) for name, body in funcs]


def _pareto_rows(points: list[dict[str, Any]]) -> list[dict[str, Any]]:
    from .plotting import pareto_front

    flags = pareto_front(points)
    return [dict(p, pareto_optimal=flag) for p, flag in zip(points, flags)]


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #


def cmd_analyze(args) -> int:
    cfg = _config(args)
    repo, target = Path(args.repo), Path(args.target)
    snapshot = build_snapshot(repo)
    backends = make_backends(cfg)
    memory = MemoryStore(cfg.cache_dir, enabled=not cfg.disabled("memory"))
    project = args.project or repo.resolve().name
    results = [run_pipeline(t, snapshot, cfg, backends, memory, project) for t in _targets(repo, target, args.function)]
    report = render_report(results, cfg.digest())
    if args.out:
        (_out_dir(args) / "analyze.report.json").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return 1 if any(r.error for r in results) else 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    presets = _csv_list(args.preset) or [cfg.preset]
    for p in presets:
        if p not in PRESETS:
            raise UsageError(f"unknown preset {p!r}; choose from {', '.join(PRESETS)}")
    dataset = load_dataset(args.dataset)
    out = _out_dir(args)
    rows = []
    for p in presets:
        bench = run_benchmark(dataset, cfg, preset=p, repos_dir=args.repos)
        paths = bench.write(out)
        log.info("wrote %s", paths["report"])
        rows.append(bench.csv_row())
    text = rows_to_csv(rows, CSV_COLUMNS)
    (out / "bench.metrics.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _parse_values(param: str, raw: str | None) -> list:
    if not raw:
        return list(DEFAULT_GRIDS.get(param, ()))
    if param == "thresholds":
        values = []
        for pair in raw.split(","):
            parts = pair.split(":")
            if len(parts) != 2:
                raise UsageError(f"threshold values look like high:low, got {pair!r}")
            values.append((float(parts[0]), float(parts[1])))
        return values
    return [json.loads(v) for v in _csv_list(raw)]


def cmd_sweep(args) -> int:
    from .plotting import plot_sensitivity

    cfg = _config(args)
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"cannot sweep {args.param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    try:
        values = _parse_values(args.param, args.values)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad --values: {exc}") from exc
    if not values:
        raise UsageError(f"--values is required for {args.param}")
    rows = sweep(args.param, values, args.dataset, cfg, repos_dir=args.repos)
    out = _out_dir(args)
    text = rows_to_csv(rows, sweep_columns(args.param))
    (out / f"sweep-{args.param}.csv").write_text(text, encoding="utf-8")
    plot_sensitivity(rows, args.param, out / f"sweep-{args.param}.png")
    sys.stdout.write(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.table:
        from .plotting import plot_ablation

        rows = ablation_table(args.dataset, cfg, repos_dir=args.repos)
        text = rows_to_csv(rows, ABLATION_COLUMNS)
        (out / "ablation.csv").write_text(text, encoding="utf-8")
        plot_ablation(rows, out / "ablation.png")
        sys.stdout.write(text)
        return 0
    disable = _csv_list(args.disable)
    if not disable:
        raise UsageError("--disable needs at least one component (or pass --table)")
    unknown = sorted(set(disable) - set(COMPONENTS))
    if unknown:
        raise UsageError(f"unknown components {unknown}; choose from {', '.join(COMPONENTS)}")
    bench = ablate(args.dataset, cfg, disable, repos_dir=args.repos)
    stem = f"ablate-{'+'.join(sorted(set(disable)))}-{bench.digest}"
    bench.write(out, stem)
    text = rows_to_csv([bench.csv_row()], CSV_COLUMNS)
    sys.stdout.write(text)
    return 0


def cmd_gen_corpus(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    if not 0 < args.fraction < 1:
        raise UsageError("--fraction must lie strictly between 0 and 1")
    summary = generate_synthetic_corpus(args.seed, args.n, args.fraction, args.out)
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _sibling_metrics(path: Path) -> dict[str, str] | None:
    name = path.name
    if not name.endswith(".report.json"):
        return None
    csv_path = path.with_name(name[: -len(".report.json")] + ".metrics.csv")
    if not csv_path.exists():
        return None
    rows = list(csv.DictReader(io.StringIO(csv_path.read_text(encoding="utf-8"))))
    return rows[0] if rows else None


def _summarise(path: Path, labels: dict[str, Any] | None) -> tuple[dict[str, Any], list[CaseResult]]:
    digest, results = parse_report(path.read_bytes())
    label = path.name[: -len(".report.json")] if path.name.endswith(".report.json") else path.stem
    row: dict[str, Any] = {"label": label, "preset": label.split("-", 1)[0], "config_digest": digest}
    n = len(results) or 1
    row.update(
        cases=len(results),
        flagged=sum(1 for r in results if r.verdict == "vulnerable"),
        errors=sum(1 for r in results if r.error),
        avg_tokens=sum(r.tokens_used for r in results) / n,
        early_exit_rate=sum(1 for r in results if r.early_exit and not r.error) / n,
        verification_rate=sum(1 for r in results if r.verified) / n,
        f1=None,
    )
    metrics = _sibling_metrics(path)
    if metrics:
        row["preset"] = metrics.get("preset") or row["preset"]
        row["f1"] = float(metrics["f1"]) if metrics.get("f1") else None
    elif labels is not None and results:
        known = [r for r in results if r.sample_id in labels]
        if known:
            samples = [labels[r.sample_id] for r in known]
            m = compute_metrics(known, [s.vulnerable for s in samples], [s.vulnerable_lines for s in samples])
            row["f1"] = m.f1
    return row, results


def _fmt_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4f}" if value < 10 else f"{value:.1f}"
    return str(value)


def render_markdown(rows: Sequence[dict[str, Any]], cases: Sequence[Sequence[CaseResult]], max_findings: int = 20) -> str:
    cols = ("label", "preset", "cases", "flagged", "errors", "avg_tokens", "early_exit_rate",
            "verification_rate", "f1", "pareto_optimal")
    out = ["# Audit report", "", "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in rows:
        out.append("| " + " | ".join(_fmt_cell(row.get(c)) for c in cols) + " |")
    for row, results in zip(rows, cases):
        accepted = [(r.sample_id, f) for r in results for f in r.findings if f.accepted]
        out += ["", f"## {row['label']}", ""]
        if not accepted:
            out.append("No accepted findings.")
            continue
        accepted.sort(key=lambda x: (-(x[1].score or 0.0), x[0], x[1].location.file, x[1].location.line_start))
        out += ["| case | issue | location | score | action |", "|---|---|---|---|---|"]
        for sid, f in accepted[:max_findings]:
            loc = f"{f.location.file}:{f.location.line_start}"
            out.append(f"| {sid} | {f.issue_type} | {loc} | {_fmt_cell(f.score)} | {f.action} |")
        if len(accepted) > max_findings:
            out.append(f"\n{len(accepted) - max_findings} more accepted findings not shown.")
    return "\n".join(out) + "\n"


def cmd_report(args) -> int:
    from .plotting import plot_pareto

    labels = None
    if args.dataset:
        labels = {s.id: s for s in load_dataset(args.dataset).samples}
    rows, cases = [], []
    for p in args.reports:
        row, results = _summarise(Path(p), labels)
        rows.append(row)
        cases.append(results)
    rows = _pareto_rows(rows)
    out = _out_dir(args)
    (out / "pareto.csv").write_text(rows_to_csv(rows, PARETO_COLUMNS), encoding="utf-8")
    plot_pareto(rows, out / "pareto.png")
    text = render_markdown(rows, cases)
    (out / "report.md").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #


def _common(p: argparse.ArgumentParser, out_default: str | None = "vulnaudit-out") -> None:
    p.add_argument("--config", help="JSON config file layered over the defaults")
    p.add_argument("--overrides", help="comma-separated key=value pairs applied over the config")
    p.add_argument("--out", default=out_default, help="output directory")


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="JSONL dataset")
    p.add_argument("--repos", help="directory of per-project repositories (default: <dataset dir>/repos)")
    p.add_argument("--workers", type=int, help="parallel project workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vulnaudit", description="Layered vulnerability auditing and benchmarking.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="audit one source file or diff against a repository")
    _common(p, out_default=None)
    p.add_argument("--repo", required=True, help="repository root")
    p.add_argument("--target", required=True, help="source file or unified diff")
    p.add_argument("--function", help="only this function of the target file")
    p.add_argument("--project", help="project name for memory (default: repository directory name)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="run presets over a dataset")
    _common(p)
    _dataset_args(p)
    p.add_argument("--preset", help=f"comma-separated presets ({', '.join(PRESETS)})")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="vary one parameter over a dataset")
    _common(p)
    _dataset_args(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", help="comma-separated values; thresholds take high:low pairs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="run the full preset with components disabled")
    _common(p)
    _dataset_args(p)
    p.add_argument("--disable", help=f"comma-separated components ({', '.join(COMPONENTS)})")
    p.add_argument("--table", action="store_true", help="remove each component in turn and tabulate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-corpus", help="write a seeded synthetic corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--fraction", type=float, default=0.4, help="share of vulnerable samples")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("report", help="render report JSON files as markdown plus Pareto CSV and plot")
    p.add_argument("reports", nargs="+", help="*.report.json files")
    p.add_argument("--dataset", help="dataset for labels when no metrics CSV sits beside a report")
    p.add_argument("--out", default="vulnaudit-out", help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"vulnaudit {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit 1
        if args.verbose:
            log.exception("command failed")
        print(f"vulnaudit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
