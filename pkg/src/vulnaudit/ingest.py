"""Repository snapshots and extraction of analysis regions from samples."""

from __future__ import annotations

import ast
import json
import logging
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

from . import clike
from .core import Region, SourceLocation
from .diffs import parse_unified_diff

log = logging.getLogger(__name__)

LANGUAGES = {
    ".c": "c",
    ".h": "c",
    ".cc": "cpp",
    ".cpp": "cpp",
    ".cxx": "cpp",
    ".hpp": "cpp",
    ".hh": "cpp",
    ".py": "python",
    ".ini": "config",
    ".yaml": "config",
    ".yml": "config",
    ".toml": "config",
    ".json": "config",
    ".cfg": "config",
    ".conf": "config",
    ".txt": "text",
    ".md": "text",
}
# languages whose functions the scanner extracts
SUPPORTED_LANGUAGES = ("c", "cpp", "python")
HISTORY_SIDECAR = ".vulnaudit-history.jsonl"
SKIP_DIRS = {".git", ".hg", ".svn", "node_modules", "__pycache__", "build", "dist", ".venv", "venv"}


class EmptySampleError(ValueError):
    """A sample yields no analysable region."""


@dataclass(frozen=True)
class FileEntry:
    path: str
    size: int
    language: str


@dataclass(frozen=True)
class FunctionRecord:
    id: str
    name: str
    location: SourceLocation
    body: str

    def __post_init__(self) -> None:
        if not self.body:
            raise ValueError(f"function {self.id} has an empty body")
        if not clike.IDENT_RE.fullmatch(self.name):
            raise ValueError(f"function name {self.name!r} is not an identifier")


@dataclass(frozen=True)
class ChangeRecord:
    path: str
    commits: int
    last_touch_rank: int


@dataclass(frozen=True)
class SnapshotOptions:
    extensions: tuple[str, ...] = tuple(LANGUAGES)
    history_path: str | None = None
    max_file_bytes: int = 1_000_000


@dataclass(frozen=True)
class RepoSnapshot:
    root: str
    files: tuple[FileEntry, ...] = ()
    functions: tuple[FunctionRecord, ...] = ()
    call_edges: tuple[tuple[str, str], ...] = ()
    change_log: tuple[ChangeRecord, ...] = ()
    texts: dict[str, str] = field(default_factory=dict, repr=False, compare=False)
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ids = [f.id for f in self.functions]
        if len(ids) != len(set(ids)):
            raise ValueError("function ids must be unique")
        known = set(ids)
        for caller, _ in self.call_edges:
            if caller not in known:
                raise ValueError(f"call edge from unknown function {caller}")

    @classmethod
    def empty(cls) -> RepoSnapshot:
        return cls(root="")

    def text(self, path: str) -> str:
        return self.texts.get(path, "")

    @cached_property
    def _by_id(self) -> dict[str, FunctionRecord]:
        return {f.id: f for f in self.functions}

    @cached_property
    def _by_name(self) -> dict[str, list[FunctionRecord]]:
        out: dict[str, list[FunctionRecord]] = {}
        for f in self.functions:
            out.setdefault(f.name, []).append(f)
        return out

    @cached_property
    def _changes(self) -> dict[str, ChangeRecord]:
        return {c.path: c for c in self.change_log}

    def function(self, fid: str) -> FunctionRecord:
        return self._by_id[fid]

    def functions_named(self, name: str) -> list[FunctionRecord]:
        return self._by_name.get(name, [])

    def functions_in(self, path: str) -> list[FunctionRecord]:
        return [f for f in self.functions if f.location.file == path]

    def function_at(self, path: str, line_start: int, line_end: int) -> FunctionRecord | None:
        probe = SourceLocation(path, line_start, max(line_start, line_end))
        for f in self.functions:
            if f.location.overlaps(probe):
                return f
        return None

    def callers_of(self, name: str) -> list[FunctionRecord]:
        return [self._by_id[c] for c, callee in self.call_edges if callee == name]

    def callees_of(self, fid: str) -> list[str]:
        return [callee for c, callee in self.call_edges if c == fid]

    def change_record(self, path: str) -> ChangeRecord | None:
        return self._changes.get(path)


def load_history(path: str | os.PathLike) -> list[ChangeRecord]:
    """Read the JSON-lines change-history sidecar."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                records.append(ChangeRecord(str(d["path"]), int(d["commits"]), int(d["last_touch_rank"])))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("skipping history line %d of %s: %s", lineno, path, exc)
    return records


def extract_functions(path: str, text: str, language: str) -> list[FunctionRecord]:
    if language == "python":
        return _python_functions(path, text)
    if language not in ("c", "cpp"):
        return []
    out = []
    for span in clike.scan_functions(text):
        body = text[span.start : span.end]
        loc = SourceLocation(path, span.line_start, span.line_end)
        out.append(FunctionRecord(f"{path}:{span.line_start}:{span.name}", span.name, loc, body))
    return out


def _python_functions(path: str, text: str) -> list[FunctionRecord]:
    try:
        tree = ast.parse(text)
    except SyntaxError:
        return []
    lines = text.split("\n")
    out = []
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            start = min([node.lineno] + [d.lineno for d in node.decorator_list])
            end = node.end_lineno or node.lineno
            body = "\n".join(lines[start - 1 : end])
            out.append(
                FunctionRecord(f"{path}:{start}:{node.name}", node.name, SourceLocation(path, start, end), body)
            )
    out.sort(key=lambda f: (f.location.line_start, f.name))
    return out


def _call_names(body: str, language: str) -> set[str]:
    if language == "python":
        head, _, rest = body.partition(":")
        code = rest if rest else body
        return {m.group(1) for m in clike.CALL_RE.finditer(code)}
    brace = clike.mask_code(body).find("{")
    code = body[brace + 1 :] if brace >= 0 else body
    return {c.name for c in clike.find_calls(code)}


def build_call_edges(functions: Iterable[FunctionRecord], languages: dict[str, str]) -> list[tuple[str, str]]:
    functions = list(functions)
    known = {f.name for f in functions}
    edges = set()
    for f in functions:
        lang = languages.get(f.location.file, "c")
        for name in _call_names(f.body, lang):
            if name in known:
                edges.add((f.id, name))
    return sorted(edges)


def build_snapshot(root: str | os.PathLike, options: SnapshotOptions | None = None) -> RepoSnapshot:
    """Index a repository directory.

    Raises OSError when ``root`` is not a readable directory. An empty index is
    not an error; it is logged and recorded on ``snapshot.warnings``.
    """
    options = options or SnapshotOptions()
    root_path = Path(root)
    if not root_path.is_dir() or not os.access(root_path, os.R_OK | os.X_OK):
        raise OSError(f"repository root is not a readable directory: {root}")

    files: list[FileEntry] = []
    texts: dict[str, str] = {}
    functions: list[FunctionRecord] = []
    languages: dict[str, str] = {}
    for dirpath, dirnames, filenames in os.walk(root_path):
        dirnames[:] = sorted(d for d in dirnames if d not in SKIP_DIRS)
        for name in sorted(filenames):
            full = Path(dirpath) / name
            suffix = full.suffix.lower()
            if suffix not in options.extensions or name == HISTORY_SIDECAR:
                continue
            rel = full.relative_to(root_path).as_posix()
            size = full.stat().st_size
            if size > options.max_file_bytes:
                continue
            language = LANGUAGES.get(suffix, "text")
            text = full.read_text(encoding="utf-8", errors="replace")
            files.append(FileEntry(rel, size, language))
            texts[rel] = text
            languages[rel] = language
            functions.extend(extract_functions(rel, text, language))

    warnings: list[str] = []
    if not files:
        warnings.append(f"empty snapshot: no indexable files under {root}")
        log.warning(warnings[-1])

    history = options.history_path or root_path / HISTORY_SIDECAR
    change_log = load_history(history) if Path(history).is_file() else []
    return RepoSnapshot(
        root=str(root_path),
        files=tuple(files),
        functions=tuple(functions),
        call_edges=tuple(build_call_edges(functions, languages)),
        change_log=tuple(change_log),
        texts=texts,
        warnings=tuple(warnings),
    )


# --------------------------------------------------------------------------- #
# Regions
# --------------------------------------------------------------------------- #


def _same_code(a: str, b: str) -> bool:
    return re.sub(r"\s+", "", a) == re.sub(r"\s+", "", b)


def function_region(sample_id: str, code: str, snapshot: RepoSnapshot, region_id: str | None = None) -> Region:
    code = code.rstrip("\n")
    if not code.strip():
        raise EmptySampleError(f"sample {sample_id}: empty function text")
    name = clike.function_name_of(code)
    nlines = code.count("\n") + 1
    record = None
    if name:
        named = snapshot.functions_named(name)
        exact = [f for f in named if _same_code(f.body, code)]
        record = (exact or named or [None])[0]
    if record is not None:
        start = record.location.line_start
        loc = SourceLocation(record.location.file, start, start + nlines - 1)
    else:
        loc = SourceLocation(f"{sample_id}.c", 1, nlines)
    return Region(
        id=region_id or f"{sample_id}/fn",
        kind="function",
        location=loc,
        text=code,
        function_name=name,
    )


def hunk_regions(sample_id: str, diff_text: str, snapshot: RepoSnapshot) -> list[Region]:
    hunks = parse_unified_diff(diff_text)
    if not hunks:
        raise EmptySampleError(f"sample {sample_id}: diff has no hunks")
    regions = []
    for j, h in enumerate(hunks):
        if h.new_len > 0:
            side = h.new_side()
            text = "\n".join(("+" if m == "added" else " ") + t for _, m, t in side)
            start, end, which = h.new_start, h.new_start + h.new_len - 1, "new"
            added = frozenset(no for no, m, _ in side if m == "added")
        else:
            text = "\n".join("-" + t for m, t in h.lines if m == "removed")
            start = max(1, h.old_start)
            end, which, added = start + h.old_len - 1, "old", frozenset()
        func = snapshot.function_at(h.file, start, end) if which == "new" else None
        regions.append(
            Region(
                id=f"{sample_id}/h{j}",
                kind="hunk",
                location=SourceLocation(h.file, start, end, which),
                text=text,
                function_name=func.name if func else None,
                added_lines=added,
                churn=(h.added + h.removed) / len(h.lines) if h.lines else 0.0,
            )
        )
    return regions


def extract_regions(sample, snapshot: RepoSnapshot) -> list[Region]:
    """Regions for a function-level (one region) or commit-level (one per hunk) sample."""
    if sample.task == "function":
        return [function_region(sample.id, sample.code_or_diff, snapshot)]
    if sample.task == "commit":
        return hunk_regions(sample.id, sample.code_or_diff, snapshot)
    raise ValueError(f"unknown sample task {sample.task!r}")


def file_regions(path: str, text: str) -> list[tuple[str, str]]:
    """(function name, function text) pairs for every function in a source file."""
    language = LANGUAGES.get(Path(path).suffix.lower(), "c")
    return [(f.name, f.body) for f in extract_functions(path, text, language)]
