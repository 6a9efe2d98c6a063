"""Unified diff parsing and canonical re-serialization.

Accepts POSIX ``diff -u`` and git-style output. Hunk bodies are consumed by the
counts announced in their ``@@`` header, so lines such as ``--- x`` inside a
hunk are never mistaken for file headers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

MARKERS = {" ": "context", "+": "added", "-": "removed"}
PREFIX = {v: k for k, v in MARKERS.items()}

HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
OLD_RE = re.compile(r"^--- (\S.*?)(?:\t.*)?$")
NEW_RE = re.compile(r"^\+\+\+ (\S.*?)(?:\t.*)?$")
GIT_RE = re.compile(r"^diff --git a/(.*) b/(.*)$")


class MalformedDiffError(ValueError):
    """A hunk body disagrees with its header counts."""


@dataclass(frozen=True)
class DiffHunk:
    file: str
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        old = sum(1 for m, _ in self.lines if m in ("context", "removed"))
        new = sum(1 for m, _ in self.lines if m in ("context", "added"))
        if old != self.old_len or new != self.new_len:
            raise MalformedDiffError(
                f"hunk {self.header()} in {self.file}: body has {old} old / {new} new lines"
            )

    def header(self) -> str:
        return f"@@ -{self.old_start},{self.old_len} +{self.new_start},{self.new_len} @@"

    def new_side(self) -> list[tuple[int, str, str]]:
        """(new line number, marker, text) for context and added lines."""
        out, no = [], self.new_start
        for marker, text in self.lines:
            if marker == "removed":
                continue
            out.append((no, marker, text))
            no += 1
        return out

    @property
    def added(self) -> int:
        return sum(1 for m, _ in self.lines if m == "added")

    @property
    def removed(self) -> int:
        return sum(1 for m, _ in self.lines if m == "removed")


def _split_lines(text: str) -> list[str]:
    # str.splitlines would also break on form feeds and other separators that
    # are legitimate inside source lines
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _strip_prefix(path: str) -> str:
    path = path.strip()
    if path.startswith('"') and path.endswith('"'):
        path = path[1:-1]
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def parse_unified_diff(text: str) -> list[DiffHunk]:
    """Parse unified diff text into hunks, in order of appearance.

    Hunks with no preceding ``---``/``+++`` pair are attributed to ``"unknown"``.
    Raises :class:`MalformedDiffError` naming the hunk when a body runs short
    or contains an unexpected line.
    """
    lines = _split_lines(text)
    hunks: list[DiffHunk] = []
    old_path = new_path = None
    git_path = None
    ordinal = 0
    i = 0
    while i < len(lines):
        line = lines[i]
        m = GIT_RE.match(line)
        if m:
            git_path = m.group(2)
            old_path = new_path = None
            i += 1
            continue
        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            om, nm = OLD_RE.match(line), NEW_RE.match(lines[i + 1])
            old_path = om.group(1) if om else None
            new_path = nm.group(1) if nm else None
            i += 2
            continue
        m = HUNK_RE.match(line)
        if not m:
            i += 1  # preamble, index lines, mode lines, commit messages
            continue
        ordinal += 1
        old_start, new_start = int(m.group(1)), int(m.group(3))
        old_len = 1 if m.group(2) is None else int(m.group(2))
        new_len = 1 if m.group(4) is None else int(m.group(4))
        file = _hunk_file(old_path, new_path, git_path)
        name = f"#{ordinal} ({line.strip()}) in {file}"
        body: list[tuple[str, str]] = []
        old_left, new_left = old_len, new_len
        i += 1
        while old_left > 0 or new_left > 0:
            if i >= len(lines):
                raise MalformedDiffError(
                    f"hunk {name}: ended early, missing {old_left} old / {new_left} new lines"
                )
            raw = lines[i]
            if raw.startswith("\\"):
                i += 1
                continue
            marker = MARKERS.get(raw[:1], "context" if raw == "" else None)
            if marker is None:
                raise MalformedDiffError(f"hunk {name}: unexpected line {i + 1}: {raw[:60]!r}")
            if marker in ("context", "removed"):
                old_left -= 1
            if marker in ("context", "added"):
                new_left -= 1
            if old_left < 0 or new_left < 0:
                raise MalformedDiffError(f"hunk {name}: body longer than header counts")
            body.append((marker, raw[1:]))
            i += 1
        while i < len(lines) and lines[i].startswith("\\"):
            i += 1
        if (
            i < len(lines)
            and lines[i][:1] in ("+", "-", " ")
            and lines[i] != "-- "  # format-patch signature
            and not _is_header(lines, i)
        ):
            raise MalformedDiffError(f"hunk {name}: body longer than header counts")
        hunks.append(DiffHunk(file, old_start, old_len, new_start, new_len, tuple(body)))
    return hunks


def _is_header(lines: list[str], i: int) -> bool:
    line = lines[i]
    return (
        line.startswith("--- ")
        and i + 1 < len(lines)
        and lines[i + 1].startswith("+++ ")
    )


def _hunk_file(old_path, new_path, git_path) -> str:
    if new_path and new_path != "/dev/null":
        return _strip_prefix(new_path)
    if old_path and old_path != "/dev/null":
        return _strip_prefix(old_path)
    if git_path:
        return git_path
    return "unknown"


def serialize_hunks(hunks: list[DiffHunk]) -> str:
    """Render hunks as a canonical unified diff (``a/``/``b/`` headers, explicit counts)."""
    out: list[str] = []
    current = None
    for h in hunks:
        if h.file != current:
            out.append(f"--- a/{h.file}")
            out.append(f"+++ b/{h.file}")
            current = h.file
        out.append(h.header())
        out.extend(PREFIX[m] + t for m, t in h.lines)
    return "\n".join(out) + ("\n" if out else "")


def normalize_diff(text: str) -> str:
    """Rewrite diff text into the canonical header form, line by line.

    Drops git preambles, index/mode lines, timestamps, hunk section headings and
    no-newline markers; canonicalizes ``---``/``+++`` paths and hunk counts. It
    is a streaming rewrite kept independent of :func:`parse_unified_diff` so the
    two can check each other.
    """
    out: list[str] = []
    lines = _split_lines(text)
    old_path = new_path = git_path = None
    emitted_for = None
    remaining_old = remaining_new = 0
    i = 0
    while i < len(lines):
        line = lines[i]
        if remaining_old > 0 or remaining_new > 0:
            if line.startswith("\\"):
                i += 1
                continue
            prefix = line[:1] if line else " "
            if prefix in " -":
                remaining_old -= 1
            if prefix in " +":
                remaining_new -= 1
            out.append(prefix + line[1:])
            i += 1
            continue
        if line.startswith("\\"):
            i += 1
            continue
        m = GIT_RE.match(line)
        if m:
            git_path, old_path, new_path = m.group(2), None, None
            i += 1
            continue
        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            old_path = line[4:].split("\t")[0].strip()
            new_path = lines[i + 1][4:].split("\t")[0].strip()
            i += 2
            continue
        m = HUNK_RE.match(line)
        if m:
            file = _hunk_file(old_path, new_path, git_path)
            if file != emitted_for:
                out.append(f"--- a/{file}")
                out.append(f"+++ b/{file}")
                emitted_for = file
            os_, ol, ns, nl = m.group(1), m.group(2) or "1", m.group(3), m.group(4) or "1"
            out.append(f"@@ -{os_},{ol} +{ns},{nl} @@")
            remaining_old, remaining_new = int(ol), int(nl)
        i += 1
    return "\n".join(out) + ("\n" if out else "")
