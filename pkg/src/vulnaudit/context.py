"""Stage II: candidate repository context, relevance ranking and token-budget packing."""

from __future__ import annotations

import hashlib
import math
import posixpath
import re
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from . import clike
from .core import Region, SourceLocation, check_unit

CONTEXT_KINDS = ("caller", "callee", "config", "test", "similar_change", "sibling_code")
CONFIG_SUFFIXES = (".ini", ".yaml", ".yml", ".toml", ".json")
_TEST_PART = re.compile(r"(^|/)(test|tests|spec)(/|$)")

TokenEstimator = Callable[[str], int]


def token_estimate(text: str) -> int:
    """Approximate token count: one token per four UTF-8 bytes, rounded up."""
    return math.ceil(len(text.encode("utf-8")) / 4)


@dataclass(frozen=True)
class RelevanceCoefficients:
    lambda1: float = 0.5
    lambda2: float = 0.3
    lambda3: float = 0.2

    def __post_init__(self) -> None:
        vals = (self.lambda1, self.lambda2, self.lambda3)
        if any(v < 0 for v in vals) or abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"relevance coefficients must be nonnegative and sum to 1, got {vals}")


@dataclass(frozen=True)
class ContextItem:
    kind: str
    path: str
    text: str
    location: SourceLocation | None = None
    name: str | None = None
    rel: float = 0.0
    token_cost: int = 0
    truncated: bool = False

    def __post_init__(self) -> None:
        if self.kind not in CONTEXT_KINDS:
            raise ValueError(f"unknown context kind {self.kind!r}")
        check_unit("rel", self.rel)

    @property
    def line(self) -> int:
        return self.location.line_start if self.location else 0

    def sort_key(self):
        return (-self.rel, self.path, self.line, self.kind)


@dataclass(frozen=True)
class ContextBundle:
    region_id: str
    items: tuple[ContextItem, ...]
    total_tokens: int
    budget: int

    def __post_init__(self) -> None:
        if self.total_tokens > self.budget:
            raise ValueError(f"bundle for {self.region_id} exceeds its budget")

    @property
    def mean_relevance(self) -> float:
        if not self.items:
            return 0.0
        return sum(i.rel for i in self.items) / len(self.items)

    def digest(self) -> str:
        h = hashlib.sha256()
        for item in self.items:
            h.update(f"{item.kind}\0{item.path}\0{item.line}\0{item.truncated}\0".encode())
            h.update(item.text.encode("utf-8"))
            h.update(b"\1")
        return h.hexdigest()

    def of_kind(self, *kinds: str) -> list[ContextItem]:
        return [i for i in self.items if i.kind in kinds]

    def render(self) -> str:
        parts = []
        for item in self.items:
            label = f"{item.kind} {item.name or ''} ({item.path})".replace("  ", " ")
            parts.append(f"// --- {label}\n{item.text}")
        return "\n".join(parts)


def empty_bundle(region_id: str, budget: int) -> ContextBundle:
    return ContextBundle(region_id, (), 0, budget)


def is_test_path(path: str) -> bool:
    stem = posixpath.splitext(posixpath.basename(path))[0]
    return bool(_TEST_PART.search(path)) or stem.startswith("test_") or stem.endswith("_test")


def is_config_path(path: str) -> bool:
    if "/" in path:
        return False
    name = path.lower()
    return "config" in name or "conf" in name or name.endswith(CONFIG_SUFFIXES)


def _owning_function(region: Region, snapshot):
    if not region.function_name:
        return None
    named = snapshot.functions_named(region.function_name)
    for f in named:
        if f.location.file == region.location.file and f.location.overlaps(
            SourceLocation(f.location.file, region.location.line_start, region.location.line_end)
        ):
            return f
    same_file = [f for f in named if f.location.file == region.location.file]
    return (same_file or named or [None])[0]


def candidate_context(region: Region, snapshot) -> list[ContextItem]:
    """Unscored context candidates for a region, one item per artefact."""
    items: list[ContextItem] = []
    seen_functions: set[str] = set()
    seen_files: set[str] = set()
    own = _owning_function(region, snapshot)
    if own is not None:
        seen_functions.add(own.id)

    def add_function(kind, rec):
        if rec.id in seen_functions:
            return
        seen_functions.add(rec.id)
        items.append(ContextItem(kind, rec.location.file, rec.body, rec.location, rec.name))

    name = region.function_name
    if name:
        for rec in snapshot.callers_of(name):
            add_function("caller", rec)
    if own is not None:
        callee_names = snapshot.callees_of(own.id)
    else:
        known = {f.name for f in snapshot.functions}
        callee_names = sorted({c.name for c in clike.find_calls(region.code())} & known)
    for callee in callee_names:
        for rec in snapshot.functions_named(callee)[:1]:
            add_function("callee", rec)
    for rec in snapshot.functions_in(region.location.file):
        if own is None and rec.location.overlaps(region.location):
            continue
        add_function("sibling_code", rec)

    region_dir = posixpath.dirname(region.location.file)
    for entry in snapshot.files:
        path = entry.path
        if path == region.location.file or not snapshot.text(path).strip():
            continue
        if is_config_path(path):
            kind = "config"
        elif is_test_path(path):
            kind = "test"
        else:
            continue
        seen_files.add(path)
        items.append(ContextItem(kind, path, snapshot.text(path)))
    for record in snapshot.change_log:
        path = record.path
        if path == region.location.file or path in seen_files:
            continue
        if posixpath.dirname(path) != region_dir or not snapshot.text(path).strip():
            continue
        seen_files.add(path)
        items.append(ContextItem("similar_change", path, snapshot.text(path)))
    return items


def identifier_set(text: str) -> set[str]:
    return clike.identifiers(text) - clike.C_KEYWORDS


def similarity_terms(
    item: ContextItem, region: Region, snapshot=None, region_idents: set[str] | None = None
) -> tuple[float, float, float]:
    """(semantic, dependency, co-change) similarities, each in [0, 1]."""
    a = identifier_set(item.text)
    b = region_idents if region_idents is not None else identifier_set(region.code())
    sem = len(a & b) / len(a | b) if (a or b) else 0.0
    dep = {"caller": 1.0, "callee": 1.0, "sibling_code": 0.5}.get(item.kind, 0.0)
    chg = 0.0
    if snapshot is not None and snapshot.change_log:
        if snapshot.change_record(region.location.file) and snapshot.change_record(item.path):
            chg = 1.0
    return sem, dep, chg


def combine_relevance(terms: Sequence[float], coeffs: RelevanceCoefficients) -> float:
    sem, dep, chg = terms
    raw = coeffs.lambda1 * sem + coeffs.lambda2 * dep + coeffs.lambda3 * chg
    return min(1.0, max(0.0, raw))


def relevance(
    item: ContextItem,
    region: Region,
    coeffs: RelevanceCoefficients,
    snapshot=None,
    region_idents: set[str] | None = None,
) -> float:
    if not item.text:
        raise ValueError("relevance needs nonempty item text")
    return combine_relevance(similarity_terms(item, region, snapshot, region_idents), coeffs)


def score_items(
    items: Sequence[ContextItem],
    region: Region,
    coeffs: RelevanceCoefficients,
    snapshot=None,
    estimate: TokenEstimator = token_estimate,
) -> list[ContextItem]:
    idents = identifier_set(region.code())
    return [
        replace(item, rel=relevance(item, region, coeffs, snapshot, idents), token_cost=estimate(item.text))
        for item in items
    ]


def _truncate_lines(text: str, limit: int, estimate: TokenEstimator) -> str:
    kept: list[str] = []
    for line in text.split("\n"):
        candidate = "\n".join(kept + [line])
        if estimate(candidate) > limit:
            break
        kept.append(line)
    return "\n".join(kept)


def pack_context(
    items: Sequence[ContextItem],
    budget: int,
    region_id: str = "",
    estimate: TokenEstimator = token_estimate,
) -> ContextBundle:
    """Greedy by descending relevance: take an item iff it still fits.

    An item that alone exceeds the whole budget is cut at a line boundary to
    whatever budget remains and marked truncated.
    """
    if budget < 1:
        raise ValueError(f"context budget must be >= 1, got {budget}")
    packed: list[ContextItem] = []
    total = 0
    for item in sorted(items, key=ContextItem.sort_key):
        cost = item.token_cost
        if total + cost <= budget:
            packed.append(item)
            total += cost
        elif cost > budget:
            remaining = budget - total
            text = _truncate_lines(item.text, remaining, estimate)
            if text.strip():
                cut = replace(item, text=text, token_cost=estimate(text), truncated=True)
                packed.append(cut)
                total += cut.token_cost
    return ContextBundle(region_id, tuple(packed), total, budget)


def build_bundle(
    region: Region,
    snapshot,
    coeffs: RelevanceCoefficients,
    budget: int,
    estimate: TokenEstimator = token_estimate,
) -> ContextBundle:
    scored = score_items(candidate_context(region, snapshot), region, coeffs, snapshot, estimate)
    return pack_context(scored, budget, region.id, estimate)
