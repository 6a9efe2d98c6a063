"""Lexical helpers for C-family source text.

Everything here is heuristic: comments and literals are masked so that brace
and parenthesis matching stay aligned with the original offsets, which lets
callers map any match back to a 1-based line number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
CALL_RE = re.compile(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*\(")

C_KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern float for goto
    if inline int long register restrict return short signed sizeof static struct switch
    typedef union unsigned void volatile while bool true false NULL nullptr class namespace
    template typename public private protected virtual operator new delete this throw try
    catch using alignof decltype static_assert _Alignof _Static_assert defined
    """.split()
)
CONTROL_WORDS = frozenset({"if", "for", "while", "switch", "return", "sizeof", "catch", "do", "else"})


def mask_code(text: str, *, keep_strings: bool = False) -> str:
    """Blank out comments (and string/char literal bodies) with spaces.

    Newlines are preserved so offsets and line numbers stay valid. Preprocessor
    directive lines are blanked too, since they are not statements.
    """
    out = list(text)
    i, n = 0, len(text)
    at_line_start = True
    while i < n:
        c = text[i]
        if c == "\n":
            at_line_start = True
            i += 1
            continue
        if at_line_start and c == "#":
            j = i
            while j < n and text[j] != "\n":
                # continuation lines belong to the directive
                if text[j] == "\\" and j + 1 < n and text[j + 1] == "\n":
                    j += 2
                    continue
                j += 1
            for k in range(i, j):
                if out[k] != "\n":
                    out[k] = " "
            i = j
            continue
        if not c.isspace():
            at_line_start = False
        if text.startswith("//", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            for k in range(i, j):
                out[k] = " "
            i = j
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            j = n if j < 0 else j + 2
            for k in range(i, j):
                if out[k] != "\n":
                    out[k] = " "
            i = j
        elif c in "\"'":
            j = i + 1
            while j < n and text[j] != c and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            end = min(j, n - 1) if j < n else n - 1
            if not keep_strings:
                for k in range(i + 1, min(j, n)):
                    if out[k] != "\n":
                        out[k] = "_"
            i = end + 1
        else:
            i += 1
    return "".join(out)


def line_of(text: str, offset: int) -> int:
    """1-based line number of a character offset."""
    return text.count("\n", 0, offset) + 1


def line_starts(text: str) -> list[int]:
    starts = [0]
    for m in re.finditer("\n", text):
        starts.append(m.end())
    return starts


def match_bracket(masked: str, open_idx: int) -> int:
    """Index of the bracket closing ``masked[open_idx]``, or -1."""
    pairs = {"(": ")", "{": "}", "[": "]"}
    opener = masked[open_idx]
    closer = pairs[opener]
    depth = 0
    for i in range(open_idx, len(masked)):
        ch = masked[i]
        if ch == opener:
            depth += 1
        elif ch == closer:
            depth -= 1
            if depth == 0:
                return i
    return -1


def split_args(argtext: str) -> list[str]:
    """Split a call's argument text on top-level commas."""
    masked = mask_code(argtext)
    args, depth, start = [], 0, 0
    for i, ch in enumerate(masked):
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "," and depth == 0:
            args.append(argtext[start:i].strip())
            start = i + 1
    tail = argtext[start:].strip()
    if tail or args:
        args.append(tail)
    return args


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[str, ...]
    line: int
    start: int
    end: int


def find_calls(code: str) -> list[Call]:
    """All ``name(...)`` call sites, excluding control keywords."""
    masked = mask_code(code)
    calls = []
    for m in CALL_RE.finditer(masked):
        name = m.group(1)
        if name in C_KEYWORDS:
            continue
        open_idx = m.end() - 1
        close = match_bracket(masked, open_idx)
        if close < 0:
            continue
        args = tuple(split_args(code[open_idx + 1 : close]))
        calls.append(Call(name, args, line_of(code, m.start()), m.start(), close + 1))
    return calls


def identifiers(text: str) -> set[str]:
    return set(IDENT_RE.findall(mask_code(text)))


def identifier_tokens(text: str) -> list[str]:
    return IDENT_RE.findall(mask_code(text))


_NUMBER_RE = re.compile(r"^[-+]?(0[xX][0-9A-Fa-f]+|\d+(\.\d*)?([eE][-+]?\d+)?)[uUlLfF]*$")
_STRING_RE = re.compile(r'^(L|u8|u|U)?("(?:[^"\\]|\\.)*"\s*)+$')
_CHAR_RE = re.compile(r"^'(?:[^'\\]|\\.)+'$")


def is_constant_literal(expr: str) -> bool:
    """True for string, character and numeric literals (and sizeof of a type/name)."""
    e = expr.strip()
    while e.startswith("(") and e.endswith(")") and match_bracket(e, 0) == len(e) - 1:
        e = e[1:-1].strip()
    return bool(
        _STRING_RE.match(e)
        or _CHAR_RE.match(e)
        or _NUMBER_RE.match(e)
        or re.match(r"^sizeof\s*\(?\s*[\w\s\*]+\)?$", e)
    )


def base_identifier(expr: str) -> str | None:
    """Leading variable of an lvalue-ish expression: ``&buf[2]`` -> ``buf``."""
    m = re.match(r"^[\s&*(]*([A-Za-z_]\w*)", expr)
    return m.group(1) if m else None


_LABEL_RE = re.compile(r"^(case\b|default\s*:|[A-Za-z_]\w*\s*:(?!:))")

DEFAULT_FALSE_CONDITIONS = ("0", "false", "FALSE", "NULL", "0L", "0U", "nullptr")
DEFAULT_TERMINATORS = ("return", "exit", "abort", "_exit")


def dead_lines(
    code: str,
    false_conditions=DEFAULT_FALSE_CONDITIONS,
    terminators=DEFAULT_TERMINATORS,
) -> set[int]:
    """Lines (1-based, relative to ``code``) that no execution can reach.

    Covers constant-false ``if`` bodies, ``#if 0`` blocks and statements that
    follow an unconditional return/exit in the same block.
    """
    dead: set[int] = set()
    lines = code.split("\n")

    # '#if 0' ... '#else' / '#endif'
    depth = 0
    for no, raw in enumerate(lines, 1):
        s = raw.strip()
        if depth:
            if re.match(r"#\s*if", s):
                depth += 1
            elif re.match(r"#\s*endif", s):
                depth -= 1
            elif depth == 1 and re.match(r"#\s*(else|elif)", s):
                depth = 0
                continue
            if depth:
                dead.add(no)
        elif re.match(r"#\s*if\s+0\b", s):
            depth = 1
            dead.add(no)

    masked = mask_code(code)
    conds = "|".join(re.escape(c) for c in false_conditions)
    for m in re.finditer(rf"\bif\s*\(\s*(?:{conds})\s*\)", masked):
        j = m.end()
        while j < len(masked) and masked[j].isspace():
            j += 1
        if j >= len(masked):
            continue
        if masked[j] == "{":
            close = match_bracket(masked, j)
            end = close if close >= 0 else len(masked) - 1
        else:
            semi = masked.find(";", j)
            end = semi if semi >= 0 else len(masked) - 1
        dead.update(range(line_of(code, j), line_of(code, end) + 1))

    mlines = masked.split("\n")
    term = "|".join(re.escape(t) for t in terminators)
    for m in re.finditer(rf"\b(?:{term})\b", masked):
        # only unconditional statements: nothing but whitespace since the last boundary
        k = m.start() - 1
        while k >= 0 and masked[k] not in ";{}":
            if not masked[k].isspace():
                break
            k -= 1
        if k >= 0 and masked[k] not in ";{}":
            continue
        semi = masked.find(";", m.end())
        if semi < 0:
            continue
        depth = 0
        i = semi + 1
        while i < len(masked):
            ch = masked[i]
            if ch == "{":
                depth += 1
            elif ch == "}":
                if depth == 0:
                    break
                depth -= 1
            elif not ch.isspace():
                ln = line_of(code, i)
                if _LABEL_RE.match(mlines[ln - 1].strip()):
                    break
                dead.add(ln)
            i += 1
    return dead


_HEADER_RE = re.compile(
    r"(?P<name>~?[A-Za-z_][\w]*(?:::~?[A-Za-z_]\w*)*)\s*"
    r"\((?P<params>[^()]*(?:\([^()]*\)[^()]*)*)\)\s*"
    r"(?:(?:const|noexcept|override|final|volatile)\s*)*"
    r"(?:->\s*[\w:<>,\s\*&]+)?\s*(?::[^{};]*)?$",
    re.S,
)


@dataclass(frozen=True)
class FunctionSpan:
    name: str
    start: int  # offset of the first header character
    body_open: int  # offset of the opening brace
    end: int  # offset one past the closing brace
    line_start: int
    line_end: int


def scan_functions(text: str) -> list[FunctionSpan]:
    """Find function definitions by header shape plus brace matching.

    Namespace, class and ``extern "C"`` blocks are transparent; blocks nested in
    a function body are never reported as functions.
    """
    masked = mask_code(text)
    spans: list[FunctionSpan] = []
    stack: list[tuple[str, int, int, str]] = []  # (kind, open_idx, header_start, name)
    boundary = 0
    for i, ch in enumerate(masked):
        if ch == "{":
            in_func = any(kind == "func" for kind, *_ in stack)
            header = masked[boundary:i]
            m = None if in_func else _HEADER_RE.search(header)
            kind, name, hstart = "block", "", i
            if m and "=" not in header[: m.start()]:
                full = m.group("name")
                short = full.split("::")[-1].lstrip("~")
                if short not in CONTROL_WORDS and short not in C_KEYWORDS:
                    kind, name = "func", full.split("::")[-1]
                    lead = len(header) - len(header.lstrip())
                    hstart = boundary + lead
            stack.append((kind, i, hstart, name))
            boundary = i + 1
        elif ch == "}":
            if stack:
                kind, open_idx, hstart, name = stack.pop()
                if kind == "func":
                    spans.append(
                        FunctionSpan(
                            name=name,
                            start=hstart,
                            body_open=open_idx,
                            end=i + 1,
                            line_start=line_of(text, hstart),
                            line_end=line_of(text, i),
                        )
                    )
            boundary = i + 1
        elif ch == ";":
            boundary = i + 1
    spans.sort(key=lambda s: s.start)
    return spans


def function_name_of(code: str) -> str | None:
    spans = scan_functions(code)
    return spans[0].name if spans else None
