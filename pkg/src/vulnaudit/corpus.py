"""Seeded synthetic corpus of C functions and commits with planted defects.

Every sample gets its own files inside a per-project repository so that the
snapshot resolves each function to one location. Vulnerable templates plant a
pattern the rule agents recognise; benign templates include lookalikes that
only a sceptical reviewer dismisses (dead branches, literal arguments,
sanitised inputs).
"""

from __future__ import annotations

import difflib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

HEADER = "#include <stdio.h>\n#include <stdlib.h>\n#include <string.h>\n#include <unistd.h>\n#include <pthread.h>\n"
NOUNS = ("user", "path", "packet", "token", "record", "header", "session", "field", "entry", "frame", "label", "query")
VERBS = ("load", "parse", "copy", "store", "format", "handle", "apply", "emit", "fetch", "merge")
COMMIT_FRACTION = 0.25
HISTORY_FILE = ".vulnaudit-history.jsonl"


@dataclass
class Planted:
    template: str
    label: str  # "vulnerable" or "benign"
    name: str
    lines: list[str]
    truth: list[int] = field(default_factory=list)  # 0-based offsets of the defect lines
    added: list[int] = field(default_factory=list)  # offsets a commit introduces
    helpers: list[str] = field(default_factory=list)  # extra functions in the same file
    caller: str | None = None  # function placed in a separate file
    bait: bool = False


def _fn(text: str) -> list[str]:
    return text.strip("\n").split("\n")


def _offset(lines: list[str], needle: str) -> int:
    for i, line in enumerate(lines):
        if needle in line:
            return i
    raise ValueError(f"template line {needle!r} not found")


def _tainted_caller(fname: str, callee: str, args: str = "request") -> str:
    return f"""int {fname}(int fd)
{{
    char request[512];
    ssize_t n = read(fd, request, sizeof(request) - 1);
    if (n <= 0)
        return -1;
    request[n] = '\\0';
    {callee}({args});
    return 0;
}}"""


# --------------------------------------------------------------------------- #
# Vulnerable templates
# --------------------------------------------------------------------------- #


def t_gets(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((16, 32, 64))
    lines = _fn(f"""int {name}(void)
{{
    char buffer[{size}];
    char line[{size * 2}];
    size_t len;
    printf("{noun}: ");
    gets(buffer);
    strcpy(line, buffer);
    len = strlen(line);
    if (len == 0)
        return -1;
    printf("read %zu bytes of input\\n", len);
    return (int)len;
}}""")
    g = _offset(lines, "gets(")
    return Planted("gets", "vulnerable", name, lines, [g], [g, g + 1])


def t_strcpy_param(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((16, 24, 32))
    lines = _fn(f"""int {name}(const char *input, size_t size)
{{
    char buffer[{size}];
    size_t len = strlen(input);
    if (size == 0)
        return -1;
    strcpy(buffer, input);
    printf("{noun} %s (%zu of %zu)\\n", buffer, len, size);
    return (int)len;
}}""")
    s = _offset(lines, "strcpy(")
    caller = _tainted_caller(f"serve_{name}", name, "request, (size_t)n")
    return Planted("strcpy_param", "vulnerable", name, lines, [s], [s], caller=caller)


def t_sprintf(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((24, 32, 48))
    lines = _fn(f"""int {name}(const char *user, const char *path, int id)
{{
    char buffer[{size}];
    size_t len;
    sprintf(buffer, "%s:%s:%d", user, path, id);
    len = strlen(buffer);
    printf("{noun} %d -> %s (%zu)\\n", id, buffer, len);
    return (int)len;
}}""")
    s = _offset(lines, "sprintf(")
    caller = _tainted_caller(f"serve_{name}", name, 'request, "/var/spool", 7')
    return Planted("sprintf", "vulnerable", name, lines, [s], [s], caller=caller)


def t_system(name: str, noun: str, rng: random.Random) -> Planted:
    tool = rng.choice(("ls", "cat", "stat", "file"))
    if rng.random() < 0.5:
        build = f"""    strcpy(command, "{tool} ");
    strcat(command, path);"""
    else:
        build = f"""    snprintf(command, sizeof(command), "{tool} %s", path);"""
    lines = _fn(f"""int {name}(const char *path)
{{
    char command[256];
    size_t len = strlen(path);
    if (len == 0)
        return -1;
{build}
    return system(command);
}}""")
    s = _offset(lines, "system(")
    truth = [i for i, l in enumerate(lines) if "strcat(" in l] + [s]
    added = [i for i, l in enumerate(lines) if "command," in l or "system(" in l]
    return Planted("system", "vulnerable", name, lines, truth, added, caller=_tainted_caller(f"serve_{name}", name))


def t_index(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((8, 16))
    lines = _fn(f"""int {name}(int index, int value, size_t len)
{{
    int slots[{size}];
    size_t offset;
    memset(slots, 0, sizeof(slots));
    for (offset = 0; offset < len && offset < {size}; offset++)
        slots[offset] = value;
    slots[index] = value;
    printf("{noun} index %d offset %zu\\n", index, offset);
    return slots[0] + slots[{size - 1}];
}}""")
    s = _offset(lines, "slots[index] =")
    caller = f"""int serve_{name}(int fd)
{{
    int index = 0;
    read(fd, &index, sizeof(index));
    return {name}(index, 1, 4);
}}"""
    return Planted("index", "vulnerable", name, lines, [s], [s], caller=caller)


def t_off_by_one(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((8, 16, 32))
    lines = _fn(f"""int {name}(const char *input, size_t len)
{{
    char buffer[{size}];
    size_t index;
    if (len < {size})
        return -1;
    for (index = 0; index <= {size}; index++)
        buffer[index] = input[index];
    printf("{noun} %zu bytes\\n", len);
    return buffer[0];
}}""")
    s = _offset(lines, "buffer[index] =")
    caller = _tainted_caller(f"serve_{name}", name, "request, (size_t)n")
    return Planted("off_by_one", "vulnerable", name, lines, [s], [s - 1, s], caller=caller)


def t_uaf(name: str, noun: str, rng: random.Random) -> Planted:
    lines = _fn(f"""int {name}(const char *input)
{{
    size_t len = strlen(input);
    char *buffer = malloc(len + 1);
    if (buffer == NULL)
        return -1;
    snprintf(buffer, len + 1, "%s", input);
    printf("{noun} %s (%zu)\\n", buffer, len);
    free(buffer);
    return buffer[0] == '/';
}}""")
    s = _offset(lines, "return buffer[0]")
    return Planted("uaf", "vulnerable", name, lines, [s], [s - 1, s], caller=_tainted_caller(f"serve_{name}", name))


def t_lock(name: str, noun: str, rng: random.Random) -> Planted:
    decl = f"struct {name}_queue {{ pthread_mutex_t lock; size_t size; size_t used; char buffer[256]; }};"
    lines = _fn(f"""int {name}(struct {name}_queue *q, const char *payload, size_t len)
{{
    pthread_mutex_lock(&q->lock);
    if (len > q->size - q->used)
        return -1;
    memcpy(q->buffer + q->used, payload, len);
    q->used += len;
    pthread_mutex_unlock(&q->lock);
    return 0;
}}""")
    s = _offset(lines, "return -1;")
    return Planted("lock", "vulnerable", name, lines, [s], [s - 1, s], helpers=[decl])


def t_scanf(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((16, 32))
    lines = _fn(f"""int {name}(FILE *input)
{{
    char buffer[{size}];
    size_t len;
    if (fscanf(input, "%s", buffer) != 1)
        return -1;
    len = strlen(buffer);
    printf("{noun} %s (%zu)\\n", buffer, len);
    return (int)len;
}}""")
    s = _offset(lines, "fscanf(")
    caller = f"""int main_{name}(const char *path)
{{
    FILE *input = fopen(path, "r");
    int len;
    if (input == NULL)
        return -1;
    len = {name}(input);
    fclose(input);
    return len;
}}"""
    return Planted("scanf", "vulnerable", name, lines, [s], [s], caller=caller)


# --------------------------------------------------------------------------- #
# Benign templates
# --------------------------------------------------------------------------- #


def t_clean(name: str, noun: str, rng: random.Random) -> Planted:
    a, b = rng.randint(2, 9), rng.randint(10, 99)
    lines = _fn(f"""int {name}(int count, int scale)
{{
    int total = 0;
    int step;
    for (step = 0; step < count; step++)
        total += step * {a};
    if (total > {b})
        total = total / scale;
    return total;
}}""")
    return Planted("clean", "benign", name, lines, added=[_offset(lines, "total += ")])


def t_bounded(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((16, 32))
    lines = _fn(f"""void {name}(const char *{noun})
{{
    char local[{size}];
    strncpy(local, {noun}, sizeof(local) - 1);
    local[sizeof(local) - 1] = '\\0';
    puts(local);
}}""")
    return Planted("bounded", "benign", name, lines, added=[_offset(lines, "strncpy(")], caller=_tainted_caller(f"serve_{name}", name))


def t_dead_branch(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((16, 32))
    cond = rng.choice(("0", "false", "0"))
    lines = _fn(f"""int {name}(const char *input, size_t size)
{{
    char buffer[{size}];
    size_t len = strlen(input);
    if ({cond}) {{
        strcpy(buffer, input);
        puts(buffer);
    }}
    snprintf(buffer, sizeof(buffer), "%s", input);
    printf("{noun} %s (%zu of %zu)\\n", buffer, len, size);
    return (int)len;
}}""")
    s = _offset(lines, "strcpy(")
    return Planted(
        "dead_branch", "benign", name, lines, added=[s - 1, s, s + 1, s + 2],
        caller=_tainted_caller(f"serve_{name}", name, "request, (size_t)n"), bait=True,
    )


def t_literal(name: str, noun: str, rng: random.Random) -> Planted:
    lines = _fn(f"""int {name}(void)
{{
    char buffer[32];
    size_t len;
    strcpy(buffer, "{noun}-default");
    strcat(buffer, ".cfg");
    len = strlen(buffer);
    printf("%s (%zu)\\n", buffer, len);
    return (int)len;
}}""")
    return Planted("literal", "benign", name, lines, added=[_offset(lines, "strcpy(")])


def t_sanitized(name: str, noun: str, rng: random.Random) -> Planted:
    size = rng.choice((32, 64))
    helper = f"""static int check_len_{name}(const char *s, size_t cap)
{{
    size_t n = strlen(s);
    if (n >= cap)
        return 0;
    return s[n] == '\\0';
}}"""
    lines = _fn(f"""int {name}(const char *input, size_t size)
{{
    char buffer[{size}];
    size_t len = strlen(input);
    if (!check_len_{name}(input, sizeof(buffer)))
        return -1;
    strcpy(buffer, input);
    printf("{noun} %s (%zu of %zu)\\n", buffer, len, size);
    return (int)len;
}}""")
    return Planted(
        "sanitized", "benign", name, lines, added=[_offset(lines, "strcpy(")],
        helpers=[helper], caller=_tainted_caller(f"serve_{name}", name, "request, (size_t)n"),
    )


def t_literal_caller(name: str, noun: str, rng: random.Random) -> Planted:
    lines = _fn(f"""int {name}(const char *input, size_t size)
{{
    char buffer[64];
    size_t len = strlen(input);
    if (size == 0)
        return -1;
    strcpy(buffer, input);
    printf("{noun} %s (%zu of %zu)\\n", buffer, len, size);
    return (int)len;
}}""")
    caller = f"""void init_{name}(void)
{{
    {name}("{noun}.conf", 16);
    {name}("{noun}.bak", 16);
}}"""
    return Planted("literal_caller", "benign", name, lines, added=[_offset(lines, "strcpy(")], caller=caller)


VULNERABLE = (
    (t_gets, 3), (t_strcpy_param, 3), (t_sprintf, 2), (t_system, 2), (t_index, 2),
    (t_off_by_one, 2), (t_uaf, 2), (t_lock, 2), (t_scanf, 1),
)
BENIGN = (
    (t_clean, 7), (t_bounded, 3), (t_dead_branch, 4), (t_literal, 2), (t_sanitized, 2), (t_literal_caller, 2),
)


def _pick(rng: random.Random, table):
    funcs, weights = zip(*table)
    return rng.choices(funcs, weights=weights, k=1)[0]


def _filler(name: str, rng: random.Random) -> tuple[list[str], int]:
    a, b, c = rng.randint(2, 9), rng.randint(20, 90), rng.randint(1, 9)
    lines = _fn(f"""static int {name}(int a, int b)
{{
    int total = a;
    total += b * {a};
    if (total > {b})
        total -= {c};
    return total;
}}""")
    return lines, 3


# --------------------------------------------------------------------------- #
# Assembly
# --------------------------------------------------------------------------- #


def _file_text(blocks: list[list[str]]) -> tuple[str, list[int]]:
    """Join function blocks under the header; returns text and each block's first line."""
    out = HEADER.rstrip("\n").split("\n") + [""]
    starts = []
    for block in blocks:
        starts.append(len(out) + 1)
        out.extend(block)
        out.append("")
    return "\n".join(out), starts


def _test_case(name: str, rng: random.Random) -> list[str]:
    """A table-driven unit test that calls ``name`` with literal inputs."""
    rows = [f'        {{ "{_word(rng)}", {rng.randint(0, 64)} }},' for _ in range(rng.randint(8, 24))]
    return _fn(f"""static int test_{name}(void)
{{
    static const struct {{ const char *input; int expect; }} cases[] = {{
{chr(10).join(rows)}
    }};
    int failures = 0;
    for (size_t i = 0; i < sizeof(cases) / sizeof(cases[0]); i++) {{
        char scratch[64];
        snprintf(scratch, sizeof(scratch), "%s", cases[i].input);
        if (cases[i].expect < 0)
            failures++;
    }}
    return failures;
}}""")


def _word(rng: random.Random) -> str:
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(rng.randint(3, 12)))


def _config_text(rng: random.Random) -> str:
    lines = ["# service limits"]
    for section in range(rng.randint(6, 12)):
        lines.append(f"\n[{_word(rng)}]")
        for _ in range(rng.randint(10, 24)):
            lines.append(f"{_word(rng)}_{rng.choice(('size', 'len', 'max', 'timeout', 'depth'))} = {rng.randint(1, 65536)}")
    return "\n".join(lines) + "\n"


def _write(root: Path, rel: str, text: str) -> None:
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _unified(rel: str, old: str, new: str) -> str:
    diff = difflib.unified_diff(
        old.split("\n"), new.split("\n"), fromfile=f"a/{rel}", tofile=f"b/{rel}", n=3, lineterm=""
    )
    return "\n".join(diff) + "\n"


def generate_synthetic_corpus(seed: int, n: int, vuln_fraction: float, out_dir: str | Path) -> dict:
    """Write corpus.jsonl, truth.jsonl and repos/<project>/ under ``out_dir``.

    Returns a summary with counts and paths.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < vuln_fraction < 1:
        raise ValueError("vuln_fraction must lie strictly between 0 and 1")
    rng = random.Random(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_vuln = min(n - 1, max(1, round(n * vuln_fraction)))
    labels = [True] * n_vuln + [False] * (n - n_vuln)
    rng.shuffle(labels)
    n_projects = max(1, min(8, n // 25))
    history: dict[str, list[dict]] = {}
    dir_left: dict[str, int] = {}
    dir_count: dict[str, int] = {}
    samples, truths = [], []
    tests: dict[tuple[str, str], list[list[str]]] = {}

    for i, vulnerable in enumerate(labels):
        project = f"proj{i % n_projects:02d}"
        repo = out / "repos" / project
        noun = rng.choice(NOUNS)
        name = f"{rng.choice(VERBS)}_{noun}_{i:04d}"
        planted = _pick(rng, VULNERABLE if vulnerable else BENIGN)(name, noun, rng)
        task = "commit" if rng.random() < COMMIT_FRACTION else "function"
        if dir_left.get(project, 0) <= 0:
            # consecutive samples of a project share a module directory
            dir_count[project] = dir_count.get(project, 0) + 1
            dir_left[project] = rng.randint(1, 5)
        dir_left[project] -= 1
        module = f"src/mod{dir_count[project]:02d}"
        rel = f"{module}/{name}.c"
        blocks = [_fn(h) for h in planted.helpers]
        fillers = []
        if task == "commit":
            for j in range(rng.randint(2, 11)):
                block, edit = _filler(f"step_{j}_{i:04d}", rng)
                fillers.append((len(blocks), edit))
                blocks.append(block)
        target_index = len(blocks)
        if task == "commit" and fillers:
            # place the target somewhere among the fillers
            target_index = rng.randint(0, len(blocks))
            fillers = [(b + (b >= target_index), e) for b, e in fillers]
        blocks.insert(target_index, planted.lines)
        text, starts = _file_text(blocks)
        _write(repo, rel, text + "\n")
        start = starts[target_index]
        truth_lines = [[rel, start + o] for o in planted.truth]

        if task == "commit":
            old_blocks = [list(b) for b in blocks]
            old_blocks[target_index] = [l for k, l in enumerate(planted.lines) if k not in set(planted.added)]
            new_blocks = [list(b) for b in blocks]
            for b, edit in fillers:
                # the commit adds one harmless statement to each filler
                old_blocks[b] = list(blocks[b])
                new_blocks[b] = blocks[b][:edit] + [f"    total ^= {rng.randint(1, 255)};"] + blocks[b][edit:]
            new_blocks[target_index] = planted.lines
            old_text, _ = _file_text(old_blocks)
            new_text, new_starts = _file_text(new_blocks)
            _write(repo, rel, new_text + "\n")
            start = new_starts[target_index]
            truth_lines = [[rel, start + o] for o in planted.truth]
            payload = _unified(rel, old_text + "\n", new_text + "\n")
        else:
            payload = "\n".join(planted.lines) + "\n"

        if planted.caller:
            _write(repo, f"{module}/{name}_main.c", _file_text([_fn(planted.caller)])[0] + "\n")
        tests.setdefault((project, module), []).append(_test_case(name, rng))
        if rng.random() < 0.5:
            commits = rng.randint(1, 60)
            history.setdefault(project, []).append({"path": rel, "commits": commits, "last_touch_rank": i})
            if planted.caller and rng.random() < 0.7:
                history[project].append({"path": f"{module}/{name}_main.c", "commits": rng.randint(1, 60), "last_touch_rank": i})

        label = "vulnerable" if vulnerable else "benign"
        split = rng.choices(("train", "valid", "test"), weights=(8, 1, 1), k=1)[0]
        samples.append(
            {
                "id": f"s{i:04d}",
                "task": task,
                "code_or_diff": payload,
                "label": label,
                "project": project,
                "vulnerable_lines": truth_lines if vulnerable else None,
                "split": split,
            }
        )
        truths.append(
            {
                "id": f"s{i:04d}",
                "label": label,
                "template": planted.template,
                "bait": planted.bait,
                "vulnerable_lines": truth_lines if vulnerable else [],
            }
        )

    for project, records in history.items():
        lines = [json.dumps(r, sort_keys=True) for r in records]
        _write(out / "repos" / project, HISTORY_FILE, "\n".join(lines) + "\n")
    for (project, module), blocks in sorted(tests.items()):
        _write(out / "repos" / project, f"tests/test_{module.rsplit('/', 1)[-1]}.c", _file_text(blocks)[0] + "\n")
    for project_index in range(n_projects):
        project = f"proj{project_index:02d}"
        _write(out / "repos" / project, "config/limits.conf", _config_text(random.Random(f"{seed}:{project}")))

    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s, sort_keys=True) + "\n")
    with open(out / "truth.jsonl", "w", encoding="utf-8") as fh:
        for t in truths:
            fh.write(json.dumps(t, sort_keys=True) + "\n")
    return {
        "samples": n,
        "vulnerable": n_vuln,
        "projects": n_projects,
        "corpus": str(out / "corpus.jsonl"),
        "truth": str(out / "truth.jsonl"),
        "repos": str(out / "repos"),
    }
