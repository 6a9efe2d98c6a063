"""Selective dynamic verification in a throwaway sandbox directory."""

from __future__ import annotations

import json
import logging
import os
import re
import resource
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any

from . import clike
from .agents.base import FindingKey
from .agents.rules import Unit, array_sizes
from .context import ContextBundle
from .core import Finding, Region
from .fusion import VERIFY_SEVERITIES, Thresholds

log = logging.getLogger(__name__)

ARTEFACT_KINDS = ("repro_input", "unit_test", "payload")
EXPECTED_SIGNALS = ("nonzero_exit", "crash_marker", "assertion_fail")
E_DYN = {"reproduced": 1.0, "not_reproduced": 0.0, "inconclusive": 0.5}
LOG_CAP = 4096
DEFAULT_TIMEOUT = 10.0
SETUP_FAILURE_EXIT = 97  # run.sh exits with this when the artefact does not build
FILE_SIZE_LIMIT = 64 * 1024 * 1024

PAYLOADS = {
    "overflow": "A" * 1024,
    "index": "A" * 1024,
    # the marker only appears if a shell evaluates the arithmetic expansion
    "inject": "x;echo VULNAUDIT_$((6*7));#",
}
_BUFFER_BASES = {"char", "void", "unsigned char", "signed char", "uint8_t", "int8_t"}
_INT_BASES = {
    "int", "long", "long long", "short", "unsigned", "unsigned int", "unsigned long", "unsigned short",
    "signed", "signed int", "size_t", "ssize_t", "int32_t", "uint32_t", "int64_t", "uint64_t",
    "int16_t", "uint16_t", "char", "unsigned char", "long int", "unsigned long long",
}


class PlanUnavailable(Exception):
    """No template matches and no planner backend is configured."""


@dataclass(frozen=True)
class VerificationPlan:
    finding_key: FindingKey
    artefact_kind: str
    command: tuple[str, ...]
    workdir: str = "."
    timeout: float = DEFAULT_TIMEOUT
    expected_signal: str = "crash_marker"
    files: tuple[tuple[str, str], ...] = ()
    markers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if not self.command:
            raise ValueError("command must be nonempty")
        if self.artefact_kind not in ARTEFACT_KINDS:
            raise ValueError(f"unknown artefact kind {self.artefact_kind!r}")
        if self.expected_signal not in EXPECTED_SIGNALS:
            raise ValueError(f"unknown expected signal {self.expected_signal!r}")


@dataclass(frozen=True)
class VerificationOutcome:
    status: str
    e_dyn: float
    log_excerpt: str = ""
    elapsed: float = 0.0
    note: str = ""

    def __post_init__(self) -> None:
        if self.status not in E_DYN:
            raise ValueError(f"unknown status {self.status!r}")
        if self.e_dyn != E_DYN[self.status]:
            raise ValueError(f"status {self.status} requires e_dyn {E_DYN[self.status]}")

    @classmethod
    def of(cls, status: str, log_excerpt: str = "", elapsed: float = 0.0, note: str = "") -> VerificationOutcome:
        return cls(status, E_DYN[status], log_excerpt, elapsed, note)


def should_verify(finding: Finding, interim: float, thresholds: Thresholds) -> bool:
    """High-impact findings whose score sits in the uncertain band."""
    return finding.severity in VERIFY_SEVERITIES and thresholds.tau_low <= interim < thresholds.tau_high


@lru_cache(maxsize=1)
def template_table() -> dict[str, dict[str, Any]]:
    return json.loads(resources.files("vulnaudit.data").joinpath("verify_templates.json").read_text(encoding="utf-8"))


def _harness_template(name: str) -> Template:
    return Template(resources.files("vulnaudit.data").joinpath("harness", name).read_text(encoding="utf-8"))


def _c_string(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _param_index_use(code: str, name: str) -> bool:
    return re.search(rf"\[\s*{re.escape(name)}\s*\]", clike.mask_code(code)) is not None


def harness_call(function_code: str, payload_kind: str) -> tuple[str, str]:
    """(setup statements, call expression) driving the function's parameters."""
    unit = Unit(function_code, 1)
    spans = clike.scan_functions(function_code)
    if not spans:
        raise PlanUnavailable("no function definition to drive")
    name = spans[0].name
    if name == "main":
        raise PlanUnavailable("entry points are not driven by the harness")
    sizes = array_sizes(unit)
    setup, args = [], []
    for i, (ptype, pname) in enumerate(unit.params()):
        tokens = re.findall(r"\w+|\*", ptype)
        stars = tokens.count("*")
        base = " ".join(t for t in tokens if t not in ("*", "const", "volatile", "restrict"))
        if stars == 1 and base in _BUFFER_BASES:
            setup.append(f"    char *arg{i} = harness_payload();")
            args.append(f"arg{i}")
        elif stars == 1 and base == "FILE":
            args.append("stdin")
        elif stars == 0 and base in _INT_BASES:
            if payload_kind == "index" and _param_index_use(function_code, pname) and sizes:
                value = max(sizes.values())
            else:
                value = len(PAYLOADS["overflow"])
            args.append(str(value))
        else:
            raise PlanUnavailable(f"cannot synthesise an argument of type {ptype!r}")
    return "\n".join(setup), f"(void){name}({', '.join(args)})"


def template_plan(
    finding: Finding,
    function_code: str,
    bundle: ContextBundle | None = None,
    timeout: float = DEFAULT_TIMEOUT,
    compiler: str = "cc",
) -> VerificationPlan:
    spec = template_table().get(finding.issue_type)
    if spec is None:
        raise PlanUnavailable(f"no template for {finding.issue_type}")
    setup, call = harness_call(function_code, spec["payload"])
    callees = []
    if bundle is not None:
        callees = [i.text for i in bundle.of_kind("callee") if not i.truncated]
    payload = PAYLOADS[spec["payload"]]
    source = _harness_template(spec["template"]).substitute(
        payload=_c_string(payload),
        callees="\n\n".join(callees),
        function=function_code,
        setup=setup,
        call=call,
    )
    script = (
        f"{compiler} -O0 -g -w -fsanitize=address -fno-omit-frame-pointer harness.c -o harness -lpthread"
        f" >build.log 2>&1 || exit {SETUP_FAILURE_EXIT}\n"
        "exec ./harness < input.txt\n"
    )
    return VerificationPlan(
        finding_key=FindingKey.of(finding),
        artefact_kind=spec["artefact_kind"],
        command=("sh", "run.sh"),
        timeout=timeout,
        expected_signal=spec["expected_signal"],
        files=(("harness.c", source), ("input.txt", payload + "\n"), ("run.sh", script)),
        markers=tuple(spec["markers"]),
    )


def llm_plan(finding: Finding, region: Region, planner, timeout: float) -> tuple[VerificationPlan, int]:
    reply, tokens = planner.propose(finding, region, timeout)
    files = reply.get("files") or {}
    command = reply.get("command") or []
    if not isinstance(files, dict) or not isinstance(command, list) or not command:
        raise PlanUnavailable("planner reply lacks files or command")
    kind = reply.get("artefact_kind") if reply.get("artefact_kind") in ARTEFACT_KINDS else "unit_test"
    expected = reply.get("expected_signal") if reply.get("expected_signal") in EXPECTED_SIGNALS else "nonzero_exit"
    plan = VerificationPlan(
        finding_key=FindingKey.of(finding),
        artefact_kind=kind,
        command=tuple(str(c) for c in command),
        timeout=timeout,
        expected_signal=expected,
        files=tuple(sorted((str(k), str(v)) for k, v in files.items())),
        markers=("AddressSanitizer", "Assertion", "assert"),
    )
    return plan, tokens


def build_plan(
    finding: Finding,
    region: Region,
    function_code: str | None = None,
    bundle: ContextBundle | None = None,
    planner=None,
    timeout: float = DEFAULT_TIMEOUT,
    compiler: str = "cc",
) -> tuple[VerificationPlan, int]:
    """A plan plus the tokens spent producing it.

    Templates are tried first; the LLM planner, when present, covers the rest.
    """
    code = function_code if function_code is not None else region.code()
    try:
        return template_plan(finding, code, bundle, timeout, compiler), 0
    except PlanUnavailable:
        if planner is None:
            raise
    return llm_plan(finding, region, planner, timeout)


# --------------------------------------------------------------------------- #
# Sandbox
# --------------------------------------------------------------------------- #


class ContainmentError(ValueError):
    """A plan refers to a path outside its sandbox."""


def _inside(root: Path, candidate: Path) -> bool:
    try:
        candidate.resolve().relative_to(root.resolve())
        return True
    except ValueError:
        return False


def check_containment(plan: VerificationPlan, root: Path) -> None:
    workdir = root / plan.workdir
    if not _inside(root, workdir):
        raise ContainmentError(f"workdir {plan.workdir!r} escapes the sandbox")
    for name, _ in plan.files:
        if os.path.isabs(name) or not _inside(root, root / name):
            raise ContainmentError(f"file {name!r} escapes the sandbox")
    for i, arg in enumerate(plan.command):
        looks_like_path = "/" in arg or arg.startswith(".")
        if not looks_like_path:
            continue
        if i == 0 and os.path.isabs(arg) and not arg.startswith(str(root)):
            raise ContainmentError(f"program {arg!r} lies outside the sandbox")
        if not _inside(root, workdir / arg):
            raise ContainmentError(f"argument {arg!r} escapes the sandbox")


def _limits(cpu_seconds: int):
    def apply() -> None:
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 1))
        resource.setrlimit(resource.RLIMIT_FSIZE, (FILE_SIZE_LIMIT, FILE_SIZE_LIMIT))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    return apply


def sandbox_env(root: Path) -> dict[str, str]:
    return {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "HOME": str(root),
        "TMPDIR": str(root),
        "LANG": "C",
        "ASAN_OPTIONS": "detect_leaks=0:abort_on_error=0",
    }


def classify(plan: VerificationPlan, returncode: int | None, output: str) -> str:
    if returncode is None or returncode == SETUP_FAILURE_EXIT:
        return "inconclusive"
    if plan.expected_signal == "nonzero_exit":
        return "reproduced" if returncode != 0 else "not_reproduced"
    if plan.expected_signal == "assertion_fail":
        hit = returncode == -signal.SIGABRT or returncode == 128 + signal.SIGABRT or "Assertion" in output
        return "reproduced" if hit else "not_reproduced"
    return "reproduced" if any(m in output for m in plan.markers) else "not_reproduced"


def execute(plan: VerificationPlan, parent_dir: str | None = None) -> VerificationOutcome:
    """Run a plan in a fresh temp directory that is removed afterwards.

    Raises OSError when the sandbox cannot be created. Containment violations
    and timeouts are reported as inconclusive outcomes.
    """
    root = Path(tempfile.mkdtemp(prefix="vulnaudit-", dir=parent_dir))
    start = time.monotonic()
    try:
        try:
            check_containment(plan, root)
        except ContainmentError as exc:
            return VerificationOutcome.of("inconclusive", note=str(exc))
        for name, content in plan.files:
            path = root / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content, encoding="utf-8")
        workdir = root / plan.workdir
        workdir.mkdir(parents=True, exist_ok=True)
        try:
            proc = subprocess.Popen(
                list(plan.command),
                cwd=workdir,
                env=sandbox_env(root),
                stdin=subprocess.DEVNULL,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                start_new_session=True,
                preexec_fn=_limits(max(1, int(plan.timeout) + 1)),
            )
        except OSError as exc:
            return VerificationOutcome.of("inconclusive", note=f"could not start: {exc}")
        try:
            raw, _ = proc.communicate(timeout=plan.timeout)
            rc: int | None = proc.returncode
            note = ""
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            raw, _ = proc.communicate()
            rc, note = None, f"timed out after {plan.timeout:g}s"
        output = raw[:LOG_CAP].decode("utf-8", errors="replace")
        full = raw.decode("utf-8", errors="replace")
        status = classify(plan, rc, full)
        if rc == SETUP_FAILURE_EXIT:
            build_log = root / "build.log"
            if build_log.is_file():
                output = build_log.read_bytes()[:LOG_CAP].decode("utf-8", errors="replace")
            note = "artefact failed to build"
        return VerificationOutcome.of(status, output, time.monotonic() - start, note)
    finally:
        shutil.rmtree(root, ignore_errors=True)
