from __future__ import annotations

import shutil

import pytest

from vulnaudit.agents.base import FindingKey
from vulnaudit.core import Finding, Region, SourceLocation
from vulnaudit.fusion import Thresholds
from vulnaudit.verification import (
    E_DYN,
    LOG_CAP,
    SETUP_FAILURE_EXIT,
    ContainmentError,
    PlanUnavailable,
    VerificationOutcome,
    VerificationPlan,
    build_plan,
    check_containment,
    classify,
    execute,
    harness_call,
    should_verify,
    template_plan,
)

GETS = """int read_name(char *dst)
{
    char buf[16];
    gets(buf);
    return 0;
}"""

SAFE = """int copy_safe(char *dst)
{
    char buf[16];
    snprintf(buf, sizeof(buf), "%s", dst);
    return 0;
}"""

needs_cc = pytest.mark.skipif(shutil.which("cc") is None, reason="no C compiler")


def _finding(issue="security/unbounded-input", line=4, severity="high"):
    return Finding(issue, SourceLocation("a.c", line, line), "gets", 0.9, severity)


def _plan(command, signal="nonzero_exit", files=(), timeout=5.0, workdir="."):
    return VerificationPlan(FindingKey.of(_finding()), "unit_test", tuple(command), workdir, timeout, signal, files)


def test_should_verify_band_and_severity():
    thr = Thresholds()
    assert should_verify(_finding(), 0.5, thr)
    assert not should_verify(_finding(), 0.9, thr)
    assert not should_verify(_finding(), 0.3, thr)
    assert not should_verify(_finding(severity="medium"), 0.5, thr)


def test_outcome_channel_values():
    assert E_DYN == {"reproduced": 1.0, "not_reproduced": 0.0, "inconclusive": 0.5}
    with pytest.raises(ValueError):
        VerificationOutcome("reproduced", 0.5)


def test_plan_validation():
    with pytest.raises(ValueError):
        _plan([])
    with pytest.raises(ValueError):
        _plan(["true"], timeout=0)
    with pytest.raises(ValueError):
        _plan(["true"], signal="vibes")


def test_classify():
    plan = _plan(["x"])
    assert classify(plan, None, "") == "inconclusive"
    assert classify(plan, SETUP_FAILURE_EXIT, "") == "inconclusive"
    assert classify(plan, 1, "") == "reproduced"
    assert classify(plan, 0, "") == "not_reproduced"
    marker = VerificationPlan(FindingKey.of(_finding()), "repro_input", ("x",), markers=("BOOM",))
    assert classify(marker, 1, "...BOOM...") == "reproduced"
    assert classify(marker, 1, "quiet") == "not_reproduced"
    assertion = _plan(["x"], signal="assertion_fail")
    assert classify(assertion, -6, "") == "reproduced"
    assert classify(assertion, 0, "Assertion `x' failed") == "reproduced"


def test_exit_status_in_sandbox():
    assert execute(_plan(["sh", "-c", "exit 3"])).status == "reproduced"
    assert execute(_plan(["sh", "-c", "exit 0"])).status == "not_reproduced"


def test_timeout_is_inconclusive():
    out = execute(_plan(["sh", "-c", "sleep 5"], timeout=0.3))
    assert out.status == "inconclusive" and "timed out" in out.note
    assert out.elapsed < 4


def test_log_is_capped():
    out = execute(_plan(["sh", "-c", "head -c 20000 /dev/zero | tr '\\0' x; exit 1"]))
    assert len(out.log_excerpt) == LOG_CAP


def test_files_are_written_in_sandbox_and_removed(tmp_path):
    plan = _plan(["sh", "run.sh"], files=(("run.sh", "test -f data/in.txt && exit 7"), ("data/in.txt", "x")))
    assert execute(plan, parent_dir=str(tmp_path)).status == "reproduced"
    assert list(tmp_path.iterdir()) == []


@pytest.mark.parametrize(
    "kwargs",
    [
        {"command": ["sh", "../escape.sh"]},
        {"command": ["/bin/sh", "-c", "true"]},
        {"command": ["true"], "files": (("../x", "y"),)},
        {"command": ["true"], "workdir": "../.."},
    ],
)
def test_containment_violations(tmp_path, kwargs):
    plan = _plan(**kwargs)
    with pytest.raises(ContainmentError):
        check_containment(plan, tmp_path)
    out = execute(plan)
    assert out.status == "inconclusive"


def test_harness_call_synthesises_arguments():
    setup, call = harness_call("int f(char *buf, size_t n, FILE *fp)\n{\n    return 0;\n}", "overflow")
    assert "harness_payload()" in setup and call == "(void)f(arg0, 1024, stdin)"
    with pytest.raises(PlanUnavailable):
        harness_call("int g(struct thing t)\n{\n    return 0;\n}", "overflow")
    with pytest.raises(PlanUnavailable):
        harness_call("int main(void)\n{\n    return 0;\n}", "overflow")


def test_no_template_and_no_planner():
    region = Region("r", "function", SourceLocation("a.c", 1, 6), GETS)
    with pytest.raises(PlanUnavailable):
        build_plan(_finding(issue="logic/race"), region)


@needs_cc
def test_gets_overflow_is_reproduced():
    plan = template_plan(_finding(), GETS)
    assert plan.expected_signal == "crash_marker" and plan.command == ("sh", "run.sh")
    out = execute(plan)
    assert out.status == "reproduced", out.log_excerpt


@needs_cc
def test_bounded_copy_is_not_reproduced():
    plan = template_plan(_finding(issue="security/buffer-overflow"), SAFE)
    assert execute(plan).status == "not_reproduced"


@needs_cc
def test_build_failure_is_inconclusive():
    broken = "int read_name(char *dst)\n{\n    undefined_call(dst);\n    return 0;\n}"
    out = execute(template_plan(_finding(), broken))
    assert out.status == "inconclusive" and out.note == "artefact failed to build"
