import math

import pytest

from pkgsage.ingest import AdmissionRecord
from pkgsage.synth import SyntheticConfig

AGE_GROUPS = ["18-39", "40-59", "60-69", "70-79", "80+"]


def rec(pid="P1", aid="A1", t=0, icu=True, **kw):
    return AdmissionRecord(pid, aid, t, icu, **kw)


def full_record(**overrides):
    base = dict(
        age_group="70-79", gender="F", religion="CATHOLIC", marital_status="WIDOWED",
        race="WHITE", employment="RETIRED", household="ALONE", housing="HOUSE",
        disease_codes=("428.0", "038.9"), medication_codes=("FUROSEMIDE",),
        procedure_codes=(),
    )
    base.update(overrides)
    return rec(**base)


def signal_config(n=2000, seed=1, strong="race", noise=("religion", "gender"),
                  bayes_target_weight=math.log(4), **kw):
    """Two-valued strong facet with weights ±w (Bayes accuracy sigmoid(w))."""
    vocab = {
        "age_group": AGE_GROUPS,
        "gender": ["F", "M"],
        "religion": ["CATHOLIC", "JEWISH", "NONE"],
        "race": ["WHITE", "BLACK"],
        "marital_status": ["MARRIED", "SINGLE", "WIDOWED"],
    }
    vocab[strong] = ["S0", "S1"]
    w = bayes_target_weight
    return SyntheticConfig(n_patients=n, seed=seed, facet_vocab=vocab,
                           signal_weights={strong: {"S0": w, "S1": -w}}, **kw)


@pytest.fixture
def record():
    return full_record()


# one summary line per acceptance criterion, shown after the run
_criteria = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if hasattr(report, "wasxfail"):
        status = "XFAIL (known defect in the stated count)"
    else:
        status = "PASS" if report.passed else "FAIL"
    _criteria.append((props["criterion"], status, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in sorted(_criteria, key=lambda c: c[0]):
        terminalreporter.write_line(f"[{status}] {crit}: {detail}")
