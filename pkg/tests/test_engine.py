import copy
import json

import numpy as np
import pytest

import synth
from stubs import FixedSaliencyAdapter, UniformStub

from aiaudit import engine
from aiaudit.attacks import PgdParams
from aiaudit.catalogue import load_exemplar_catalogue, serialize_catalogue
from aiaudit.dataset import DatasetSplit, SplitName, split_dataset
from aiaudit.engine import (
    AuditParameters,
    ConfigError,
    Outcome,
    Verdict,
    exit_status,
    run_audit,
    run_req7_worst_case,
    run_req30_independence,
    run_req33_explainability,
)
from aiaudit.explain import CenterCheckParams
from aiaudit.perturb import RainParams, identity_rain_params


@pytest.fixture(scope="module")
def splits(tiny_items):
    return split_dataset(tiny_items, (0.6, 0.2, 0.2), seed=0)


def test_req7_identity_stressor_passes(audit_env, splits):
    _train, _val, test = splits
    verdict = run_req7_worst_case(
        audit_env["model"], test, {"rain": identity_rain_params()}, accuracy_threshold=0.0
    )
    assert verdict.outcome is Outcome.PASS
    assert verdict.measured["stressed_accuracy"] == verdict.measured["clean_accuracy"]
    assert "rain" in verdict.measured["stressor"]


def test_req7_threshold_is_strict(audit_env, splits):
    _train, _val, test = splits
    # accuracy can never be strictly greater than 1.0
    verdict = run_req7_worst_case(
        audit_env["model"], test, {"rain": identity_rain_params()},
        accuracy_threshold=1.0,
    )
    assert verdict.outcome is Outcome.FAIL


def test_req7_pgd_without_gradients_is_error(splits):
    _train, _val, test = splits
    stub = UniformStub(num_classes=5, resolution=32)
    verdict = run_req7_worst_case(stub, test, {"pgd": PgdParams(iterations=2)})
    assert verdict.outcome is Outcome.ERROR
    assert verdict.evidence[0]["type"] == "capability"


def test_req7_rejects_ambiguous_stressor(audit_env, splits):
    _train, _val, test = splits
    with pytest.raises(ConfigError):
        run_req7_worst_case(
            audit_env["model"], test,
            {"rain": identity_rain_params(), "pgd": PgdParams()},
        )


def test_req30_pass_and_leak_findings(splits):
    train, val, test = splits
    verdict = run_req30_independence(train, val, test)
    assert verdict.outcome is Outcome.PASS

    leaked = DatasetSplit(SplitName.TEST, test.items[:-1] + (train.items[0],))
    verdict = run_req30_independence(train, val, leaked)
    assert verdict.outcome is Outcome.FAIL
    findings = [f["type"] for f in verdict.evidence]
    assert "exact_overlap" in findings


def test_req30_track_leak(splits):
    train, val, test = splits
    shared = train.items[0]
    moved = DatasetSplit(
        SplitName.TEST,
        test.items + tuple(
            synth.make_track(shared.label, shared.track_id, 1,
                             np.random.default_rng(0))
        ),
    )
    verdict = run_req30_independence(train, val, moved)
    assert verdict.outcome is Outcome.FAIL
    assert any(f["type"] == "track_overlap" for f in verdict.evidence)


def test_req30_empty_split_is_error_verdict(splits):
    train, val, _test = splits
    verdict = run_req30_independence(train, val, DatasetSplit(SplitName.TEST))
    assert verdict.outcome is Outcome.ERROR


def stub_split(res=8):
    rng = np.random.default_rng(0)
    items = tuple(
        synth.make_track(c, f"c{c}t{i}", 1, rng, res=res)[0]
        for c in range(3) for i in range(4)
    )
    return DatasetSplit(SplitName.TEST, items)


def test_req33_pass_and_fail():
    split = stub_split()
    centered = np.zeros((3, 3, 1))
    centered[1, 1, 0] = 1.0
    good = FixedSaliencyAdapter(centered, np.ones((3, 3, 1)), resolution=8)
    bad = FixedSaliencyAdapter(np.ones((3, 3, 1)), np.ones((3, 3, 1)), resolution=8)
    params = CenterCheckParams(samples_per_class=3, seed=0)
    assert run_req33_explainability(good, split, params, layer="conv").outcome is Outcome.PASS
    verdict = run_req33_explainability(bad, split, params, layer="conv")
    assert verdict.outcome is Outcome.FAIL


def test_req33_unknown_layer_is_error():
    split = stub_split()
    adapter = FixedSaliencyAdapter(np.ones((3, 3, 1)), np.ones((3, 3, 1)), resolution=8)
    verdict = run_req33_explainability(
        adapter, split, CenterCheckParams(samples_per_class=2), layer="convX"
    )
    assert verdict.outcome is Outcome.ERROR


def test_audit_parameters_require_rationale():
    with pytest.raises(ConfigError):
        AuditParameters(requirement_id=7, specification="rain", rationale="  ")


def test_run_audit_end_to_end(audit_env):
    config = engine.load_audit_config(audit_env["config_path"])
    report = run_audit(config)
    rows = report["results"]
    assert [(r["requirement_id"], r["specification"]) for r in rows] == [
        (7, "rain"), (7, "pgd"), (30, "independence"), (33, "center_focus")
    ]
    assert report["selected_requirement_ids"] == [7, 30, 33]
    assert set(report["environment"]["dataset_digests"]) == {
        "train", "validation", "test"
    }
    # REQ 30 on track-disjoint splits passes
    assert rows[2]["verdict"]["outcome"] == "pass"
    # defaults table is embedded
    assert "pgd" in report["defaults"]


def test_run_audit_missing_entry_for_executable(audit_env):
    config = engine.load_audit_config(audit_env["config_path"])
    config["requirements"] = [
        r for r in config["requirements"] if r["id"] != 30
    ]
    with pytest.raises(ConfigError, match="30"):
        run_audit(config)


def test_run_audit_missing_rationale(audit_env):
    config = engine.load_audit_config(audit_env["config_path"])
    config = copy.deepcopy(config)
    config["requirements"][0]["rationale"] = ""
    with pytest.raises(ConfigError):
        run_audit(config)


def test_run_audit_not_executable_row(audit_env, tmp_path):
    doc = serialize_catalogue(load_exemplar_catalogue())
    doc["requirements"].append(
        {
            "id": 12,
            "text": "An unimplemented requirement.",
            "scope": "ai_subsystem",
            "grades": {"A": "++", "B": "++", "C": "++", "D": "++"},
            "applicability": "simple",
            "concretization": "minor",
            "testability": "low",
            "procedure_kind": ["evidence_based"],
        }
    )
    cat_path = tmp_path / "extended.json"
    cat_path.write_text(json.dumps(doc))
    config = engine.load_audit_config(audit_env["config_path"])
    config["catalogue"] = str(cat_path)
    report = run_audit(config)
    row_12 = [r for r in report["results"] if r["requirement_id"] == 12]
    assert len(row_12) == 1
    assert row_12[0]["verdict"]["outcome"] == "not_executable"
    # verdict completeness: one row per (requirement, specification)
    assert len(report["results"]) == 5


def test_run_audit_deterministic_modulo_timestamp(audit_env):
    config = engine.load_audit_config(audit_env["config_path"])
    a = run_audit(config)
    b = run_audit(config)
    a.pop("timestamp")
    b.pop("timestamp")
    assert a == b


def make_report(*outcomes):
    return {
        "results": [
            {"verdict": {"outcome": o.value, "measured": {}}} for o in outcomes
        ]
    }


def test_exit_status_mapping():
    assert exit_status(make_report(Outcome.PASS, Outcome.PASS)) == 0
    assert exit_status(make_report(Outcome.PASS, Outcome.FAIL)) == 1
    assert exit_status(make_report(Outcome.ERROR, Outcome.FAIL)) == 1
    assert exit_status(make_report(Outcome.PASS, Outcome.ERROR)) == 3
    assert exit_status(make_report(Outcome.NOT_EXECUTABLE)) == 0
    assert exit_status(make_report()) == 0


def test_verdict_serialization_round_trip():
    verdict = Verdict(
        requirement_id=7,
        specification="rain",
        outcome=Outcome.FAIL,
        measured={"headline": 0.79},
        evidence=({"type": "x"},),
        procedure_description="d",
    )
    d = verdict.to_dict()
    assert d["outcome"] == "fail"
    assert json.loads(json.dumps(d)) == d


def test_render_summary_lines(audit_env):
    config = engine.load_audit_config(audit_env["config_path"])
    report = run_audit(config)
    summary = engine.render_summary(report)
    lines = summary.strip().splitlines()
    assert lines[1].startswith("7/rain ")
    assert lines[3].split()[0] == "30/independence"
    text = engine.render_text(report)
    assert engine.render_text(report) == text  # deterministic rendering
