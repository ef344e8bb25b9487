import numpy as np
import pytest

from mpcl.gradcheck import check_loss, check_model, inject_fault, relative_error, run_gradcheck
from mpcl.numcore import Tape, make_rng


def test_relative_error_floor():
    assert relative_error(1e-9, 2e-9) == pytest.approx(1e-3)
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_loss_suite_passes(m):
    assert check_loss(m, make_rng(m)).passed


@pytest.mark.parametrize("kind", ["mlp", "tcn", "attn"])
def test_model_suite_passes(kind):
    res = check_model(kind, 2, make_rng(0, kind))
    assert res.passed and res.entries > 0


@pytest.mark.parametrize("op", ["relu", "linear", "loss"])
def test_injected_faults_are_caught(op):
    r = make_rng(1)
    with inject_fault(op):
        if op == "loss":
            assert not check_loss(2, r).passed
        else:
            assert not check_model("mlp", 2, r).passed
    # the patch is undone on exit
    assert Tape.relu.__name__ == "relu"
    assert check_model("mlp", 2, make_rng(1)).passed


def test_report_is_json_ready():
    import json

    report = run_gradcheck(configs=3, seed=2)
    assert report["passed"]
    doc = json.loads(json.dumps(report))
    assert len(doc["checks"]) == 6 + 3
    assert doc["max_rel_error"] == max(c["max_rel_error"] for c in doc["checks"])
    assert np.isfinite(doc["seconds"])
