import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulseforge.metrics import EvalReport, metrics


def test_perfect_estimates():
    m = metrics([60, 70, 80], [60, 70, 80])
    assert m["MAE"] == m["RMSE"] == m["MAPE"] == 0
    assert m["rho"] == pytest.approx(1)


def test_hand_example():
    m = metrics([71, 70], [70, 72])
    assert m["MAE"] == pytest.approx(1.5)
    assert m["RMSE"] == pytest.approx(math.sqrt(2.5))
    assert m["MAPE"] == pytest.approx(100 * (1 / 70 + 2 / 72) / 2)


def test_constant_offset():
    gt = np.array([60.0, 75.0, 90.0, 110.0])
    m = metrics(gt + 4, gt)
    assert m["MAE"] == pytest.approx(4)
    assert m["rho"] == pytest.approx(1)


def test_rho_undefined_cases():
    assert math.isnan(metrics([70], [72])["rho"])
    assert math.isnan(metrics([70, 70], [72, 75])["rho"])


def test_nonpositive_ground_truth_rejected():
    with pytest.raises(ValueError):
        metrics([70, 70], [0, 70])
    with pytest.raises(ValueError):
        metrics([70], [70, 71])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(30, 200), st.floats(30, 200)), min_size=1, max_size=50))
def test_mae_never_exceeds_rmse(pairs):
    est, gt = zip(*pairs)
    m = metrics(est, gt)
    assert m["MAE"] <= m["RMSE"] + 1e-12


def test_report_csv_round_trip_and_aggregates():
    rep = EvalReport()
    rep.add("a", 71.0, 70.0, "pos")
    rep.add("b", 70.0, 72.0, "pos")
    rep.add("a", 70.0, 70.0, "ica")
    rep.add("b", 72.0, 72.0, "ica")
    text = rep.to_csv()
    assert text.splitlines()[0] == "clip_id,hr_est,hr_gt,method"
    assert text.splitlines()[1] == "a,71.0000,70.0000,pos"
    back = EvalReport.from_csv(text)
    assert back.rows == rep.rows
    agg = rep.aggregates()
    assert agg["pos"]["MAE"] == pytest.approx(1.5)
    assert agg["ica"]["MAE"] == 0
    assert agg["pos"]["n"] == 2
    assert '"pos"' in rep.to_json()
