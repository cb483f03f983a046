"""Frozen outputs of the reference oracle.

These literals were produced by ``tests/oracle.py`` before the package code
was checked against them; the module tests compare the package to the same
literals.
"""

import math

import pytest

import oracle

FROZEN = {
    "mape_single": 0.1,
    "mape_pair": 0.1,
    "metrics_mae": 3.5,
    "metrics_rmse": math.sqrt(12.5),
    "metrics_mape": 0.035,
    "q_pair_a": 1.0,
    "q_pair_b": math.sqrt(0.7325),
    "normalize": [0.0, 0.1, 1.0],
    "hinge_inactive": 0.0,
    "hinge_reversed": 0.151,
    "combined": 0.148,
    "slice_0723": 88,
    "l2_unit_34": [0.6, 0.8],
    "route_two_links": 82.0,
    "route_fallback": 55.0,
}


class TestFrozenOracle:
    def test_mape(self):
        assert oracle.mape([100.0], [110.0]) == pytest.approx(FROZEN["mape_single"], abs=1e-12)
        assert oracle.mape([100.0, 200.0], [110.0, 180.0]) == pytest.approx(FROZEN["mape_pair"], abs=1e-12)

    def test_metrics(self):
        y, p = [100.0, 100.0], [103.0, 96.0]
        assert oracle.mae(y, p) == pytest.approx(FROZEN["metrics_mae"], abs=1e-12)
        assert oracle.rmse(y, p) == pytest.approx(FROZEN["metrics_rmse"], abs=1e-12)
        assert oracle.mape(y, p) == pytest.approx(FROZEN["metrics_mape"], abs=1e-12)

    def test_difference(self):
        assert oracle.l2([0.5, 0.25, 1.0], [0.5, 0.25, 0.0]) == pytest.approx(FROZEN["q_pair_a"], abs=1e-12)
        assert oracle.l2([0.2, 0.2, 0.2], [0.5, 0.25, 1.0]) == pytest.approx(FROZEN["q_pair_b"], abs=1e-12)
        assert FROZEN["q_pair_b"] == pytest.approx(0.85586, abs=5e-6)

    def test_normalize(self):
        assert oracle.minmax([10.0, 15.0, 60.0]) == pytest.approx(FROZEN["normalize"], abs=1e-12)

    def test_hinge(self):
        assert oracle.triangle_hinge(0.1, 0.2, 0.3) == FROZEN["hinge_inactive"]
        assert oracle.triangle_hinge(0.3, 0.2, 0.1) == pytest.approx(FROZEN["hinge_reversed"], abs=1e-12)

    def test_combined(self):
        assert oracle.combined(0.2, 0.1, 0.52) == pytest.approx(FROZEN["combined"], abs=1e-12)

    def test_slice(self):
        assert oracle.slice_of_clock(7, 23) == FROZEN["slice_0723"]

    def test_unit(self):
        assert oracle.l2_unit([3.0, 4.0]) == pytest.approx(FROZEN["l2_unit_34"], abs=1e-12)

    def test_route(self):
        assert oracle.route_sum([500.0, 300.0], [10.0, 15.0], [12.0]) == pytest.approx(FROZEN["route_two_links"])
        assert oracle.route_sum([400.0], [8.0], [5.0]) == pytest.approx(FROZEN["route_fallback"])

    def test_cold_rule(self):
        assert oracle.cold_kept([10, 40, 100, 600], 50)
        assert not oracle.cold_kept([100, 200, 300, 400], 50)
        assert oracle.cold_kept([10, 100, 100, 100], 50)

    def test_coverage(self):
        assert oracle.trip_coverage([[2, 2, 3], [3]]) == {2: 1, 3: 2}
