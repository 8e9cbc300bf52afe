import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import tldpinn  # noqa: F401
from tldpinn.errors import DegenerateReference, DomainError
from tldpinn.metrics import (
    ErrorReport,
    analytic_reference,
    convergence_order,
    interface_count,
    ode_order,
    profile_ratio,
    relative_l2,
    theorem_study,
    write_report_csv,
)
from tldpinn.oracle import ReferenceTrajectory
from tldpinn.pdes import benchmark
from tldpinn.schemes import builtin


def test_relative_l2_examples():
    ref = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert relative_l2(ref, ref) == 0.0
    assert relative_l2(np.zeros_like(ref), ref) == pytest.approx(1.0)
    assert relative_l2(1.01 * ref, ref) == pytest.approx(0.01, rel=1e-12)


def test_relative_l2_degenerate():
    with pytest.raises(DegenerateReference):
        relative_l2(np.ones(3), np.zeros(3))


def test_relative_l2_on_trajectory_skips_initial_row():
    traj = ReferenceTrajectory("x", np.zeros(2), np.array([0.0, 0.5, 1.0]),
                               np.array([[9.0, 9.0], [1.0, 1.0], [1.0, -1.0]]))
    pred = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, -1.0]])
    assert relative_l2(pred, traj) == 0.0
    assert relative_l2(pred[1:], traj) == 0.0


finite = st.floats(-1e3, 1e3, allow_nan=False).filter(lambda v: abs(v) > 1e-3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-10, 10)),
       arrays(np.float64, 6, elements=st.floats(0.1, 10)), finite)
def test_relative_l2_is_scale_invariant(pred, ref, c):
    assert relative_l2(c * pred, c * ref) == pytest.approx(relative_l2(pred, ref), rel=1e-10, abs=1e-12)


def test_convergence_order_examples():
    hs = [0.1, 0.05, 0.025]
    assert convergence_order([(h, h * h) for h in hs]) == pytest.approx(2.0, abs=1e-12)
    assert convergence_order([(h, 3 * h) for h in hs]) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 5), st.floats(1e-3, 1e3))
def test_convergence_order_recovers_power(p, C):
    hs = [0.2, 0.1, 0.05, 0.025]
    assert convergence_order([(h, C * h ** p) for h in hs]) == pytest.approx(p, abs=1e-10)


def test_convergence_order_errors():
    with pytest.raises(DomainError):
        convergence_order([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(DomainError):
        convergence_order([(0.1, 1.0), (0.05, 0.0), (0.025, 0.1)])
    with pytest.raises(DomainError):
        convergence_order([(0.1, 1.0), (0.2, 0.5), (0.05, 0.1)])


def test_crank_nicolson_ode_order():
    assert ode_order(builtin("crank_nicolson")) == pytest.approx(2.0, abs=0.05)


def test_theorem_study_orders():
    study = theorem_study()
    orders = study["orders"]
    assert orders["crank_nicolson"] == pytest.approx(2.0, abs=0.2)
    assert orders["backward_euler"] == pytest.approx(1.0, abs=0.2)
    assert orders["gauss_legendre2"] == pytest.approx(4.0, abs=0.3)
    assert study["rows"]


def test_profile_ratio_and_interfaces():
    assert profile_ratio([1.0, 2.0, 3.0, 30.0]) == pytest.approx(30.0 / 2.5)
    x = np.linspace(-1, 1, 200, endpoint=False)
    assert interface_count(np.sign(np.cos(2 * np.pi * x))) == 4
    assert interface_count(np.ones(10)) == 0
    # small wiggles below the threshold are ignored
    assert interface_count(np.array([1, 0.1, -0.1, 0.2, 1, -1, -1])) == 2


def test_write_report_csv(tmp_path):
    rep = ErrorReport(0.5, np.array([0.1, 0.2]), np.array([1e-4, 2e-4]), np.array([10, 20]),
                      np.array([0.5, 1.0]))
    path = write_report_csv(tmp_path / "errors.csv", rep)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["n", "t", "relative_l2", "residual_loss", "epochs"]
    assert rows[1] == ["1", "0.5", "0.1", "0.0001", "10"]
    assert rows[-1][0] == "summary"
    assert float(rows[-1][2]) == 0.5
    assert float(rows[-1][4]) == 15.0


def test_analytic_reference():
    ref = analytic_reference(benchmark("heat_test"), 4, points=11)
    assert ref.values.shape == (5, 11)
    np.testing.assert_allclose(ref.values[2], np.exp(-math.pi ** 2 * 0.5) * np.sin(np.pi * ref.grid))
    with pytest.raises(DomainError):
        analytic_reference(benchmark("rd"), 4)
