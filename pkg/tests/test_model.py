import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from lqgame.errors import DataError, SingularMatrixError
from lqgame.model import (CoefficientPath, TimeGrid, assemble_R, check_conditions, load_spec,
                          spec_from_dict, validate_spec)

from conftest import coupled_spec, make_spec


def test_grid_nodes_end_exactly_at_T():
    g = TimeGrid(0.7, 3)
    assert g.t[-1] == 0.7
    assert_allclose(g.t, [0, 0.7 / 3, 1.4 / 3, 0.7])


@pytest.mark.parametrize("T,N", [(0.0, 10), (-1.0, 10), (1.0, 1), (1.0, 2.5), (np.inf, 10)])
def test_grid_rejects_bad_values(T, N):
    with pytest.raises(DataError):
        TimeGrid(T, N)


def test_locate_clamps_and_snaps():
    g = TimeGrid(1.0, 10)
    assert g.locate(-3.0) == (0, 0.0)
    assert g.locate(5.0) == (10, 0.0)
    assert g.locate(0.3) == (3, 0.0)
    j, w = g.locate(0.35)
    assert j == 3 and w == pytest.approx(0.5)


def test_sampled_path_interpolates_linearly():
    g = TimeGrid(1.0, 2)
    p = CoefficientPath.sampled([[0.0], [1.0], [4.0]])
    assert_allclose(p.at(0.25, g), [0.5])
    assert_allclose(p.at(0.75, g), [2.5])
    assert p.shape == (1,) and p.count == 3


def test_resample_keeps_constants_and_regrids_paths():
    old, new = TimeGrid(1.0, 2), TimeGrid(1.0, 4)
    p = CoefficientPath.sampled([[0.0], [1.0], [4.0]]).resample(old, new)
    assert_allclose(p.values[:, 0], [0, 0.5, 1, 2.5, 4])
    c = CoefficientPath.const([[2.0]])
    assert c.resample(old, new) is c


def test_blocks_are_assembled(coupled):
    spec = coupled[0]
    c = spec.coefficients(0.3)
    assert_allclose(c.R, [[-2, 1], [1, 3]])
    assert c.B.shape == (2, 2) and c.S.shape == (2, 2)
    assert_allclose(c.rho, [0.3, -0.2])
    assert spec.nodes.R.shape == (spec.grid.N + 1, 2, 2)


def test_json_round_trip(tmp_path):
    spec = coupled_spec(N=20)
    doc = spec.to_dict()
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(doc))
    back = load_spec(path)
    assert back.to_dict() == doc


def test_json_optional_terms_default_to_zero():
    doc = make_spec(N=10).to_dict()
    for key in ("q", "rho1", "rho2", "b", "h", "g"):
        del doc[key]
    spec = spec_from_dict(doc)
    assert_array_equal(spec.g, [0.0])
    assert_array_equal(spec.rho1.values, [0.0])


def test_json_sampled_coefficient():
    doc = make_spec(N=4).to_dict()
    doc["A"] = {"path": [[[0.1 * j]] for j in range(5)]}
    spec = spec_from_dict(doc)
    assert not spec.A.constant
    assert validate_spec(spec).ok


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d.pop("G"), "missing"),
    (lambda d: d.pop("A"), "missing coefficient"),
    (lambda d: d.pop("dims"), "missing required key"),
    (lambda d: d.update(extra=1), "unknown keys"),
    (lambda d: d.update(A={"path": [[[0.0]]] * 3}), r"expected N\+1"),
    (lambda d: d.update(A={"constant": [[0.0]], "path": []}), "exactly one"),
])
def test_json_errors(mutate, message):
    doc = make_spec(N=10).to_dict()
    mutate(doc)
    with pytest.raises(DataError, match=message):
        spec_from_dict(doc)


def test_load_rejects_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(DataError):
        load_spec(p)


def test_validate_duopoly_ok(duopoly):
    assert validate_spec(duopoly[0]).ok


def test_validate_reports_every_violation():
    spec = make_spec(n=2, d=2, dbar=1, N=10, Q=[[1.0, 0.5], [0.0, 1.0]], K=[[1.0, 1.0], [1.0, 1.0]])
    res = validate_spec(spec)
    assert "Q not symmetric at node 0" in res.violations
    assert "K not invertible at node 0" in res.violations


def test_validate_flags_shape_and_nan():
    spec = make_spec(N=10, B1=np.zeros((2, 1)))
    assert any("B1 has shape" in v for v in validate_spec(spec).violations)
    spec = make_spec(N=10, A=[[np.nan]])
    assert any("non-finite" in v for v in validate_spec(spec).violations)


def test_validate_flags_ill_conditioned_K():
    spec = make_spec(n=2, d=2, N=10, K=[[1.0, 0.0], [0.0, 1e-9]])
    assert any("condition number" in v for v in validate_spec(spec).violations)


def test_conditions_duopoly_all_hold(duopoly):
    rep = check_conditions(duopoly[0])
    assert rep.condI and rep.condII and rep.condIandII


def test_conditions_coupled_example():
    # R11 = -2, R21 = 1, R22 = 3: Schur complements 3 + 1/2 and -2 - 1/3
    rep = check_conditions(coupled_spec(N=10))
    assert rep.condI and rep.condII
    assert_allclose(rep.margins["schur_I"][0], [3.5, 3.5])
    assert_allclose(rep.margins["schur_II"][0], [-2 - 1 / 3] * 2)


def test_conditions_fail_with_positive_R11():
    rep = check_conditions(make_spec(N=10, R11=[[2.0]]))
    assert not rep.condI and not rep.condIandII
    assert rep.condII is False  # schur_II = 2 - 0 > 0
    assert "R11" in rep.describe("I")


def test_condition_margin_must_be_positive():
    with pytest.raises(DataError):
        check_conditions(make_spec(N=10), delta=0.0)


def test_assemble_R_duopoly(duopoly):
    R, Rinv = assemble_R(duopoly[0], 0)
    assert_array_equal(R, [[-1, 0], [0, 1]])
    assert_allclose(Rinv, [[-1, 0], [0, 1]])


def test_assemble_R_singular():
    spec = make_spec(k1=1, k2=1, N=10, R11=[[1.0]], R21=[[1.0]], R22=[[1.0]])
    with pytest.raises(SingularMatrixError, match="node 0"):
        assemble_R(spec, 0)


blocks = st.floats(0.05, 5.0)


@settings(max_examples=60, deadline=None)
@given(r11=blocks, r22=blocks, r21=st.floats(-5, 5))
def test_condition_I_and_II_is_both(r11, r22, r21):
    spec = make_spec(N=2, R11=[[-r11]], R21=[[r21]], R22=[[r22]])
    rep = check_conditions(spec)
    # with R11 < 0 and R22 > 0 the Schur complements have the needed signs automatically
    assert rep.condIandII
    assert rep.condI and rep.condII
