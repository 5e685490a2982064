import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gwinf import meanmatrix as mm
from gwinf.model import build_model, load_spec


def test_doubly_stochastic():
    es = mm.eigen_pair(np.full((2, 2), 0.5))
    assert np.allclose(es.v, [0.5, 0.5]) and np.allclose(es.u, [1, 1])
    assert es.rho == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("N", [100, 200, 512])
def test_eigen_pair_geometric_rows(N):
    A = oracles.geometric_rows([0.3, 0.5], N)
    A /= A.sum(axis=1, keepdims=True)  # row-stochastic
    es = mm.eigen_pair(A)
    assert np.abs(es.v @ A - es.v).max() <= 1e-10
    assert np.abs(A @ es.u - es.u).max() <= 1e-10
    assert abs(es.v.sum() - 1) <= 1e-12 and abs(es.v @ es.u - 1) <= 1e-12
    assert np.allclose(es.u, 1.0, atol=1e-12)
    assert np.abs(es.v - oracles.stationary_dense(A)).max() <= 1e-10


def test_build_truncated_policies():
    d = mm.build_truncated(load_spec("chain_alpha1"))
    p = mm.build_truncated(load_spec("chain_alpha1").replace(tail_policy="project"))
    assert d.W <= 1.0 and np.allclose(p.row_sums, 1.0, atol=1e-14)
    assert d.tail_bound == pytest.approx(0.7**200)
    assert np.allclose(d.entries, oracles.geometric_rows([0.3, 0.5], 200), rtol=1e-12, atol=0)


def test_eigen_errors():
    with pytest.raises(mm.NumericError):
        mm.eigen_pair(np.array([[0.5, 0.5], [0.0, 0.0]]))
    with pytest.raises(mm.IrreducibilityError):
        mm.eigen_pair(np.array([[1.0, 0.0], [0.5, 0.5]]))


def test_structure_helpers():
    cyc = np.array([[0, 1.0], [1.0, 0]])
    assert mm.is_irreducible(cyc) and mm.period(cyc) == 2
    assert mm.period(np.full((3, 3), 1 / 3)) == 1
    assert not mm.is_irreducible(np.eye(2))


def test_radius_1x1():
    est = mm.convergence_radius(np.array([[1.0]]), n_max=50)
    assert np.all(est.r == 1.0) and est.R == 1.0


def test_radius_chain_and_scaled(chain1):
    model, M, es = chain1
    est = mm.convergence_radius(M, 1, 1, 500)
    assert 0.98 <= est.R <= 1.02
    half = mm.convergence_radius(M.scaled(0.5), 1, 1, 500)
    assert half.R == pytest.approx(2.0, rel=0.04)
    for g in (0.5, 2.0):
        r = mm.convergence_radius(M.scaled(g), 1, 1, 500)
        assert abs(r.R - est.R / g) <= r.width + est.width / g + 1e-12


def test_classify_chain(chain1):
    model, M, es = chain1
    cls = mm.classify(M, es)
    assert cls.criticality is mm.Criticality.CRITICAL and cls.positive and cls.status == "ok"
    assert cls.max_rel_dev < 1e-6
    sub = mm.build_truncated(model).scaled(0.9)
    assert mm.classify(sub, mm.eigen_pair(sub)).criticality is mm.Criticality.SUB


def test_powers_converge_to_outer_product(chain1):
    model, M, es = chain1
    P = np.linalg.matrix_power(M.entries, 300)
    assert np.abs(P - np.outer(es.u, es.v)).max() <= 1e-8


def test_row_bounds():
    S = np.full((3, 3), 1 / 3)
    rb = mm.uniform_row_bound(S, mm.eigen_pair(S), 50)
    assert rb.constant == pytest.approx(1.0, abs=1e-14)
    sub = 0.9 * S
    es = mm.eigen_pair(sub)
    rb = mm.uniform_row_bound(sub, mm.eigen_pair(S), 20)
    assert np.allclose(rb.sequence, 0.9 ** np.arange(21), rtol=1e-12)
    assert es.rho == pytest.approx(0.9)


def test_row_bound_discard_chain(chain1):
    model, M, es = chain1
    # u is not identically 1 under discard, so compare against plain row sums
    ones = mm.EigenSystem(es.v, np.ones(M.N), 1.0, 0.0, 0.0, 0)
    assert mm.uniform_row_bound(M, ones, 200).constant <= 1.0 + 1e-15


@pytest.mark.parametrize("fixture", ["chain1", "chain05"])
def test_class_m1_chain(fixture, request):
    model, M, es = request.getfixturevalue(fixture)
    rep = mm.check_class_m1(model, M, es)
    assert all(rep.flags.values()), rep.flags
    assert rep.in_M1 and rep.in_M1_0
    for x in (rep.C_iv, rep.c_iv, rep.U, rep.row_bound_C, rep.frak_m):
        assert np.isfinite(x)


def test_class_m1_chain_half_slack():
    # alpha = 0.5, c = 0.5 on the same kernel
    spec = load_spec("chain_alpha05").replace(slack_coeffs=(0.5,))
    assert all(mm.check_class_m1(spec).flags.values())


def test_class_m1_shift_fails_iii():
    rep = mm.check_class_m1(load_spec("shift_counterexample"))
    assert not rep.flags["cond_iii"] and not rep.flags["M1"]
    assert all(t == 1.0 for _, t in rep.cond_iii_tail)


def test_class_m1_linear_single_type():
    from gwinf.model import ModelSpec

    spec = ModelSpec.from_dict({"family": "LINEAR", "truncation_N": 1,
                                "kernel": {"type": "explicit", "rows": [[1.0]]}})
    rep = mm.check_class_m1(spec)
    assert rep.U == 1.0 and rep.C_iv == 1.0
    assert rep.flags["cond_i"] and rep.flags["cond_ii"] and rep.flags["cond_iv"]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_classify_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    M = mm.TruncatedMeanMatrix(oracles.geometric_rows([0.3, 0.5], 30))
    es = mm.eigen_pair(M)
    perm = rng.permutation(30)
    Mp = M.permuted(perm)
    esp = mm.eigen_pair(Mp)
    assert esp.rho == pytest.approx(es.rho, rel=1e-12)
    assert np.allclose(esp.v, es.v[perm], rtol=1e-9)
    a, b = mm.classify(M, es), mm.classify(Mp, esp)
    assert a.criticality is b.criticality and a.positive == b.positive


def test_class_flags_permutation_invariant():
    model = build_model(load_spec("chain_alpha1").replace(truncation_N=40))
    M = mm.build_truncated(model)
    perm = np.random.default_rng(0).permutation(40)
    Mp = M.permuted(perm)
    r1 = mm.check_class_m1(model, M)
    r2 = mm.check_class_m1(model, Mp)
    for key in ("critical", "cond_i", "cond_ii", "cond_iv"):
        assert r1.flags[key] == r2.flags[key]
