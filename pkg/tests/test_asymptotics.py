import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gwinf import asymptotics as asy, gfiter
from gwinf.gfiter import PhiCurve


def synthetic(func, n=40):
    x = np.logspace(-8, 0, n)
    return PhiCurve(x, np.array([func(t) for t in x]), 1.0, func=func)


def test_fit_pure_power():
    fit = asy.fit_alpha(synthetic(lambda x: 0.3 * x**1.5))
    assert fit.alpha_hat == pytest.approx(0.5, abs=1e-3)
    assert np.allclose(fit.ell_values, 0.3, atol=1e-3)
    assert fit.fit_rmse < 1e-12


def test_fit_slowly_varying_perturbation():
    pure = asy.fit_alpha(synthetic(lambda x: x**2))
    pert = asy.fit_alpha(synthetic(lambda x: x**2 * (1 + 0.1 * math.log(1 / x))))
    assert abs(pert.alpha_hat - 1) < 0.15
    assert pert.fit_rmse > pure.fit_rmse
    assert np.ptp(pert.ell_values) > 0.1  # the drift is visible


def test_fit_chain_alpha1(chain1):
    model, M, es = chain1
    fit = asy.fit_alpha(gfiter.phi_curve(model, es))
    assert fit.alpha_hat == pytest.approx(1.0, abs=1e-3)


def test_fit_errors():
    curve = synthetic(lambda x: x**2, n=5)
    with pytest.raises(asy.FitError):
        asy.fit_alpha(curve)
    bad = PhiCurve(np.logspace(-3, 0, 12), np.r_[np.zeros(3), np.logspace(-6, 0, 9)], 1.0)
    with pytest.warns(UserWarning):
        with pytest.raises(asy.FitError):
            asy.fit_alpha(bad)


def test_closed_form_values():
    q = asy.closed_form_q(1.0, 1.0, 0.5, 1e4)
    assert q == pytest.approx(1 / (1 + 0.5e4), rel=1e-15)
    assert q == pytest.approx(1.9996e-4, rel=1e-4)


def test_predict_closed_form_selected():
    curve = synthetic(lambda x: 0.5 * x**2)
    pred = asy.predict_q(curve, 1.0, [10, 100, 10_000])
    assert pred.method is asy.Method.CLOSED_FORM
    assert np.allclose(pred.q_pred, 1 / (1 + 0.5 * np.array([10, 100, 10_000])), rtol=1e-10)


@pytest.mark.parametrize("alpha,C", [(1.0, 0.5), (0.5, 0.3), (0.2, 0.1)])
def test_quadrature_agrees_with_closed_form(alpha, C):
    phi = lambda x: C * x ** (1 + alpha)  # noqa: E731
    grid = [1, 10, 1000, 10**5]
    quad = asy.predict_q(phi, 1.0, grid, method="QUADRATURE")
    closed = asy.closed_form_q(1.0, alpha, C, grid)
    assert np.allclose(quad.q_pred, closed, rtol=1e-10)
    assert quad.alpha == pytest.approx(alpha, abs=1e-9)


def test_predict_errors():
    with pytest.raises(ValueError):
        asy.predict_q(lambda x: x, 1.5, [1])
    with pytest.raises(ValueError):
        asy.predict_q(lambda x: 0.0, 1.0, [1], method="QUADRATURE")
    with pytest.raises(ValueError):
        asy.predict_q(lambda x: x**2, 1.0, [1], method="CLOSED_FORM")
    # Phi(x) = x: the integral of 1/Phi still diverges, but only logarithmically
    p = asy.predict_q(lambda x: x, 1.0, [10], method="QUADRATURE")
    assert p.q_pred[0] == pytest.approx(math.exp(-10), rel=1e-10)
    assert np.isnan(p.ell1_proxy[0])


@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_predict_matches_scalar_recursion(alpha):
    # the continuum and discrete dynamics differ by O(log n / n) relative;
    # over this range that correction is < 2%
    C = 1 / (2 * (1 + alpha))
    start = 1_000 if alpha == 1.0 else 10_000
    ns = np.unique(np.geomspace(start, 10**5, 15).astype(int))
    ref = oracles.scalar_recursion(C, alpha, 10**5)[ns]
    pred = asy.predict_q(lambda x: C * x ** (1 + alpha), 1.0, ns, method="CLOSED_FORM", alpha=alpha, C=C)
    assert np.max(np.abs(pred.q_pred / ref - 1)) <= 0.02


def test_xi_laplace_values():
    assert asy.xi_laplace(1.0, 1.0) == pytest.approx(0.5, abs=1e-15)
    t = np.linspace(0, 20, 101)
    assert np.allclose(asy.xi_laplace(t, 1.0), 1 / (1 + t), rtol=1e-14)
    assert asy.xi_laplace(0.0, 0.5) == 1.0
    assert asy.xi_laplace(1e-12, 0.5) == pytest.approx(1.0, abs=1e-5)
    assert asy.xi_laplace(1e12, 0.5) < 1e-5
    with pytest.raises(ValueError):
        asy.xi_laplace(-1.0, 0.5)


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.8, 1.0])
def test_xi_laplace_decreasing_convex(alpha):
    t = np.linspace(0, 10, 400)
    f = asy.xi_laplace(t, alpha)
    assert np.all((f >= 0) & (f <= 1))
    assert np.all(np.diff(f) < 0)
    assert np.all(np.diff(f, 2) >= -1e-12)


def test_xi_laplace_matches_original_form():
    t = np.logspace(-3, 3, 40)
    for a in (0.3, 0.7):
        assert np.allclose(asy.xi_laplace(t, a), 1 - (1 + t**-a) ** (-1 / a), rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(0.05, 1.0))
def test_limit_laplace_depends_on_inner_product(seed, alpha):
    rng = np.random.default_rng(seed)
    v = rng.random(8)
    v /= v.sum()
    lam = rng.random(8) * 3
    # move mass between two coordinates keeping (v, lambda) fixed
    d = rng.random() * lam[0] * v[0]
    lam2 = lam.copy()
    lam2[0] -= d / v[0]
    lam2[1] += d / v[1]
    a = asy.limit_laplace(v, alpha, lam)
    b = asy.limit_laplace(v, alpha, lam2)
    assert abs(a - b) <= 1e-15 + 1e-15 * abs(a)


def test_limit_laplace_scalar_lambda():
    v = np.array([0.25, 0.75])
    assert asy.limit_laplace(v, 1.0, 1.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        asy.limit_laplace(v, 1.0, [-1.0, 1.0])
    y = asy.YaglomTransform(v, 1.0)
    assert y.phi_limit(2.0) == pytest.approx(1 / 3) and y.xi_laplace(2.0) == pytest.approx(1 / 3)


# -- theorem report ------------------------------------------------------------

def test_verify_refuses_linear():
    from gwinf.model import build_model, load_spec

    rep = asy.verify_theorem(build_model(load_spec("linear_chain")), None, None, None)
    assert rep.refused and not rep.all_passed
    assert "excluded" in rep.to_dict()["reason"]


def test_verify_records_gaps(chain1):
    model, M, es = chain1
    rep = asy.verify_theorem(model, es, None, None)
    assert "trace missing" in rep.gaps and not rep.all_passed


def test_verify_survival_and_ratio(chain1):
    model, M, es = chain1
    tr = gfiter.survival_curve(model, 20_000, es, keep=None)
    fit = asy.fit_alpha(gfiter.phi_curve(model, es))
    rep = asy.verify_theorem(model, es, tr, fit, mc_results=[])
    assert rep.all_passed, rep.to_dict()
    assert [c["pass"] for c in rep.to_dict()["claims"]] == [True, True]


def test_verify_subcritical_diagnosis(chain1):
    from gwinf import meanmatrix as mm
    from gwinf.model import build_model, load_spec

    model = build_model(load_spec("chain_alpha1").replace(
        kernel={"type": "explicit", "rows": [[0.9]], "tail": [0.1]}, truncation_N=1))
    es = mm.eigen_pair(mm.build_truncated(model))
    tr = gfiter.survival_curve(model, 2000, es)
    fit = asy.AlphaFit(1.0, np.ones(1), 0.0, np.ones(1), 0.0)
    rep = asy.verify_theorem(model, es, tr, fit, mc_results=[])
    claim = rep.claims[0]
    assert not claim.passed
    assert "exponential decay" in claim.detail["diagnosis"]
