"""Norm oracles, dual radii, gaussian mean norms, critical dimension, phi."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dmlab.normspace import (
    CritDimEstimate, GaussNormEstimate, NormSpace, critical_dimension, dual_radius,
    expected_gauss_norm, gauss_norm_closed, gauss_norm_mc, gauss_norm_quadrature,
    norm, norm_many, phi,
)
from dmlab.randsrc import RngStream

LINF_4096_EG = 3.802295320964086   # quadrature oracle, abs tol 1e-6 + tail


class TestNorm:
    def test_linf(self):
        assert norm(NormSpace.lp(math.inf, 3), np.array([1.0, -2.0, 3.0])) == 3.0

    def test_l2_basis(self):
        assert norm(NormSpace.lp(2, 4), np.eye(4)[0]) == 1.0

    def test_max_dot(self):
        sp = NormSpace.max_dot([[1.0, 1.0], [1.0, -1.0]])
        assert norm(sp, np.array([2.0, 1.0])) == 3.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            norm(NormSpace.lp(2, 3), np.zeros(4))

    def test_max_dot_must_span(self):
        with pytest.raises(ValueError):
            NormSpace.max_dot([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        with pytest.raises(ValueError):
            NormSpace.max_dot([[0.0, 0.0], [1.0, 1.0]])

    def test_duality_spot_check(self):
        # max-dot norm equals the support function of the hull of +-rows,
        # which is attained at a vertex; enumerate them.  BLAS matvec and
        # per-row dots reduce in different orders, hence the 2-ulp guard.
        gen = np.random.default_rng(0)
        rows = gen.standard_normal((6, 3))
        sp = NormSpace.max_dot(rows)
        for _ in range(50):
            x = gen.standard_normal(3)
            hull_sup = max(max(float(r @ x), float(-r @ x)) for r in rows)
            assert norm(sp, x) == pytest.approx(hull_sup, rel=4e-16)

    def test_norm_many_matches_scalar(self):
        gen = np.random.default_rng(1)
        cols = gen.standard_normal((5, 7))
        for sp in (NormSpace.lp(1, 5), NormSpace.lp(math.inf, 5),
                   NormSpace.lp(2.5, 5), NormSpace.max_dot(gen.standard_normal((6, 5)))):
            batch = norm_many(sp, cols)
            single = [norm(sp, cols[:, j]) for j in range(7)]
            assert np.allclose(batch, single, rtol=1e-14)


@given(
    x=arrays(np.float64, 4, elements=st.floats(-100, 100)),
    y=arrays(np.float64, 4, elements=st.floats(-100, 100)),
    lam=st.floats(-50, 50),
    p=st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf]),
)
def test_norm_axioms(x, y, lam, p):
    sp = NormSpace.lp(p, 4)
    scale = max(norm(sp, x), norm(sp, y), 1.0)
    assert norm(sp, x + y) <= norm(sp, x) + norm(sp, y) + 1e-10 * scale
    assert norm(sp, lam * x) == pytest.approx(abs(lam) * norm(sp, x), rel=1e-10, abs=1e-12)


class TestDualRadius:
    def test_linf(self):
        assert dual_radius(NormSpace.lp(math.inf, 10)) == 1.0

    def test_l1(self):
        assert dual_radius(NormSpace.lp(1, 4)) == 2.0

    def test_l4(self):
        assert dual_radius(NormSpace.lp(4, 9)) == 1.0

    def test_intermediate_p(self):
        # dual exponent of p=1.5 is q=3: radius n^(1/2 - 1/3)
        assert dual_radius(NormSpace.lp(1.5, 64)) == pytest.approx(64 ** (1 / 6), rel=1e-12)

    def test_max_dot(self):
        sp = NormSpace.max_dot([[3.0, 4.0], [1.0, 0.0]])
        assert dual_radius(sp) == 5.0


class TestGaussNorm:
    def test_l1_closed_form(self):
        est = gauss_norm_closed(NormSpace.lp(1, 100))
        assert est.mean == pytest.approx(79.78845608028654, rel=1e-12)
        assert est.stderr == 0.0

    def test_l2_classical_bounds_and_mc(self):
        sp = NormSpace.lp(2, 100)
        closed = gauss_norm_closed(sp)
        assert 99.0 <= closed.mean**2 <= 100.0
        mc = gauss_norm_mc(sp, 100_000, RngStream(21, 0))
        assert 99.0 <= mc.mean**2 <= 100.0
        assert abs(mc.mean - closed.mean) <= 3.0 * mc.stderr

    def test_linf_quadrature_vs_mc(self):
        sp = NormSpace.lp(math.inf, 4096)
        quad = gauss_norm_quadrature(sp)
        assert quad.mean == pytest.approx(LINF_4096_EG, abs=1e-5)
        mc = gauss_norm_mc(sp, 30_000, RngStream(22, 0))
        assert abs(mc.mean - quad.mean) <= 3.0 * (mc.stderr + quad.stderr)

    def test_dispatch(self):
        assert expected_gauss_norm(NormSpace.lp(1, 8), 10, RngStream(0, 0)).method == "closed-form"
        assert expected_gauss_norm(NormSpace.lp(math.inf, 8), 10, RngStream(0, 0)).method == "quadrature"
        sp = NormSpace.max_dot(np.eye(3))
        assert expected_gauss_norm(sp, 100, RngStream(0, 0)).method == "monte-carlo"

    def test_mc_needs_two_samples(self):
        with pytest.raises(ValueError):
            gauss_norm_mc(NormSpace.lp(2, 3), 1, RngStream(0, 0))

    def test_consistency_quadrupling_halves_stderr(self):
        sp = NormSpace.lp(3, 50)
        ratios = []
        for s in range(5):
            small = gauss_norm_mc(sp, 2000, RngStream(s, 1)).stderr
            big = gauss_norm_mc(sp, 8000, RngStream(s, 2)).stderr
            ratios.append(big / small)
        assert all(0.4 <= r <= 0.6 for r in ratios)


class TestCriticalDimension:
    def test_l1_analytic(self):
        sp = NormSpace.lp(1, 512)
        est = critical_dimension(sp, gauss_norm_closed(sp))
        assert est.value == pytest.approx(2 * 512 / math.pi, rel=1e-12)
        assert est.stderr == 0.0

    def test_l2(self):
        sp = NormSpace.lp(2, 100)
        est = critical_dimension(sp, gauss_norm_closed(sp))
        assert 99.0 <= est.value <= 100.0

    def test_linf_4096(self):
        sp = NormSpace.lp(math.inf, 4096)
        est = critical_dimension(sp, gauss_norm_quadrature(sp))
        assert 14.0 <= est.value <= 18.0

    def test_log_growth(self):
        for k in (10, 12, 14):
            sp = NormSpace.lp(math.inf, 2**k)
            est = critical_dimension(sp, gauss_norm_quadrature(sp))
            assert 0.6 <= est.value / (2 * math.log(2**k)) <= 1.1

    def test_stderr_propagation(self):
        gauss = GaussNormEstimate(mean=10.0, stderr=0.1, samples=100, method="monte-carlo")
        est = critical_dimension(NormSpace.lp(2, 4), gauss)
        assert est.value == 100.0
        assert est.stderr == pytest.approx(2.0, rel=1e-12)


class TestPhi:
    def test_r_equals_m(self):
        sp = NormSpace.lp(2, 16)
        gauss = gauss_norm_closed(sp)
        assert phi(sp, gauss, 16, 16) == pytest.approx(gauss.mean + 1.0, rel=1e-12)
        assert phi(sp, gauss, 16, 16, scale=2.5) == pytest.approx(
            2.5 * (gauss.mean + 1.0), rel=1e-12)

    def test_nonincreasing_in_r(self):
        sp = NormSpace.lp(1, 16)
        gauss = gauss_norm_closed(sp)
        vals = [phi(sp, gauss, r, 128) for r in range(1, 129)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_linf_value(self):
        # quadrature E||G||_inf at n=4096 plus sqrt(1 + ln 1024) exactly
        sp = NormSpace.lp(math.inf, 4096)
        gauss = gauss_norm_quadrature(sp)
        expected = LINF_4096_EG + math.sqrt(math.log(math.e * 16384 / 16))
        assert phi(sp, gauss, 16, 16384) == pytest.approx(expected, abs=1e-4)

    def test_r_out_of_range(self):
        sp = NormSpace.lp(2, 4)
        gauss = gauss_norm_closed(sp)
        with pytest.raises(ValueError):
            phi(sp, gauss, 0, 8)
        with pytest.raises(ValueError):
            phi(sp, gauss, 9, 8)
