"""Row/column realizations, the composite map, and the singular-value report."""

import math

import numpy as np
import pytest

from dmlab.ensemble import (
    DRealization, GammaRealization, NumericalError, apply_D, apply_gamma,
    apply_gamma_many, draw_D, draw_gamma, dump_realizations, jacobi_eigenvalues,
    load_realizations, psi, psi_many, rho,
)
from dmlab.normspace import NormSpace, gauss_norm_closed
from dmlab.randsrc import DistributionSpec, RngStream

G3 = DistributionSpec("gaussian-iid", dim=3)
R1 = DistributionSpec("rademacher-iid", dim=1)


def eig3_closed_form(a: np.ndarray) -> np.ndarray:
    """Companion-free trigonometric roots of the characteristic cubic."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = np.trace(a) / 3.0
    p2 = sum((a[i, i] - q) ** 2 for i in range(3)) + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    if p == 0.0:
        return np.sort(np.diag(a))
    b = (a - q * np.eye(3)) / p
    r = min(1.0, max(-1.0, np.linalg.det(b) / 2.0))
    ang = math.acos(r) / 3.0
    hi = q + 2.0 * p * math.cos(ang)
    lo = q + 2.0 * p * math.cos(ang + 2.0 * math.pi / 3.0)
    return np.sort([lo, 3.0 * q - hi - lo, hi])


class TestDrawGamma:
    def test_rademacher_rows_d1(self):
        g = draw_gamma(1, 20, R1, RngStream(1, 0))
        assert set(np.unique(g.rows)) <= {-1.0, 1.0}

    def test_rejects_projection_direction(self):
        with pytest.raises(ValueError):
            draw_gamma(5, 4, DistributionSpec("gaussian-iid", dim=5), RngStream(1, 0))

    def test_deterministic(self):
        a = draw_gamma(3, 100, G3, RngStream(2, 7))
        b = draw_gamma(3, 100, G3, RngStream(2, 7))
        assert np.array_equal(a.rows, b.rows)

    def test_column_second_moments(self):
        g = draw_gamma(3, 1000, G3, RngStream(3, 0))
        assert np.all(np.abs(np.mean(g.rows**2, axis=0) - 1.0) < 0.15)


class TestApplyGamma:
    def test_zero(self):
        g = draw_gamma(3, 10, G3, RngStream(4, 0))
        assert np.all(apply_gamma(g, np.zeros(3)) == 0.0)

    def test_constant_rows(self):
        g = GammaRealization(d=1, m=16, rows=np.ones((16, 1)))
        out = apply_gamma(g, np.array([2.5]))
        assert np.allclose(out, 2.5 / 4.0, rtol=0, atol=0)

    def test_linearity(self):
        g = draw_gamma(4, 50, DistributionSpec("gaussian-iid", dim=4), RngStream(5, 0))
        gen = np.random.default_rng(0)
        u, w = gen.standard_normal(4), gen.standard_normal(4)
        lhs = apply_gamma(g, u + w)
        rhs = apply_gamma(g, u) + apply_gamma(g, w)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_unscaled_rows_identity(self):
        g = draw_gamma(3, 64, G3, RngStream(6, 0))
        u = np.array([0.3, -1.0, 2.0])
        assert np.array_equal(apply_gamma(g, u) * math.sqrt(64), g.rows @ u)


class TestDRealization:
    @pytest.mark.parametrize("kind,n,m", [("rademacher-iid", 37, 2500),
                                          ("gaussian-iid", 13, 1100)])
    def test_modes_agree(self, kind, n, m):
        z = DistributionSpec(kind, dim=n)
        mat = draw_D(n, m, z, RngStream(99, 5), mode="materialized")
        reg = draw_D(n, m, z, RngStream(99, 5), mode="regenerated")
        for j in (0, 1, 1023, 1024, m - 1):
            assert np.array_equal(mat.column(j), reg.column(j))
        y = np.random.default_rng(1).standard_normal(m)
        a, b = mat.apply(y), reg.apply(y)
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))

    def test_basis_vector_gives_column(self):
        z = DistributionSpec("rademacher-iid", dim=8)
        dr = draw_D(8, 30, z, RngStream(7, 0))
        for j in (0, 13, 29):
            e = np.zeros(30)
            e[j] = 1.0
            assert np.array_equal(apply_D(dr, e), dr.column(j))

    def test_zero_vector(self):
        dr = draw_D(8, 30, DistributionSpec("gaussian-iid", dim=8), RngStream(8, 0))
        assert np.all(apply_D(dr, np.zeros(30)) == 0.0)

    def test_regenerated_access_is_stable(self):
        z = DistributionSpec("rademacher-iid", dim=16)
        dr = draw_D(16, 3000, z, RngStream(9, 0), mode="regenerated")
        assert np.array_equal(dr.column(1500), dr.column(1500))

    def test_auto_mode_threshold(self):
        z = DistributionSpec("rademacher-iid", dim=4)
        small = draw_D(4, 100, z, RngStream(10, 0))
        assert small.mode == "materialized"

    def test_rejects_non_iid_kind(self):
        with pytest.raises(ValueError):
            draw_D(4, 8, DistributionSpec("uniform-sphere", dim=4), RngStream(0, 0))


class TestPsi:
    def test_zero_map(self):
        g = GammaRealization(d=2, m=4, rows=np.ones((4, 2)))
        z = DistributionSpec("gaussian-iid", dim=5)
        dr = DRealization(n=5, m=4, zspec=z, stream=RngStream(0, 0),
                          mode="materialized", _dense=np.zeros((5, 4)))
        sp = NormSpace.lp(math.inf, 5)
        assert psi(g, dr, sp, np.array([1.0, 0.0])) == 0.0

    def test_single_term(self):
        g = GammaRealization(d=1, m=1, rows=np.array([[1.0]]))
        col = np.zeros((4, 1))
        col[0, 0] = 1.0
        z = DistributionSpec("gaussian-iid", dim=4)
        dr = DRealization(n=4, m=1, zspec=z, stream=RngStream(0, 0),
                          mode="materialized", _dense=col)
        assert psi(g, dr, NormSpace.lp(math.inf, 4), np.array([1.0])) == 1.0

    def test_requires_unit_vector(self):
        g = draw_gamma(3, 10, G3, RngStream(11, 0))
        dr = draw_D(4, 10, DistributionSpec("gaussian-iid", dim=4), RngStream(11, 1))
        with pytest.raises(ValueError):
            psi(g, dr, NormSpace.lp(2, 4), np.array([1.0, 1.0, 0.0]))

    def test_even_in_u(self):
        g = draw_gamma(3, 40, G3, RngStream(12, 0))
        dr = draw_D(6, 40, DistributionSpec("rademacher-iid", dim=6), RngStream(12, 1))
        sp = NormSpace.lp(math.inf, 6)
        u = np.array([1.0, 2.0, -1.0])
        u /= np.linalg.norm(u)
        assert psi(g, dr, sp, u) == psi(g, dr, sp, -u)

    def test_gaussian_l2_conditional_mean_oracle(self):
        # for gaussian columns the image is ||Gamma u||_2 times a standard
        # gaussian vector, so E_Z psi(u) = ||Gamma u||_2 E||G||_2
        n, m = 64, 256
        g = draw_gamma(3, m, G3, RngStream(13, 0))
        sp = NormSpace.lp(2, n)
        z = DistributionSpec("gaussian-iid", dim=n)
        u = np.array([1.0, 0.0, 0.0])
        vals = []
        base = RngStream(13, 99)
        for k in range(500):
            dr = draw_D(n, m, z, base.child(k), mode="regenerated")
            vals.append(psi(g, dr, sp, u))
        vals = np.array(vals)
        target = np.linalg.norm(apply_gamma(g, u)) * gauss_norm_closed(sp).mean
        stderr = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - target) <= 3.0 * stderr

    def test_psi_many_matches_psi(self):
        g = draw_gamma(3, 32, G3, RngStream(14, 0))
        dr = draw_D(8, 32, DistributionSpec("rademacher-iid", dim=8), RngStream(14, 1))
        sp = NormSpace.lp(math.inf, 8)
        units = np.linalg.qr(np.random.default_rng(3).standard_normal((3, 3)))[0]
        batch = psi_many(g, dr, sp, units)
        single = [psi(g, dr, sp, units[:, j]) for j in range(3)]
        assert np.allclose(batch, single, rtol=1e-12)


class TestRho:
    def test_d1_signs(self):
        g = GammaRealization(d=1, m=8, rows=np.array([[1.0], [-1.0]] * 4))
        rep = rho(g)
        assert rep.rho == 0.0
        assert rep.lambda_min_sq == rep.lambda_max_sq == 1.0

    def test_hand_example(self):
        g = GammaRealization(d=2, m=2, rows=np.array([[1.0, 0.0], [0.0, 2.0]]))
        rep = rho(g)
        assert rep.rho == 1.0
        assert rep.lambda_min_sq == 0.5
        assert rep.lambda_max_sq == 2.0

    def test_jacobi_vs_cubic_oracle(self):
        gen = np.random.default_rng(4)
        for _ in range(40):
            b = gen.standard_normal((6, 3))
            gram = b.T @ b / 6.0
            assert np.allclose(jacobi_eigenvalues(gram), eig3_closed_form(gram),
                               atol=1e-9)

    def test_sandwich(self):
        g = draw_gamma(4, 500, DistributionSpec("gaussian-iid", dim=4), RngStream(15, 0))
        rep = rho(g)
        gen = np.random.default_rng(5)
        for _ in range(100):
            u = gen.standard_normal(4)
            u /= np.linalg.norm(u)
            sq = float(np.sum(apply_gamma(g, u) ** 2))
            assert 1.0 - rep.rho - 1e-10 <= sq <= 1.0 + rep.rho + 1e-10

    def test_desk_scale_concentration(self):
        # gaussian rows, d=3, m=30000: rho below 5 sqrt(d/m) almost always
        bound = 5.0 * math.sqrt(3.0 / 30_000.0)
        hits = 0
        for t in range(50):
            g = draw_gamma(3, 30_000, G3, RngStream(16, t))
            if rho(g).rho <= bound:
                hits += 1
        assert hits >= 48  # >= 95% of 50

    def test_non_finite_rejected(self):
        g = GammaRealization(d=1, m=2, rows=np.array([[1.0], [np.nan]]))
        with pytest.raises(NumericalError):
            rho(g)


class TestBinaryDump:
    def test_roundtrip(self, tmp_path):
        g = draw_gamma(3, 200, G3, RngStream(17, 1))
        dr = draw_D(17, 200, DistributionSpec("rademacher-iid", dim=17), RngStream(17, 2))
        path = tmp_path / "real.dmen"
        dump_realizations(path, g, dr)
        g2, dr2 = load_realizations(path)
        assert np.array_equal(g2.rows, g.rows)
        assert (g2.d, g2.m, dr2.n, dr2.m) == (3, 200, 17, 200)
        y = np.random.default_rng(6).standard_normal(200)
        assert np.array_equal(dr2.apply(y), dr.apply(y))

    def test_regenerated_dump_matches_materialized(self, tmp_path):
        g = draw_gamma(2, 50, DistributionSpec("gaussian-iid", dim=2), RngStream(18, 1))
        z = DistributionSpec("rademacher-iid", dim=9)
        mat = draw_D(9, 50, z, RngStream(18, 2), mode="materialized")
        reg = draw_D(9, 50, z, RngStream(18, 2), mode="regenerated")
        p1, p2 = tmp_path / "a.dmen", tmp_path / "b.dmen"
        dump_realizations(p1, g, mat)
        dump_realizations(p2, g, reg)
        assert p1.read_bytes() == p2.read_bytes()

    def test_gaussian_d_rejected(self, tmp_path):
        g = draw_gamma(2, 10, DistributionSpec("gaussian-iid", dim=2), RngStream(19, 1))
        dr = draw_D(4, 10, DistributionSpec("gaussian-iid", dim=4), RngStream(19, 2))
        with pytest.raises(ValueError):
            dump_realizations(tmp_path / "x.dmen", g, dr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE!" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_realizations(path)
