import numpy as np
import pytest
from scipy import integrate

from opens.cft_boson import (
    BosonParams,
    TimeParams,
    branch_points,
    build_M_boson,
    build_M_time,
    charge_distribution,
    charge_variances,
    charged_moments_ratio,
    chi_samples,
    chi_time_asymptote,
    cn_closed_form,
    coincident_interval_row,
    correction_from_parts,
    holevo_chi,
    holevo_chi_approx,
    _chi_approx_raw,
    renyi_ratio_and_mie,
    single_copy_m11,
    time_correction_samples,
    time_effective_matrix,
)
from opens.continuation import ContinuationProblem, continue_to_one
from opens.core import Geometry
from opens.errors import DomainError, RegimeWarning


def geo(L=10.0, d=20.0, l2=100.0, eps=0.5, n=1):
    return Geometry(L, L + d, L + d + l2, eps, n)


class TestBranchPoints:
    def test_n1_real(self):
        g = geo(n=1)
        (a1, b1), = branch_points(g)
        assert a1 == pytest.approx(g.a / (g.a - g.L))
        assert b1 == pytest.approx(g.b / (g.b - g.L))
        assert a1.real > 1.0 and b1.real > 1.0

    def test_n2_a_twice_L(self):
        g = Geometry(10.0, 20.0, 50.0, 0.5, 2)
        pts = branch_points(g)
        assert pts[0][0] == pytest.approx(np.sqrt(2.0))
        assert pts[1][0] == pytest.approx(-np.sqrt(2.0))

    def test_matches_direct_map_evaluation(self):
        g = Geometry(10.0, 30.0, 50.0, 0.5, 4)
        pts = branch_points(g)
        for k, (ak, bk) in enumerate(pts):
            phase = np.exp(2j * np.pi * k / 4)
            assert ak == pytest.approx(phase * (g.a / (g.a - g.L)) ** 0.25)
            assert bk == pytest.approx(phase * (g.b / (g.b - g.L)) ** 0.25)


class TestBuildM:
    def test_n1_independent_evaluation(self):
        g = geo(n=1)
        # -2 log |a_reg b_reg / (a1 - b1)^2| evaluated from scratch
        u = lambda z: z / (z - g.L)
        areg = -2 * g.eps * g.L / (g.a**2 - g.a * g.L) * u(g.a)
        breg = -2 * g.eps * g.L / (g.b**2 - g.b * g.L) * u(g.b)
        expected = -2.0 * np.log(abs(areg * breg / (u(g.a) - u(g.b)) ** 2))
        assert build_M_boson(g).m11 == pytest.approx(expected, rel=1e-12)

    def test_coincident_limit_matches_printed_value(self):
        # A = B limit at n=2, L=100, eps=1: L-dependent part 2 log 100 = 9.2103
        row = coincident_interval_row(100.0, 1.0, 2)
        assert row[0] == pytest.approx(2.0 * np.log(100.0), abs=1e-3)

    def test_coincident_limit_slope(self):
        # the (4/n) log(L/eps) behavior is asymptotic, with 1/log(L)
        # corrections for n >= 3, so the fit window sits at large L
        for n in (2, 3, 4):
            Ls = np.geomspace(1e6, 1e12, 4)
            rows = np.array([coincident_interval_row(L, 1.0, n) for L in Ls])
            for col in range(n):
                slope = np.polyfit(np.log(Ls), rows[:, col], 1)[0]
                assert slope == pytest.approx(4.0 / n, rel=0.01)

    def test_palindromic_and_psd(self):
        g = geo(n=6)
        rm = build_M_boson(g)
        row = np.asarray(rm.circulant.row)
        assert np.array_equal(row[1:], row[1:][::-1])
        assert np.linalg.eigvalsh(rm.dense()).min() > -1e-8

    def test_warns_when_diagonal_not_dominant(self):
        # B hugging A with a coarse cutoff: the off-diagonal coupling wins
        g = Geometry(10.0, 10.0001, 110.0, 10.0, 2)
        with pytest.warns(RegimeWarning):
            build_M_boson(g)

    def test_row_sum_identity_exact(self):
        g = geo(L=7.0, d=13.0, l2=211.0, eps=0.05, n=5)
        total = np.sum(build_M_boson(g).circulant.row)
        assert total == pytest.approx(4.0 * np.log(g.ell2 / (2 * g.eps)), rel=1e-13)


class TestChargedMoments:
    def test_zero_flux_is_one(self):
        g = geo(n=3)
        assert charged_moments_ratio(g, BosonParams(1.3), [0.0, 0.0, 0.0]) == 1.0

    def test_single_replica_reduction(self):
        g = geo(n=1)
        K, gam = 0.8, 0.6
        expected = np.exp(-K * gam**2 * build_M_boson(g).m11 / (8 * np.pi**2))
        assert charged_moments_ratio(g, BosonParams(K), [gam]) == pytest.approx(expected, rel=1e-12)

    def test_two_replica_log_ratio(self):
        g = geo(n=2)
        M = build_M_boson(g).dense()
        p = BosonParams(1.0)
        gam = 0.9
        lr_minus = np.log(charged_moments_ratio(g, p, [gam, -gam]))
        lr_plus = np.log(charged_moments_ratio(g, p, [gam, gam]))
        assert lr_minus / lr_plus == pytest.approx(
            (M[0, 0] - M[0, 1]) / (M[0, 0] + M[0, 1]), rel=1e-10
        )


class TestCn:
    def test_printed_value(self):
        g = Geometry(10.0, 30.0, 230.0, 0.5, 2)
        assert cn_closed_form(g) == pytest.approx(2.0 / (4.0 * np.log(200.0)), rel=1e-12)
        assert cn_closed_form(g) == pytest.approx(0.09437, abs=5e-5)

    def test_L_independence_bitwise(self):
        a, b, eps = 40.0, 140.0, 0.3
        vals = {cn_closed_form(Geometry(L, a, b, eps, 3)) for L in (5.0, 10.0, 20.0)}
        assert len(vals) == 1

    def test_numeric_exact_in_leading_mode(self):
        g = geo(l2=150.0, eps=0.01, n=4)
        assert build_M_boson(g).cn_numeric() == pytest.approx(cn_closed_form(g), rel=1e-12)

    def test_numeric_converges_in_exact_mode(self):
        L, d, l2 = 10.0, 20.0, 100.0
        rels = []
        for ratio in (1e-2, 1e-3, 1e-4):
            g = Geometry(L, L + d, L + d + l2, l2 * ratio, 5)
            num = build_M_boson(g, exact_reg=True).cn_numeric()
            rels.append(abs(num - cn_closed_form(g)) / cn_closed_form(g))
        assert rels[0] > rels[1] > rels[2]
        assert rels[2] < 1e-3

    def test_domain_error(self):
        with pytest.warns(Warning):
            g = Geometry(10.0, 20.0, 20.5, 0.3, 2)
        with pytest.raises(DomainError):
            cn_closed_form(g)


class TestRenyiRatio:
    def test_artificial_diagonal_matrix(self):
        # det M = m11^n when the circulant is diagonal: ratio 1, correction 0
        m11, n = 7.3, 4
        corr = correction_from_parts(np.log(m11), n * np.log(m11), n)
        assert corr == 0.0

    def test_against_direct_algebra(self):
        g = Geometry(100.0, 600.0, 1600.0, 0.5, 1)
        ratio, corr = renyi_ratio_and_mie(g, 2)
        M = build_M_boson(g.with_n(2)).dense()
        m1 = single_copy_m11(g)
        direct = 0.5 * np.log(np.linalg.det(M) / m1**2)
        assert corr == pytest.approx(direct, rel=1e-10)
        assert corr < 0.0
        assert ratio == pytest.approx(np.exp(-direct), rel=1e-10)

    def test_correction_shrinks_with_distance(self):
        L, l2 = 10.0, 100.0
        mags = []
        for d in (5.0, 20.0, 80.0, 320.0):
            g = Geometry(L, L + d, L + d + l2, 0.5, 1)
            mags.append(abs(renyi_ratio_and_mie(g, 2)[1]))
        assert mags == sorted(mags, reverse=True)

    def test_correction_negative_everywhere(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            L = rng.uniform(1.0, 50.0)
            d = rng.uniform(0.5, 100.0)
            l2 = rng.uniform(5.0, 1000.0)
            g = Geometry(L, L + d, L + d + l2, 0.2, 1)
            n = int(rng.integers(2, 7))
            assert renyi_ratio_and_mie(g, n)[1] <= 0.0


class TestHolevo:
    def test_constant_samples_continuation(self):
        res = continue_to_one(ContinuationProblem([(n, 0.42) for n in range(2, 7)]))
        assert res.value == pytest.approx(0.42, abs=1e-12)

    def test_rises_then_falls(self):
        l2s = np.geomspace(10.0, 1e5, 13)
        chis = [holevo_chi(geo(L=10.0, d=10.0, l2=l2)) for l2 in l2s]
        peak = int(np.argmax(chis))
        assert 0 < peak < len(chis) - 1
        assert chis[0] < chis[peak] and chis[-1] < chis[peak]
        assert all(c > 0 for c in chis)

    def test_matches_approx_at_large_distance(self):
        g = Geometry(100.0, 600.0, 10600.0, 0.5, 1)
        chi = holevo_chi(g)
        assert chi == pytest.approx(holevo_chi_approx(g), rel=0.05)

    def test_approx_against_derivative_oracle(self):
        # independent route: chi ~ -a0'(1) / (2 a0(1)) via central differences
        g = Geometry(100.0, 600.0, 1600.0, 0.5, 1)

        def a0(n):
            u = (g.a / (g.a - g.L)) ** (1 / n)
            v = (g.b / (g.b - g.L)) ** (1 / n)
            areg = 2 * g.eps * g.L * u / (g.a * n * (g.a - g.L))
            breg = 2 * g.eps * g.L * v / (g.b * n * (g.b - g.L))
            return -np.log((areg * breg / (u - v) ** 2) ** 2)

        h = 1e-6
        deriv = (a0(1 + h) - a0(1 - h)) / (2 * h)
        assert holevo_chi_approx(g) == pytest.approx(-deriv / (2 * a0(1.0)), rel=1e-6)
        # the verbatim source expression carries an extra factor of -2
        assert _chi_approx_raw(g) == pytest.approx(-2.0 * holevo_chi_approx(g), rel=1e-12)

    def test_samples_are_positive_and_match_corrections(self):
        g = geo()
        for n, val in chi_samples(g, 6):
            assert val > 0
            assert val == pytest.approx(-renyi_ratio_and_mie(g, n)[1], rel=1e-12)


class TestChargeDistribution:
    def test_symmetry_and_normalization(self):
        g, p = geo(), BosonParams(1.4)
        qs = np.linspace(-40, 40, 11)
        assert np.allclose(charge_distribution(g, p, qs), charge_distribution(g, p, -qs))
        total, _ = integrate.quad(lambda q: charge_distribution(g, p, q), -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_variance_from_generating_function(self):
        # Fourier-transform oracle: second moment of the density built by
        # numerically transforming exp(-K gamma^2 m11 / (8 pi^2))
        g, p = geo(), BosonParams(0.7)
        m11 = single_copy_m11(g)
        gen = lambda gam: np.exp(-p.K * gam**2 * m11 / (8 * np.pi**2))
        density = lambda q: integrate.quad(
            gen, 0, np.inf, weight="cos", wvar=q
        )[0] / np.pi
        grid = np.linspace(0, 30, 400)
        vals = np.array([density(q) for q in grid])
        norm = 2 * np.trapezoid(vals, grid)
        second = 2 * np.trapezoid(grid**2 * vals, grid) / norm
        expected = charge_variances(g, p)["gaussian"]
        assert second == pytest.approx(expected, rel=1e-6)
        assert expected == pytest.approx(p.K * m11 / (4 * np.pi**2), rel=1e-12)


class TestTimeDependence:
    def test_zero_time_limit(self):
        g = geo(n=1)
        tp = TimeParams(0.0, 1e-8)
        samples = time_correction_samples(g, tp, n_max=4, dps=30)
        for n, val in samples:
            _, corr = renyi_ratio_and_mie(g, n)
            assert val == pytest.approx(-corr, rel=1e-3)

    def test_block_structure(self):
        g = geo(n=3)
        tp = TimeParams(5.0, 1e-4)
        M = build_M_time(g, tp)
        assert M.shape == (6, 6)
        assert np.abs(M[:3, 3:]).max() == 0.0
        eff = time_effective_matrix(g, tp)
        assert np.allclose(eff, M[:3, :3] + M[3:, 3:], rtol=1e-12)
        assert np.allclose(eff, eff.T, rtol=1e-12)

    def test_large_time_slope(self):
        g = Geometry(10.0, 15.0, 25.0, 0.5, 1)
        tp = lambda t: TimeParams(t, 1e-3)
        ts = np.geomspace(1e3, 1e5, 5)
        chis = []
        for t in ts:
            res = continue_to_one(
                ContinuationProblem(time_correction_samples(g, tp(t), 8, dps=50))
            )
            chis.append(res.value)
        slope = np.polyfit(np.log(ts), np.log(chis), 1)[0]
        assert slope == pytest.approx(-4.0, abs=0.05)

    def test_asymptote_coefficient(self):
        g = Geometry(10.0, 20.0, 120.0, 0.5, 1)
        t = 1e6
        res = continue_to_one(
            ContinuationProblem(time_correction_samples(g, TimeParams(t, 1e-3), 8, dps=60))
        )
        assert res.value == pytest.approx(chi_time_asymptote(g, t), rel=0.01)
