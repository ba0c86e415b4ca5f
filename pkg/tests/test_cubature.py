import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sigmaest.cubature import (
    UT,
    GaussHermite,
    SingularMomentSystem,
    Symmetric,
    build_rule,
    expect,
    gauss_hermite_1d,
    parse_scheme,
    point_count,
    sigma_points,
    solve_symmetric_weights,
)

ALL_SPECS = ["sym3", "sym5", "sym7", "sym9", "gh(2)", "gh(3)", "gh(4)", "ut(1,0,0)", "ut(0.5,2,1)"]


def _max_moment_error(rule):
    worst = 0.0
    for alpha in oracles.monomials(rule.dim, rule.degree):
        vals = np.prod(rule.points ** np.array(alpha), axis=1)
        worst = max(worst, abs(rule.mean_weights @ vals - oracles.gaussian_moment(alpha)))
    return worst


class TestParse:
    def test_grammar(self):
        assert parse_scheme("sym7") == Symmetric(7)
        assert parse_scheme("gh(5)") == GaussHermite(5)
        assert parse_scheme("ut(1,0,0)") == UT(1.0, 0.0, 0.0)
        assert parse_scheme(" UT(0.5, 2, -1) ") == UT(0.5, 2.0, -1.0)

    @pytest.mark.parametrize("bad", ["sym4", "sym11", "gh(0)", "ut(1,0)", "cubature", ""])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            parse_scheme(bad)

    def test_roundtrip_str(self):
        for s in ["sym3", "sym9", "gh(7)"]:
            assert str(parse_scheme(s)) == s
        assert parse_scheme(str(UT(0.5, 2.0, 1.0))) == UT(0.5, 2.0, 1.0)


class TestBuildRule:
    def test_sym3_2d(self):
        r = build_rule("sym3", 2)
        s2 = np.sqrt(2.0)
        expected = {(s2, 0.0), (-s2, 0.0), (0.0, s2), (0.0, -s2)}
        assert {tuple(np.round(p, 12)) for p in r.points} == {tuple(np.round(p, 12)) for p in expected}
        np.testing.assert_allclose(r.mean_weights, 0.25)

    def test_ut_default_reduces_to_sym3_plus_center(self):
        r = build_rule("ut(1,0,0)", 2)
        assert r.size == 5
        center = np.all(r.points == 0.0, axis=1)
        assert center.sum() == 1
        assert r.mean_weights[center][0] == 0.0
        np.testing.assert_allclose(r.mean_weights[~center], 0.25)

    def test_ut_cov_weights_differ(self):
        r = build_rule(UT(0.5, 2.0, 0.0), 3)
        center = np.all(r.points == 0.0, axis=1)
        lam = 0.25 * 3 - 3
        assert r.mean_weights[center][0] == pytest.approx(lam / (3 + lam))
        assert r.cov_weights[center][0] == pytest.approx(lam / (3 + lam) + 1 - 0.25 + 2.0)
        np.testing.assert_array_equal(r.mean_weights[~center], r.cov_weights[~center])

    def test_sym5_2d_weights(self):
        r = build_rule("sym5", 2)
        s3 = np.sqrt(3.0)
        by_point = {tuple(np.round(p, 10)): w for p, w in zip(r.points, r.mean_weights)}
        assert by_point[(0.0, 0.0)] == pytest.approx(4 / 9, abs=1e-14)
        assert by_point[(round(s3, 10), 0.0)] == pytest.approx(1 / 9, abs=1e-14)
        assert by_point[(round(s3, 10), round(-s3, 10))] == pytest.approx(1 / 36, abs=1e-14)

    def test_sym7_axis_radii(self):
        r = build_rule("sym7", 2)
        axis = np.unique(np.round(np.abs(r.points[r.points[:, 1] == 0.0, 0]), 5))
        np.testing.assert_allclose(sorted(axis[axis > 0]), [0.74196, 2.33441], atol=1e-5)

    def test_sym9_axis_radii(self):
        r = build_rule("sym9", 2)
        axis = np.unique(np.round(np.abs(r.points[r.points[:, 1] == 0.0, 0]), 5))
        np.testing.assert_allclose(sorted(axis[axis > 0]), [1.35563, 2.85697], atol=1e-5)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            build_rule("sym5", 0)
        with pytest.raises(ValueError):
            Symmetric(4)
        with pytest.raises(ValueError):
            # alpha^2 (n + kappa) = 0 makes the weights singular
            build_rule(UT(1.0, 0.0, -2.0), 2)

    def test_cached_and_immutable(self):
        a = build_rule("sym5", 3)
        assert build_rule(Symmetric(5), 3) is a
        with pytest.raises(ValueError):
            a.points[0, 0] = 1.0


class TestPointCount:
    @pytest.mark.parametrize(
        "spec,counts",
        [
            ("sym5", [3, 9, 19, 33, 51, 73, 99, 129, 163]),
            ("sym7", [5, 17, 45, 97, 181, 305, 477, 705, 997]),
            ("sym9", [5, 25, 77, 193, 421, 825, 1485, 2497, 3973]),
            ("ut(1,0,0)", [3, 5, 7, 9, 11, 13, 15, 17, 19]),
            ("sym3", [2, 4, 6, 8, 10, 12, 14, 16, 18]),
        ],
    )
    def test_table(self, spec, counts):
        assert [point_count(parse_scheme(spec), n) for n in range(1, 10)] == counts

    def test_examples(self):
        assert point_count(Symmetric(7), 5) == 181
        assert point_count(GaussHermite(3), 5) == 243
        assert point_count(Symmetric(9), 2) == 25

    @pytest.mark.parametrize("spec", ALL_SPECS)
    def test_matches_built_rule(self, spec):
        for n in range(1, 5):
            assert build_rule(spec, n).size == point_count(parse_scheme(spec), n)


class TestExactness:
    @pytest.mark.parametrize("spec", ALL_SPECS)
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_monomials(self, spec, n):
        assert _max_moment_error(build_rule(spec, n)) < 1e-9

    def test_gauss_hermite_1d_degree(self):
        x, w = gauss_hermite_1d(6)
        for a in range(12):
            assert w @ x**a == pytest.approx(oracles.gaussian_moment((a,)), abs=1e-9)

    @pytest.mark.parametrize("spec", ["sym3", "sym5", "sym7", "sym9", "gh(3)"])
    def test_symmetry(self, spec):
        r = build_rule(spec, 3)
        pts = {tuple(np.round(p, 12)): w for p, w in zip(r.points, r.mean_weights)}
        for p, w in pts.items():
            assert pts[tuple(-np.array(p) + 0.0)] == pytest.approx(w, abs=1e-15)
        for j in range(3):
            assert abs(r.mean_weights @ r.points[:, j] ** 3) < 1e-12

    def test_weights_sum_to_one(self):
        for spec in ALL_SPECS:
            for n in range(1, 6):
                assert abs(build_rule(spec, n).mean_weights.sum() - 1.0) < 1e-12


class TestSolveWeights:
    def test_1d_order5(self):
        gens, w = solve_symmetric_weights(1, 5)
        assert gens == [(), (np.sqrt(3.0),)]
        np.testing.assert_allclose(w, [2 / 3, 1 / 6], atol=1e-14)

    def test_2d_center(self):
        gens, w = solve_symmetric_weights(2, 5)
        assert w[gens.index(())] == pytest.approx(4 / 9, abs=1e-14)

    def test_sym9_2d_nonnegative(self):
        _, w = solve_symmetric_weights(2, 9)
        assert np.all(w >= 0)

    def test_sym5_negative_weight_from_five_dimensions(self):
        for n in (1, 2, 3, 4):
            assert np.all(solve_symmetric_weights(n, 5)[1] >= -1e-15)
        _, w = solve_symmetric_weights(5, 5)
        assert np.min(w) < 0

    def test_error_type(self):
        assert issubclass(SingularMomentSystem, ValueError)
        with pytest.raises(ValueError):
            solve_symmetric_weights(2, 4)


class TestExpect:
    def test_examples(self):
        one = np.eye(1)
        zero = np.zeros(1)
        assert expect(build_rule("sym3", 1), zero, one, lambda x: x[:, 0] ** 2) == pytest.approx(1.0)
        assert expect(build_rule("sym5", 1), zero, one, lambda x: x[:, 0] ** 4) == pytest.approx(3.0)
        assert expect(build_rule("sym5", 1), zero, one, lambda x: x[:, 0] ** 6) == pytest.approx(9.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            expect(build_rule("sym3", 2), np.zeros(3), np.eye(3), lambda x: x)
        with pytest.raises(ValueError):
            sigma_points(build_rule("sym3", 2), np.zeros(2), np.eye(3))

    def test_cov_weight_flag(self):
        r = build_rule("ut(0.5,2,0)", 2)
        m = np.array([1.0, -2.0])
        L = np.array([[1.0, 0.0], [0.3, 0.5]])
        v = expect(r, m, L, lambda x: np.ones(len(x)), cov_weights=True)
        assert v == pytest.approx(r.cov_weights.sum())

    @settings(max_examples=40, deadline=None)
    @given(
        spec=st.sampled_from(ALL_SPECS),
        n=st.integers(1, 4),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_affine_consistency(self, spec, n, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=n)
        L = np.tril(rng.normal(size=(n, n)))
        A = rng.normal(size=(3, n))
        b = rng.normal(size=3)
        got = expect(build_rule(spec, n), m, L, lambda x: x @ A.T + b)
        np.testing.assert_allclose(got, A @ m + b, atol=1e-12 * (1 + np.abs(A).sum() * (1 + np.abs(m).max())))


class TestSubset:
    def test_sym5_inside_gh3_in_5d(self):
        s5 = build_rule("sym5", 5)
        gh = build_rule("gh(3)", 5)
        gh_pts = {tuple(np.round(p, 10)): w for p, w in zip(gh.points, gh.mean_weights)}
        shared = [tuple(np.round(p, 10)) for p in s5.points]
        assert all(p in gh_pts for p in shared)
        assert sum(gh_pts[p] for p in shared) == pytest.approx(0.79, abs=0.005)
