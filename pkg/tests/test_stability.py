import itertools

import numpy as np
import pytest

from polystab import (
    Domain,
    EigenvalueError,
    build_family,
    certify,
    char_poly,
    eigenvalues,
    hurwitz_report,
    hurwitz_stable,
    parse_system,
    search_certificate,
    spectral_report,
)
from polystab.stability import SampledFamily, margin_of, sample_family, sample_stats

from test_poly import CUBIC_EXAMPLE

A0 = np.array([[0.0, 1.0], [-1.0, 0.0]])


class TestCharPoly:
    def test_rotation_matrix(self):
        np.testing.assert_allclose(char_poly(A0), [1.0, 0.0], atol=1e-15)

    def test_identity(self):
        np.testing.assert_allclose(char_poly(np.eye(2)), [1.0, -2.0])

    def test_random_against_eigenvalue_oracle(self):
        rng = np.random.default_rng(61)
        for _ in range(50):
            A = rng.normal(size=(4, 4))
            mine = char_poly(A)
            # np.poly expands prod(lambda - lambda_i) from a QR eigensolve.
            oracle = np.poly(np.linalg.eigvals(A))
            np.testing.assert_allclose(mine, oracle[1:][::-1].real, rtol=1e-8, atol=1e-8)

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(67)
        stack = rng.normal(size=(10, 3, 3))
        batch = char_poly(stack)
        for k in range(10):
            np.testing.assert_allclose(batch[k], char_poly(stack[k]), rtol=1e-12)

    def test_non_finite_entry(self):
        with pytest.raises(ValueError, match="finite"):
            char_poly(np.array([[np.inf, 0.0], [0.0, 1.0]]))


class TestHurwitz:
    def test_stable_quadratic(self):
        assert hurwitz_stable([2.0, 3.0])  # roots -1, -2

    def test_marginal_oscillator(self):
        report = hurwitz_report([1.0, 0.0])
        assert not report.stable
        assert report.marginal

    def test_quadratic_reduces_to_sign_conditions(self):
        rng = np.random.default_rng(71)
        for _ in range(200):
            c0, c1 = rng.uniform(-3, 3, 2)
            if min(abs(c0), abs(c1)) < 1e-6:
                continue
            assert hurwitz_stable([c0, c1]) == (c0 > 0 and c1 > 0)

    def test_against_eigenvalue_oracle(self):
        rng = np.random.default_rng(73)
        checked = 0
        while checked < 1000:
            n = int(rng.integers(1, 6))
            A = rng.normal(size=(n, n))
            max_re = np.linalg.eigvals(A).real.max()
            if abs(max_re) < 1e-6:
                continue
            assert hurwitz_stable(char_poly(A)) == (max_re < 0)
            checked += 1


class TestEigenvalues:
    def test_rotation(self):
        lam = eigenvalues(A0)
        np.testing.assert_allclose(sorted(lam.imag), [-1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(lam.real, 0.0, atol=1e-12)

    def test_diagonal(self):
        lam = eigenvalues(np.diag([-1.0, -2.0]))
        np.testing.assert_allclose(sorted(lam.real), [-2.0, -1.0], rtol=1e-12)

    def test_defective_double_root(self):
        lam = eigenvalues(np.array([[-1.0, 1.0], [0.0, -1.0]]))
        np.testing.assert_allclose(lam, [-1.0, -1.0], atol=1e-4)

    def test_error_carries_best_residual(self):
        A = np.random.default_rng(79).normal(size=(4, 4))
        with pytest.raises(EigenvalueError) as err:
            eigenvalues(A, residual_tol=0.0)
        assert err.value.best_residual >= 0.0

    def test_spectral_report_consistency(self):
        rng = np.random.default_rng(83)
        for _ in range(200):
            n = int(rng.integers(1, 6))
            A = rng.normal(size=(n, n))
            report = spectral_report(A)
            if abs(report.max_real) < 1e-6:
                continue
            assert report.hurwitz_stable == (report.max_real < 0)


class TestDomain:
    def test_delta_excludes_origin_ball(self):
        d = Domain(kind="ball", radius=1.0, delta=0.2)
        pts = d.sample_points(2, np.random.default_rng(0))
        assert np.all(np.linalg.norm(pts, axis=1) > 0.2)
        assert np.all(np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12)

    def test_box_sampling(self):
        d = Domain(kind="box", half_widths=(1.0, 2.0))
        pts = d.sample_points(2, np.random.default_rng(0))
        assert np.all(np.abs(pts[:, 0]) <= 1.0 + 1e-12)
        assert np.all(np.abs(pts[:, 1]) <= 2.0 + 1e-12)

    def test_origin_must_be_interior(self):
        d = Domain(kind="ball", radius=1.0, center=(2.0, 0.0))
        with pytest.raises(ValueError, match="interior"):
            d.validate(2)

    def test_delta_smaller_than_inradius(self):
        d = Domain(kind="ball", radius=0.5, delta=0.6)
        with pytest.raises(ValueError, match="delta"):
            d.validate(1)

    def test_refined_contains_coarse_grid(self):
        d = Domain(kind="box", half_widths=(1.0,), grid=11, random_samples=0)
        fine = d.refined_for(1)
        coarse_pts = d.sample_points(1, np.random.default_rng(0))
        fine_pts = fine.sample_points(1, np.random.default_rng(0))
        for p in coarse_pts:
            assert np.min(np.abs(fine_pts - p)) < 1e-12

    def test_json_roundtrip(self):
        d = Domain(kind="ball", radius=0.5, delta=0.01, grid=7)
        assert Domain.from_json(d.to_json()) == d
        d2 = Domain.from_json('{"ball": {"r": 0.5}}')
        assert d2.radius == 0.5

    def test_default_grid_depends_on_dimension(self):
        d = Domain(kind="ball", radius=1.0)
        assert d.grid_for(2) == 11
        assert d.grid_for(4) == 5


class TestCertify:
    def test_scalar_decay(self):
        fam = build_family(parse_system("x1' = -x1"))
        cert = certify(fam, [], Domain(kind="box", half_widths=(2.0,)))
        assert cert.verdict == "certified-on-samples"
        np.testing.assert_allclose(cert.margin, -1.0)

    def test_harmonic_oscillator_is_marginal(self):
        fam = build_family(parse_system("x1' = x2; x2' = -x1"))
        cert = certify(fam, [], Domain(kind="ball", radius=1.0))
        assert cert.verdict != "certified-on-samples"
        assert abs(cert.margin) < 1e-9

    def test_unstable_scalar_refuted_with_counterexample(self):
        fam = build_family(parse_system("x1' = x1"))
        cert = certify(fam, [], Domain(kind="box", half_widths=(1.0,)))
        assert cert.verdict == "refuted"
        assert cert.counterexample is not None

    def test_cubic_damping_certified(self):
        # x' = A x - x * ||x||^2 with a stable constant part.
        f = parse_system(
            "x1' = -0.5*x1 + x2 - x1^3 - x1*x2^2;"
            "x2' = -x1 - 0.5*x2 - x1^2*x2 - x2^3"
        )
        fam = build_family(f)
        domain = Domain(kind="ball", radius=1.0)
        cert = certify(fam, fam.baseline_theta(), domain)
        assert cert.verdict == "certified-on-samples"
        # margin agrees with a double-resolution sampling within 5%
        fine = certify(
            fam, fam.baseline_theta(), domain.refined_for(2), seed=3,
            random_samples=1024,
        )
        assert abs(fine.margin - cert.margin) < 0.05 * abs(cert.margin)

    def test_monotone_refutation_under_refinement(self):
        fam = build_family(parse_system("x1' = x1; x2' = -x2"))
        domain = Domain(kind="box", half_widths=(1.0, 1.0), grid=5, random_samples=0)
        coarse = certify(fam, [], domain)
        assert coarse.verdict == "refuted"
        fine = certify(fam, [], domain.refined_for(2))
        assert fine.verdict == "refuted"
        assert fine.margin >= coarse.margin - 1e-12


class TestSearch:
    def test_linear_stable_immediate(self):
        fam = build_family(parse_system("x1' = -x1 + x2; x2' = -2*x2"))
        theta, cert = search_certificate(fam, Domain(kind="ball", radius=1.0), budget=100)
        assert theta.size == 0
        assert cert.verdict == "certified-on-samples"
        assert cert.search_evals == 1

    def test_damped_cross_term_matches_grid_oracle(self):
        f = parse_system("x1' = -x1 + x1*x2; x2' = -x2 - x1*x2")
        fam = build_family(f)
        domain = Domain(kind="ball", radius=0.5)
        theta, cert = search_certificate(fam, domain, budget=4000, seed=7)
        assert cert.verdict == "certified-on-samples"
        assert cert.margin < 0
        # theta = 0 already certifies (triangular member with margin -0.5).
        assert certify(fam, fam.baseline_theta(), domain).margin <= -0.5 + 1e-9
        # Exhaustive share grid on the same sample set never beats the search.
        pts = domain.sample_points(2, np.random.default_rng(7))
        oracle_margin, _ = _grid_oracle(fam, pts, lo=-5.0, hi=5.0, steps=11)
        assert oracle_margin < 0
        assert cert.margin <= oracle_margin + 1e-6

    def test_cubic_example_reports_inconclusive(self):
        fam = build_family(parse_system(CUBIC_EXAMPLE))
        domain = Domain(kind="ball", radius=0.5)
        theta, cert = search_certificate(fam, domain, budget=3000, seed=7)
        pts = domain.sample_points(2, np.random.default_rng(7))
        oracle_margin, _ = _grid_oracle(fam, pts, lo=-5.0, hi=5.0, steps=5)
        if oracle_margin >= 0:
            assert cert.verdict == "inconclusive"
            assert cert.margin >= 0
        else:
            assert cert.margin < 0

    def test_never_certified_with_counterexample(self):
        for text, radius in [
            (CUBIC_EXAMPLE, 0.5),
            ("x1' = x2; x2' = -x1", 1.0),
            ("x1' = -x1 + x1*x2; x2' = -x2 - x1*x2", 0.5),
        ]:
            fam = build_family(parse_system(text))
            _, cert = search_certificate(
                fam, Domain(kind="ball", radius=radius), budget=500, seed=1
            )
            if cert.verdict == "certified-on-samples":
                assert cert.counterexample is None

    def test_margin_continuity_in_theta(self):
        fam = build_family(parse_system(CUBIC_EXAMPLE))
        domain = Domain(kind="ball", radius=0.5)
        pts = domain.sample_points(2, np.random.default_rng(5))
        sampled = sample_family(fam, pts)
        rng = np.random.default_rng(89)
        for _ in range(10):
            theta = rng.uniform(-5, 5, fam.free_dim)
            base = margin_of(sample_stats(sampled.matrices(theta)))
            bumped = margin_of(
                sample_stats(sampled.matrices(theta + 1e-8 * rng.normal(size=4)))
            )
            assert abs(base - bumped) < 1e-4

    def test_determinism(self):
        f = parse_system("x1' = -x1 + x1*x2; x2' = -x2 - x1*x2")
        fam = build_family(f)
        domain = Domain(kind="ball", radius=0.5)
        t1, c1 = search_certificate(fam, domain, budget=1500, seed=9)
        t2, c2 = search_certificate(fam, domain, budget=1500, seed=9)
        np.testing.assert_array_equal(t1, t2)
        assert c1 == c2


def _grid_oracle(fam, pts, lo, hi, steps):
    """Exhaustive share-vector grid: brute-force envelope of the margin."""
    sampled = sample_family(fam, pts)
    best, best_theta = np.inf, None
    axes = [np.linspace(lo, hi, steps)] * fam.free_dim
    for theta in itertools.product(*axes):
        value = margin_of(sample_stats(sampled.matrices(np.array(theta))))
        if value < best:
            best, best_theta = value, np.array(theta)
    return best, best_theta
