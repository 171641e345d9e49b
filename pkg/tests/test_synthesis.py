import numpy as np
import pytest

from polystab import Domain, build_family, certify, parse_system
from polystab.poly import Polynomial
from polystab.synthesis import (
    Augmentation,
    ControlLaw,
    close_loop,
    kalman_rank,
    make_center,
    synthesize,
)

UNIT_BALL = Domain(kind="ball", radius=1.0)
SMALL_BALL = Domain(kind="ball", radius=0.5)


def control(n, terms_list, bound):
    return ControlLaw(tuple(Polynomial(n, t) for t in terms_list), bound)


class TestCloseLoop:
    def test_pure_control_channel(self):
        f = parse_system("states 1\ncontrols 1\nx1' = u1")
        u = control(1, [{(1,): -2.0}], 1)
        closed = close_loop(f, u)
        assert closed.components[0].terms == {(1,): -2.0}

    def test_linear_feedback(self):
        f = parse_system("states 1\ncontrols 1\nx1' = x1 + u1")
        u = control(1, [{(1,): -2.0}], 1)
        assert close_loop(f, u).components[0].terms == {(1,): -1.0}

    def test_bilinear_with_augmentation(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x2 + u1*x1\nx2' = 0")
        u = control(2, [{(1, 0): 1.0}], 1)
        phi = Augmentation((Polynomial(1, {(2,): 1.0}), Polynomial.zero(1)), 2)
        closed = close_loop(f, u, phi)
        # x2 + x1*x1 + (x1)^2 = x2 + 2 x1^2
        assert closed.components[0].terms == {(0, 1): 1.0, (2, 0): 2.0}

    def test_substitution_matches_numeric_oracle(self):
        rng = np.random.default_rng(211)
        f = parse_system(
            "states 2\ncontrols 2\n"
            "x1' = x2 + x1*u1 + u2^2\n"
            "x2' = -x1 + u1*u2 + x2^2*u1"
        )
        u = control(2, [{(1, 0): 0.7, (0, 2): -0.3}, {(0, 1): 1.1}], 2)
        closed = close_loop(f, u)
        for _ in range(25):
            x = rng.normal(size=2)
            u_val = u.evaluate(x)
            np.testing.assert_allclose(
                closed.evaluate(x), f.evaluate(x, u_val), rtol=1e-12, atol=1e-12
            )

    def test_origin_stays_fixed(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x2 + u1\nx2' = -x1 + x1*u1")
        u = control(2, [{(1, 0): -3.0, (2, 0): 2.0}], 2)
        closed = close_loop(f, u)
        np.testing.assert_array_equal(closed.evaluate(np.zeros(2)), np.zeros(2))

    def test_degree_bound_violations(self):
        f = parse_system("states 1\ncontrols 1\nx1' = x1 + u1")
        with pytest.raises(ValueError, match="degree"):
            close_loop(f, control(1, [{(2,): 1.0}], 2))
        phi = Augmentation((Polynomial(1, {(3,): 1.0}),), 3)
        with pytest.raises(ValueError, match="degree"):
            close_loop(f, control(1, [{(1,): 1.0}], 1), phi)

    def test_control_must_fix_origin(self):
        with pytest.raises(ValueError, match="origin"):
            control(1, [{(0,): 1.0}], 1)

    def test_closed_degree_bound_random(self):
        rng = np.random.default_rng(223)
        basis2 = [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        for _ in range(100):
            f = parse_system(
                "states 2\ncontrols 1\n"
                "x1' = x2 + x1^2*u1 + u1^2\n"
                "x2' = -x1 + x1*x2 + x2*u1"
            )
            d = f.degrees()
            u_terms = {
                e: float(rng.normal())
                for e in basis2
                if sum(e) <= d.x and rng.random() < 0.7
            }
            if not u_terms:
                u_terms = {(1, 0): 1.0}
            u = control(2, [u_terms], d.x)
            phi_terms = {
                (k,): float(rng.normal()) for k in range(1, d.z + 1) if rng.random() < 0.5
            }
            phi = Augmentation(
                (Polynomial(1, phi_terms), Polynomial.zero(1)), d.z
            )
            closed = close_loop(f, u, phi)
            assert closed.degrees().x <= d.x * (d.x + d.u)

    def test_degree_inequality_exhaustive(self):
        for lx in range(1, 11):
            for lu in range(0, 11):
                assert lx + lx * lu <= lx * (lx + lu)


class TestKalmanRank:
    def test_double_integrator(self):
        assert kalman_rank(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([0.0, 1.0])) == 2

    def test_zero_input_matrix(self):
        assert kalman_rank(np.eye(3), np.zeros((3, 2))) == 0

    def test_uncontrollable_mode(self):
        assert kalman_rank(np.diag([1.0, 2.0]), np.array([1.0, 0.0])) == 1


class TestSynthesize:
    def test_scalar_plant(self):
        f = parse_system("states 1\ncontrols 1\nx1' = x1 + u1")
        result = synthesize(f, Domain(kind="box", half_widths=(1.0,)), budget=20000, seed=0)
        assert result.success
        assert result.certificate.margin < -0.01
        gain = result.control.components[0].terms.get((1,), 0.0)
        assert gain < -1.0
        np.testing.assert_allclose(result.certificate.margin, 1.0 + gain, atol=1e-9)

    def test_double_integrator(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x2\nx2' = u1")
        result = synthesize(f, UNIT_BALL, budget=20000, seed=0)
        assert result.success
        assert result.certificate.margin < -0.01
        d1 = result.control.components[0].terms.get((1, 0), 0.0)
        d2 = result.control.components[0].terms.get((0, 1), 0.0)
        # Hurwitz region of s^2 - d2 s - d1: both coefficients positive.
        assert d1 < 0 and d2 < 0

    def test_cubic_plant_certifies_and_recertifies(self):
        f = parse_system("states 2\ncontrols 2\nx1' = x2 + x1^3 + u1\nx2' = -x1 + u2")
        result = synthesize(f, SMALL_BALL, deg_u=3, budget=60000, seed=0, starts=16)
        assert result.success
        assert result.certificate.margin < 0
        fam = build_family(result.closed_loop)
        double = certify(fam, result.theta, SMALL_BALL.refined_for(2), seed=11)
        assert double.verdict == "certified-on-samples"
        assert double.margin < 0

    def test_uncontrollable_unstable_mode_fails_fast(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x1 + u1\nx2' = 2*x2")
        result = synthesize(f, UNIT_BALL, budget=20000, seed=0)
        assert not result.success
        assert "kalman" in result.note.lower()
        assert result.evals == 0

    def test_determinism(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x2\nx2' = u1")
        a = synthesize(f, UNIT_BALL, budget=8000, seed=3, starts=8)
        b = synthesize(f, UNIT_BALL, budget=8000, seed=3, starts=8)
        assert a.control == b.control
        assert a.theta == b.theta
        assert a.certificate == b.certificate
        assert a.trace == b.trace

    def test_invalid_degree_bounds(self):
        f = parse_system("states 1\ncontrols 1\nx1' = x1 + u1")
        with pytest.raises(ValueError, match="degree"):
            synthesize(f, UNIT_BALL, deg_u=5)
        with pytest.raises(ValueError, match="degree"):
            synthesize(f, UNIT_BALL, deg_u=0)

    def test_random_controllable_linear_plants_succeed(self):
        rng = np.random.default_rng(401)
        domain = UNIT_BALL
        done = 0
        while done < 50:
            n = int(rng.integers(1, 4))
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, 1))
            if kalman_rank(A, B) < n:
                continue
            done += 1
            lines = [f"states {n}", "controls 1"]
            for i in range(n):
                terms = [f"{float(A[i, j])!r}*x{j + 1}" for j in range(n)]
                terms.append(f"{float(B[i, 0])!r}*u1")
                lines.append(f"x{i + 1}' = " + " + ".join(terms))
            f = parse_system("\n".join(lines))
            result = synthesize(f, domain, budget=2500, seed=5, starts=8)
            assert result.success, f"failed on A={A!r}, B={B!r}"
            double = certify(
                build_family(result.closed_loop),
                result.theta,
                domain.refined_for(n),
                seed=1,
            )
            assert double.margin < 0

    def test_degree_record(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x2 + x1^2*u1\nx2' = u1")
        result = synthesize(f, SMALL_BALL, budget=4000, seed=0, starts=8)
        record = result.degree_record
        assert record.l_x == 3 and record.l_u == 1
        assert record.substitution_bound == 3 + 3 * 1
        assert record.composition_bound == 3 * (3 + 1)
        assert record.substitution_bound <= record.composition_bound
        assert record.measured <= record.composition_bound


class TestMakeCenter:
    def test_linear_plant(self):
        f = parse_system("states 2\ncontrols 2\nx1' = x2 + u1\nx2' = u2")
        result = make_center(f, UNIT_BALL, budget=50000, seed=0)
        assert result.success
        fam = build_family(result.closed_loop)
        from polystab.stability import sample_family, sample_stats

        pts = UNIT_BALL.sample_points(2, np.random.default_rng(99))
        stats = sample_stats(sample_family(fam, pts).matrices(np.array(result.theta)))
        assert stats.max_abs_real[stats.ok].max() < 1e-6
        assert stats.min_abs_imag[stats.ok].min() > 1e-6

    def test_odd_dimension_rejected(self):
        f = parse_system(
            "states 3\ncontrols 1\nx1' = x2 + u1\nx2' = -x1\nx3' = -x3"
        )
        with pytest.raises(ValueError, match="even"):
            make_center(f, Domain(kind="ball", radius=1.0))

    def test_quadratic_plant(self):
        f = parse_system("states 2\ncontrols 2\nx1' = x2 + x1^2 + u1\nx2' = -x1 + u2")
        result = make_center(f, SMALL_BALL, deg_u=2, budget=60000, seed=0, starts=16)
        if result.success:
            # independent simulation oracle over ten periods: orbits stay closed
            from polystab.simulation import integrate_reference

            period = 2 * np.pi
            traj = integrate_reference(
                result.closed_loop, [0.2, 0.0], 0.0, 10 * period, 40000
            )
            gap = abs(traj.norms().max() - traj.norms().min())
            assert gap < 0.2 * 0.2
        assert result.success, result.note
