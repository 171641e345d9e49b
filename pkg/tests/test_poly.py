import numpy as np
import pytest

from polystab import ParseError, Polynomial, VectorField, parse_system

CUBIC_EXAMPLE = "x1' = x1^2*x2 + x2 + 2*x1*x2^2; x2' = -x1 + 3*x1^2*x2 - 2*x1*x2^2"


def random_polynomial(rng, nvars, max_degree=4, max_terms=6):
    terms = {}
    for _ in range(rng.integers(1, max_terms + 1)):
        exps = tuple(int(e) for e in rng.integers(0, max_degree + 1, nvars))
        while sum(exps) > max_degree:
            exps = tuple(int(e) for e in rng.integers(0, max_degree + 1, nvars))
        terms[exps] = rng.normal()
    return Polynomial(nvars, terms)


def random_field(rng, n, r=0, max_degree=4):
    comps = []
    for _ in range(n):
        p = random_polynomial(rng, n + r, max_degree=max_degree)
        # strip constant terms so the origin stays an equilibrium
        terms = {e: c for e, c in p.terms.items() if sum(e) > 0}
        if not terms:
            terms = {tuple([1] + [0] * (n + r - 1)): rng.normal()}
        comps.append(Polynomial(n + r, terms))
    return VectorField(n, comps, r)


class TestParse:
    def test_cubic_example(self):
        f = parse_system(CUBIC_EXAMPLE)
        assert f.n == 2 and f.r == 0
        assert len(f.components[0].terms) == 3
        assert len(f.components[1].terms) == 3
        assert f.components[0].terms == {(2, 1): 1.0, (0, 1): 1.0, (1, 2): 2.0}
        assert f.components[1].terms == {(1, 0): -1.0, (2, 1): 3.0, (1, 2): -2.0}

    def test_zero_field(self):
        f = parse_system("x1' = 0")
        assert f.n == 1
        assert f.components[0].is_zero()

    def test_term_merging(self):
        f = parse_system("x1' = x2 + x2\nx2' = 0")
        assert f.components[0].terms == {(0, 1): 2.0}

    def test_headers_and_controls(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x2 + u1\nx2' = -x1")
        assert (f.n, f.r) == (2, 1)
        assert f.components[0].terms == {(0, 1, 0): 1.0, (0, 0, 1): 1.0}

    def test_missing_equations_default_to_zero(self):
        f = parse_system("states 3\nx1' = x2")
        assert f.n == 3
        assert f.components[1].is_zero() and f.components[2].is_zero()

    def test_syntax_error_has_location(self):
        with pytest.raises(ParseError) as err:
            parse_system("x1' = x2 +\nx2' = -x1")
        assert err.value.line == 1

    def test_undeclared_variable(self):
        with pytest.raises(ParseError, match="undeclared"):
            parse_system("states 2\nx1' = x3\nx2' = 0")
        with pytest.raises(ParseError, match="undeclared"):
            parse_system("states 1\ncontrols 1\nx1' = u2")

    def test_unknown_name(self):
        with pytest.raises(ParseError, match="unknown variable"):
            parse_system("x1' = y1")

    def test_division_by_variable(self):
        with pytest.raises(ParseError, match="not polynomial"):
            parse_system("x1' = x1/x1")

    def test_division_by_constant_is_fine(self):
        f = parse_system("x1' = x1/2")
        assert f.components[0].terms == {(1,): 0.5}

    def test_non_integer_power(self):
        with pytest.raises(ParseError, match="integer"):
            parse_system("x1' = x1^2.5")
        with pytest.raises(ParseError, match="integer"):
            parse_system("x1' = x1^-1")

    def test_constant_term_rejected(self):
        with pytest.raises(ParseError, match="constant"):
            parse_system("x1' = 1 + x1")

    def test_cancelled_constant_allowed(self):
        f = parse_system("x1' = 1 - 1 + x1")
        assert f.components[0].terms == {(1,): 1.0}

    def test_duplicate_equation(self):
        with pytest.raises(ParseError, match="duplicate"):
            parse_system("x1' = x1; x1' = -x1")

    def test_parentheses_and_unary(self):
        f = parse_system("x1' = -(x1 - 2*x1)")
        assert f.components[0].terms == {(1,): 1.0}


class TestEvaluate:
    def test_cubic_example_at_ones(self):
        f = parse_system(CUBIC_EXAMPLE)
        np.testing.assert_allclose(f.evaluate([1.0, 1.0]), [4.0, 0.0])

    def test_zero_at_origin(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            f = random_field(rng, n=3)
            np.testing.assert_allclose(f.evaluate(np.zeros(3)), np.zeros(3))

    def test_linear_field_is_matvec(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(3, 3))
        comps = [
            Polynomial(3, {tuple(np.eye(3, dtype=int)[j]): A[i, j] for j in range(3)})
            for i in range(3)
        ]
        f = VectorField(3, comps)
        for _ in range(20):
            x = rng.normal(size=3)
            np.testing.assert_allclose(f.evaluate(x), A @ x, rtol=1e-12)

    def test_dimension_mismatch(self):
        f = parse_system(CUBIC_EXAMPLE)
        with pytest.raises(ValueError):
            f.evaluate([1.0])
        with pytest.raises(ValueError):
            f.evaluate([1.0, 2.0], u=[1.0])

    def test_controlled_evaluation(self):
        f = parse_system("states 1\ncontrols 1\nx1' = x1*u1 + u1^2")
        np.testing.assert_allclose(f.evaluate([2.0], u=[3.0]), [6.0 + 9.0])

    def test_evaluate_many_matches_scalar(self):
        rng = np.random.default_rng(11)
        f = random_field(rng, n=2)
        X = rng.normal(size=(40, 2))
        batch = f.evaluate_many(X)
        for i, x in enumerate(X):
            np.testing.assert_allclose(batch[i], f.evaluate(x), rtol=1e-12)


class TestDegrees:
    def test_mixed_orders(self):
        f = parse_system("x1' = x1^2 + x2^2 + x1*x2; x2' = x1^3 + x2")
        assert f.degrees().x == 3

    def test_zero_field_degree(self):
        assert parse_system("x1' = 0").degrees() == (0, 0, 0)

    def test_control_exponents(self):
        f = parse_system("states 2\ncontrols 1\nx1' = x1^2*x2*u1\nx2' = 0")
        d = f.degrees()
        assert (d.x, d.u, d.z) == (3, 1, 4)


class TestProperties:
    def test_roundtrip_random_fields(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            n = int(rng.integers(1, 4))
            r = int(rng.integers(0, 3))
            f = random_field(rng, n, r)
            assert parse_system(f.to_text()) == f

    def test_evaluation_linear_in_coefficients(self):
        rng = np.random.default_rng(23)
        v = random_field(rng, n=3)
        w = random_field(rng, n=3)
        a, b = 0.7, -1.9
        combined = a * v + b * w
        for _ in range(100):
            x = rng.normal(size=3)
            expected = a * v.evaluate(x) + b * w.evaluate(x)
            got = combined.evaluate(x)
            np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)

    def test_product_degree_is_sum(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            p = random_polynomial(rng, 3, max_degree=4)
            q = random_polynomial(rng, 3, max_degree=4)
            if p.is_zero() or q.is_zero():
                continue
            assert (p * q).degree() == p.degree() + q.degree()

    def test_merging_drops_exact_zeros(self):
        p = Polynomial(2, {(1, 0): 1.0, (0, 1): 2.0})
        q = Polynomial(2, {(1, 0): -1.0})
        assert (p + q).terms == {(0, 1): 2.0}

    def test_power(self):
        p = Polynomial(1, {(1,): 1.0, (0,): 1.0})  # 1 + x
        cube = p ** 3
        assert cube.terms == {(3,): 1.0, (2,): 3.0, (1,): 3.0, (0,): 1.0}
