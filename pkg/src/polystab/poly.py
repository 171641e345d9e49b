"""Sparse multivariate polynomials and polynomial vector fields.

A system is a set of first-order ODEs x_k' = f_k(x, u) whose right-hand
sides are real polynomials in the state variables x1..xn and, optionally,
control variables u1..ur.  Each polynomial is stored sparsely as a map
from exponent tuples to coefficients; the exponent tuple of a term lists
the state exponents first, then the control exponents.

Systems can be written in a small text format::

    states 2
    controls 1
    x1' = x1^2*x2 + x2 + 2*x1*x2^2
    x2' = -x1 + 3*x1^2*x2 - 2*x1*x2^2

Header lines are optional; without them the state dimension is inferred
from the equations and variables used.  `parse_system` turns such text
into a `VectorField`; `VectorField.to_text` is its inverse up to term
merging and canonical ordering.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Monomial",
    "Polynomial",
    "VectorField",
    "Degrees",
    "ParseError",
    "parse_system",
    "format_polynomial",
]


@dataclass(frozen=True)
class Monomial:
    """One term c * x1^l1 * ... * xm^lm of a sparse polynomial."""

    coefficient: float
    exponents: tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.exponents)


def _term_sort_key(exponents: tuple[int, ...]):
    # Graded order, highest total degree first, then lexicographic with
    # earlier variables ranked higher.  Gives a stable canonical layout.
    return (-sum(exponents), tuple(-e for e in exponents))


class Polynomial:
    """Immutable sparse polynomial over a fixed number of variables.

    Terms with equal exponent tuples are merged at construction and exact
    zero coefficients are dropped, so two polynomials are equal iff their
    term maps are equal.
    """

    __slots__ = ("nvars", "terms", "_eval_cache")

    def __init__(self, nvars: int, terms: Mapping[tuple[int, ...], float] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be non-negative")
        merged: dict[tuple[int, ...], float] = {}
        for exps, coef in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise ValueError(f"exponent tuple {exps} does not match nvars={nvars}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            c = merged.get(exps, 0.0) + float(coef)
            if c == 0.0:
                merged.pop(exps, None)
            else:
                merged[exps] = c
        ordered = sorted(merged.items(), key=lambda kv: _term_sort_key(kv[0]))
        object.__setattr__(self, "nvars", nvars)
        object.__setattr__(self, "terms", dict(ordered))
        object.__setattr__(self, "_eval_cache", None)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars, {})

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {tuple([0] * nvars): value})

    @classmethod
    def variable(cls, nvars: int, index: int, power: int = 1) -> "Polynomial":
        exps = [0] * nvars
        exps[index] = power
        return cls(nvars, {tuple(exps): 1.0})

    # -- inspection ----------------------------------------------------

    def monomials(self) -> Iterator[Monomial]:
        for exps, coef in self.terms.items():
            yield Monomial(coef, exps)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        """Total degree; 0 for the zero polynomial."""
        return max((sum(e) for e in self.terms), default=0)

    def degree_over(self, indices: Sequence[int]) -> int:
        """Max combined exponent over a subset of the variables."""
        idx = list(indices)
        return max((sum(e[i] for i in idx) for e in self.terms), default=0)

    def constant_term(self) -> float:
        return self.terms.get(tuple([0] * self.nvars), 0.0)

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other: "Polynomial") -> "Polynomial":
        self._check_compatible(other)
        out = dict(self.terms)
        for exps, coef in other.terms.items():
            out[exps] = out.get(exps, 0.0) + coef
        return Polynomial(self.nvars, out)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {e: -c for e, c in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        self._check_compatible(other)
        out: dict[tuple[int, ...], float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                key = tuple(a + b for a, b in zip(e1, e2))
                out[key] = out.get(key, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        return NotImplemented

    def __pow__(self, power: int) -> "Polynomial":
        if not isinstance(power, int) or power < 0:
            raise ValueError("polynomial powers must be non-negative integers")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        k = power
        while k:
            if k & 1:
                result = result * base
            base = base * base if k > 1 else base
            k >>= 1
        return result

    def scale(self, factor: float) -> "Polynomial":
        return Polynomial(self.nvars, {e: c * factor for e, c in self.terms.items()})

    def shift_variable(self, index: int, by: int = 1) -> "Polynomial":
        """Multiply by x_index^by (pure exponent shift, coefficients untouched)."""
        out = {}
        for exps, coef in self.terms.items():
            e = list(exps)
            e[index] += by
            out[tuple(e)] = coef
        return Polynomial(self.nvars, out)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Polynomial)
            and self.nvars == other.nvars
            and self.terms == other.terms
        )

    def __hash__(self):
        return hash((self.nvars, tuple(self.terms.items())))

    def _check_compatible(self, other: "Polynomial") -> None:
        if not isinstance(other, Polynomial):
            raise TypeError(f"expected Polynomial, got {type(other).__name__}")
        if other.nvars != self.nvars:
            raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")

    # -- evaluation ----------------------------------------------------

    def evaluate(self, point: Sequence[float]) -> float:
        if len(point) != self.nvars:
            raise ValueError(f"point has {len(point)} coordinates, expected {self.nvars}")
        total = 0.0
        for exps, coef in self.terms.items():
            value = coef
            for x, e in zip(point, exps):
                if e:
                    value *= x ** e
            total += value
        return total

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at many points at once; `points` has shape (m, nvars)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.nvars:
            raise ValueError(f"expected shape (m, {self.nvars}), got {points.shape}")
        cache = self._eval_cache
        if cache is None:
            exps = np.array(list(self.terms.keys()), dtype=float).reshape(-1, self.nvars)
            coefs = np.array(list(self.terms.values()), dtype=float)
            cache = (exps, coefs)
            object.__setattr__(self, "_eval_cache", cache)
        exps, coefs = cache
        if coefs.size == 0:
            return np.zeros(points.shape[0])
        return np.power(points[:, None, :], exps[None, :, :]).prod(axis=-1) @ coefs

    def __repr__(self):
        return f"Polynomial({self.to_string()})"

    def to_string(self, names: Sequence[str] | None = None) -> str:
        return format_polynomial(self, names)


def format_polynomial(p: Polynomial, names: Sequence[str] | None = None) -> str:
    """Render a polynomial in the system text format (x1, x2, ... by default)."""
    if names is None:
        names = [f"x{i + 1}" for i in range(p.nvars)]
    if not p.terms:
        return "0"
    pieces = []
    for exps, coef in p.terms.items():
        factors = []
        for name, e in zip(names, exps):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        mag = abs(coef)
        if not factors:
            body = _format_number(mag)
        elif mag == 1.0:
            body = "*".join(factors)
        else:
            body = "*".join([_format_number(mag)] + factors)
        pieces.append((coef < 0, body))
    out = []
    for i, (negative, body) in enumerate(pieces):
        if i == 0:
            out.append(("-" if negative else "") + body)
        else:
            out.append(("- " if negative else "+ ") + body)
    return " ".join(out)


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


class Degrees(tuple):
    """Degree summary of a field: in x, in u, and in z = (x, u) jointly."""

    __slots__ = ()

    def __new__(cls, x: int, u: int, z: int):
        return super().__new__(cls, (x, u, z))

    @property
    def x(self) -> int:
        return self[0]

    @property
    def u(self) -> int:
        return self[1]

    @property
    def z(self) -> int:
        return self[2]


class VectorField:
    """A polynomial vector field f(x) or controlled field f(x, u).

    Components are polynomials over n + r variables (states then controls).
    Values are immutable; arithmetic helpers return new fields.
    """

    __slots__ = ("n", "r", "components")

    def __init__(self, n: int, components: Sequence[Polynomial], r: int = 0):
        if n <= 0:
            raise ValueError("state dimension must be positive")
        if r < 0:
            raise ValueError("control dimension must be non-negative")
        if len(components) != n:
            raise ValueError(f"expected {n} components, got {len(components)}")
        for p in components:
            if p.nvars != n + r:
                raise ValueError(
                    f"component over {p.nvars} variables, expected {n + r}"
                )
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "components", tuple(components))

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("VectorField is immutable")

    def evaluate(self, x: Sequence[float], u: Sequence[float] | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.n},)")
        if self.r:
            if u is None:
                raise ValueError(f"field expects {self.r} control values")
            u = np.asarray(u, dtype=float)
            if u.shape != (self.r,):
                raise ValueError(f"control has shape {u.shape}, expected ({self.r},)")
            point = np.concatenate([x, u])
        else:
            if u is not None and len(u):
                raise ValueError("field has no control variables")
            point = x
        return np.array([c.evaluate(point) for c in self.components])

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate all components at rows of `points` (shape (m, n + r))."""
        points = np.asarray(points, dtype=float)
        return np.stack([c.evaluate_many(points) for c in self.components], axis=1)

    def degrees(self) -> Degrees:
        xs = range(self.n)
        us = range(self.n, self.n + self.r)
        dx = max(p.degree_over(xs) for p in self.components)
        du = max(p.degree_over(us) for p in self.components) if self.r else 0
        dz = max(p.degree() for p in self.components)
        return Degrees(dx, du, dz)

    def __add__(self, other: "VectorField") -> "VectorField":
        if not isinstance(other, VectorField):
            return NotImplemented
        if (self.n, self.r) != (other.n, other.r):
            raise ValueError("dimension mismatch")
        return VectorField(
            self.n, [a + b for a, b in zip(self.components, other.components)], self.r
        )

    def scale(self, factor: float) -> "VectorField":
        return VectorField(self.n, [c.scale(factor) for c in self.components], self.r)

    def __mul__(self, factor):
        if isinstance(factor, (int, float)):
            return self.scale(factor)
        return NotImplemented

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VectorField)
            and (self.n, self.r) == (other.n, other.r)
            and self.components == other.components
        )

    def __hash__(self):
        return hash((self.n, self.r, self.components))

    def variable_names(self) -> list[str]:
        return [f"x{i + 1}" for i in range(self.n)] + [
            f"u{j + 1}" for j in range(self.r)
        ]

    def to_text(self) -> str:
        lines = [f"states {self.n}"]
        if self.r:
            lines.append(f"controls {self.r}")
        names = self.variable_names()
        for k, comp in enumerate(self.components):
            lines.append(f"x{k + 1}' = {format_polynomial(comp, names)}")
        return "\n".join(lines) + "\n"

    def __repr__(self):
        body = "; ".join(
            f"x{k + 1}' = {format_polynomial(c, self.variable_names())}"
            for k, c in enumerate(self.components)
        )
        return f"VectorField({body})"


# ----------------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------------


class ParseError(ValueError):
    """Syntax or semantic error in system text, with source location."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message


_TOKEN_RE = re.compile(
    r"""(?P<ws>[ \t\r]+)
      | (?P<comment>\#[^\n]*)
      | (?P<newline>\n)
      | (?P<number>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>[+\-*/^()=;'])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number | name | op | newline | end
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "newline":
            tokens.append(_Token("newline", value, line, col))
            line += 1
            col = 1
        else:
            if kind not in ("ws", "comment"):
                tokens.append(_Token(kind, value, line, col))
            col += len(value)
        pos = m.end()
    tokens.append(_Token("end", "", line, col))
    return tokens


# Raw terms keep variables as ('x'|'u', index) pairs until the final
# dimensions are known.
_RawTerms = dict


def _raw_zero() -> _RawTerms:
    return {}


def _raw_constant(value: float) -> _RawTerms:
    return {(): value} if value != 0.0 else {}


def _raw_add(a: _RawTerms, b: _RawTerms) -> _RawTerms:
    out = dict(a)
    for key, coef in b.items():
        c = out.get(key, 0.0) + coef
        if c == 0.0:
            out.pop(key, None)
        else:
            out[key] = c
    return out


def _raw_scale(a: _RawTerms, factor: float) -> _RawTerms:
    if factor == 0.0:
        return {}
    return {key: coef * factor for key, coef in a.items()}


def _raw_mul(a: _RawTerms, b: _RawTerms) -> _RawTerms:
    out: _RawTerms = {}
    for ka, ca in a.items():
        da = dict(ka)
        for kb, cb in b.items():
            merged = dict(da)
            for var, e in kb:
                merged[var] = merged.get(var, 0) + e
            key = tuple(sorted(merged.items()))
            c = out.get(key, 0.0) + ca * cb
            if c == 0.0:
                out.pop(key, None)
            else:
                out[key] = c
    return out


def _raw_pow(a: _RawTerms, power: int) -> _RawTerms:
    result = _raw_constant(1.0)
    for _ in range(power):
        result = _raw_mul(result, a)
    return result


class _SystemParser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "end":
            self.pos += 1
        return tok

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            raise ParseError(f"expected '{op}', found {tok.text!r}", tok.line, tok.column)
        return self.advance()

    def skip_separators(self) -> None:
        while self.peek().kind == "newline" or (
            self.peek().kind == "op" and self.peek().text == ";"
        ):
            self.advance()

    # ------------------------------------------------------------------

    def parse(self) -> VectorField:
        states_declared: int | None = None
        controls_declared: int | None = None
        self.skip_separators()
        while self.peek().kind == "name" and self.peek().text in ("states", "controls"):
            keyword = self.advance()
            value = self.peek()
            if value.kind != "number" or not value.text.isdigit():
                raise ParseError(
                    f"'{keyword.text}' must be followed by a positive integer",
                    value.line,
                    value.column,
                )
            self.advance()
            count = int(value.text)
            if keyword.text == "states":
                states_declared = count
            else:
                controls_declared = count
            self.skip_separators()

        equations: dict[int, _RawTerms] = {}
        eq_lines: dict[int, int] = {}
        max_x = 0
        max_u = 0
        while self.peek().kind != "end":
            tok = self.peek()
            if tok.kind != "name":
                raise ParseError(f"expected an equation, found {tok.text!r}", tok.line, tok.column)
            kind, index = self._variable(tok, states_declared, controls_declared)
            if kind != "x":
                raise ParseError("equations must define state variables (x1', x2', ...)", tok.line, tok.column)
            self.advance()
            self.expect_op("'")
            self.expect_op("=")
            if index in equations:
                raise ParseError(f"duplicate equation for x{index}", tok.line, tok.column)
            terms, seen_x, seen_u = self._expression(states_declared, controls_declared)
            equations[index] = terms
            eq_lines[index] = tok.line
            max_x = max(max_x, index, seen_x)
            max_u = max(max_u, seen_u)
            tail = self.peek()
            if tail.kind == "end":
                break
            if tail.kind == "newline" or (tail.kind == "op" and tail.text == ";"):
                self.skip_separators()
            else:
                raise ParseError(f"unexpected {tail.text!r} after expression", tail.line, tail.column)

        if not equations:
            raise ParseError("no equations found", 1, 1)
        n = states_declared if states_declared is not None else max_x
        r = controls_declared if controls_declared is not None else max_u

        components = []
        for k in range(1, n + 1):
            raw = equations.get(k, _raw_zero())
            poly = _realize(raw, n, r)
            if poly.constant_term() != 0.0:
                line = eq_lines.get(k, 1)
                raise ParseError(
                    f"constant term in equation for x{k}: the origin must be an equilibrium",
                    line,
                    1,
                )
            components.append(poly)
        return VectorField(n, components, r)

    def _variable(self, tok: _Token, states, controls) -> tuple[str, int]:
        m = re.fullmatch(r"([xu])(\d+)", tok.text)
        if m is None:
            raise ParseError(f"unknown variable {tok.text!r}", tok.line, tok.column)
        kind, index = m.group(1), int(m.group(2))
        if index < 1:
            raise ParseError(f"variable indices start at 1: {tok.text!r}", tok.line, tok.column)
        if kind == "x" and states is not None and index > states:
            raise ParseError(
                f"undeclared variable x{index} (states {states})", tok.line, tok.column
            )
        if kind == "u":
            if controls is not None and index > controls:
                raise ParseError(
                    f"undeclared variable u{index} (controls {controls})", tok.line, tok.column
                )
        return kind, index

    # expression := ['+'|'-'] term (('+'|'-') term)*
    def _expression(self, states, controls):
        seen_x = seen_u = 0
        sign = 1.0
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self.advance()
            sign = -1.0 if tok.text == "-" else 1.0
        terms, sx, su = self._term(states, controls)
        total = _raw_scale(terms, sign)
        seen_x, seen_u = max(seen_x, sx), max(seen_u, su)
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.advance()
                terms, sx, su = self._term(states, controls)
                if tok.text == "-":
                    terms = _raw_scale(terms, -1.0)
                total = _raw_add(total, terms)
                seen_x, seen_u = max(seen_x, sx), max(seen_u, su)
            else:
                return total, seen_x, seen_u

    # term := factor (('*' factor) | ('/' number))*
    def _term(self, states, controls):
        total, seen_x, seen_u = self._factor(states, controls)
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text == "*":
                self.advance()
                factor, sx, su = self._factor(states, controls)
                total = _raw_mul(total, factor)
                seen_x, seen_u = max(seen_x, sx), max(seen_u, su)
            elif tok.kind == "op" and tok.text == "/":
                self.advance()
                denom = self.peek()
                if denom.kind != "number":
                    raise ParseError(
                        "division by anything but a numeric constant is not polynomial",
                        denom.line,
                        denom.column,
                    )
                self.advance()
                value = float(denom.text)
                if value == 0.0:
                    raise ParseError("division by zero", denom.line, denom.column)
                total = _raw_scale(total, 1.0 / value)
            else:
                return total, seen_x, seen_u

    # factor := base ['^' integer]
    def _factor(self, states, controls):
        base, seen_x, seen_u = self._base(states, controls)
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.advance()
            exp = self.peek()
            if exp.kind != "number" or not exp.text.isdigit():
                raise ParseError(
                    "exponents must be non-negative integer literals", exp.line, exp.column
                )
            self.advance()
            base = _raw_pow(base, int(exp.text))
        return base, seen_x, seen_u

    def _base(self, states, controls):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return _raw_constant(float(tok.text)), 0, 0
        if tok.kind == "name":
            kind, index = self._variable(tok, states, controls)
            self.advance()
            raw = {(((kind, index), 1),): 1.0}
            return raw, (index if kind == "x" else 0), (index if kind == "u" else 0)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner, sx, su = self._expression(states, controls)
            self.expect_op(")")
            return inner, sx, su
        if tok.kind == "op" and tok.text in "+-":
            self.advance()
            inner, sx, su = self._factor(states, controls)
            if tok.text == "-":
                inner = _raw_scale(inner, -1.0)
            return inner, sx, su
        raise ParseError(f"unexpected {tok.text!r} in expression", tok.line, tok.column)


def _realize(raw: _RawTerms, n: int, r: int) -> Polynomial:
    terms: dict[tuple[int, ...], float] = {}
    for key, coef in raw.items():
        exps = [0] * (n + r)
        for (kind, index), e in key:
            offset = 0 if kind == "x" else n
            exps[offset + index - 1] = e
        terms[tuple(exps)] = terms.get(tuple(exps), 0.0) + coef
    return Polynomial(n + r, terms)


def parse_system(text: str) -> VectorField:
    """Parse system text into a `VectorField`.

    Raises `ParseError` with line/column information on syntax errors,
    undeclared variables, and non-polynomial constructs (division by a
    variable, non-integer powers).  Constant terms are rejected because
    every analysis here assumes the origin is an equilibrium.
    """
    return _SystemParser(text).parse()
