"""Matrix factorizations A(x) with A(x) x identically equal to f(x).

Every monomial a * x^l of a component f_i can be divided by any state
variable x_j that actually appears in it (l_j >= 1), which places the
quotient in entry (i, j) of a matrix A(x).  Splitting the coefficient a
across several admissible columns, subject to the shares summing back to
a, produces an infinite family of equivalent factorizations; this module
parametrizes that family with a finite vector of constant shares.

Parametrization: a monomial whose support has m admissible columns
contributes m - 1 free parameters.  One column (the one with the largest
exponent, ties to the smallest index) absorbs the remainder so the share
constraint holds by construction; at theta = 0 it carries the whole
coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .poly import Polynomial, VectorField, format_polynomial

__all__ = [
    "AssignmentSlot",
    "MonomialConstraint",
    "MatrixPolynomial",
    "FactorizationFamily",
    "build_family",
    "matrix_residual",
]


@dataclass(frozen=True)
class AssignmentSlot:
    """One admissible (component, column) placement for a monomial.

    `param_index` is set for columns whose share is a free parameter;
    `fixed_value` is set when the monomial has a single admissible column.
    The remainder column of a multi-column monomial has neither: its share
    is the monomial coefficient minus the free shares.
    """

    component: int
    column: int
    reduced_exponents: tuple[int, ...]
    param_index: int | None = None
    fixed_value: float | None = None


@dataclass(frozen=True)
class MonomialConstraint:
    """Share-sum bookkeeping for one monomial: sum of shares == coefficient."""

    component: int
    exponents: tuple[int, ...]
    coefficient: float
    columns: tuple[int, ...]
    free_params: tuple[int, ...]
    remainder_column: int


class MatrixPolynomial:
    """An n-by-n matrix whose entries are polynomials in the state."""

    __slots__ = ("n", "entries")

    def __init__(self, entries: Sequence[Sequence[Polynomial]]):
        n = len(entries)
        for row in entries:
            if len(row) != n:
                raise ValueError("entries must form a square matrix")
            for p in row:
                if p.nvars != n:
                    raise ValueError("entry variable count must equal the dimension")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "entries", tuple(tuple(row) for row in entries))

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("MatrixPolynomial is immutable")

    def degree(self) -> int:
        return max(p.degree() for row in self.entries for p in row)

    def linear_part(self) -> np.ndarray:
        """Constant part A(0); A(x) - A(0) collects all state-dependent terms."""
        return np.array([[p.constant_term() for p in row] for row in self.entries])

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([[p.evaluate(x) for p in row] for row in self.entries])

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at rows of `points`; returns shape (m, n, n)."""
        points = np.asarray(points, dtype=float)
        m = points.shape[0]
        out = np.empty((m, self.n, self.n))
        for i, row in enumerate(self.entries):
            for j, p in enumerate(row):
                out[:, i, j] = p.evaluate_many(points)
        return out

    def times_state(self) -> VectorField:
        """The vector field A(x) x, expanded symbolically."""
        comps = []
        for row in self.entries:
            total = Polynomial.zero(self.n)
            for j, p in enumerate(row):
                total = total + p.shift_variable(j)
            comps.append(total)
        return VectorField(self.n, comps)

    def __eq__(self, other):
        return isinstance(other, MatrixPolynomial) and self.entries == other.entries

    def __repr__(self):
        rows = [
            "[" + ", ".join(format_polynomial(p) for p in row) + "]"
            for row in self.entries
        ]
        return "MatrixPolynomial([" + ", ".join(rows) + "])"


class FactorizationFamily:
    """All constant-share factorizations A(x) of one vector field."""

    __slots__ = ("field", "slots", "constraints", "free_dim")

    def __init__(
        self,
        field: VectorField,
        slots: Sequence[AssignmentSlot],
        constraints: Sequence[MonomialConstraint],
    ):
        object.__setattr__(self, "field", field)
        object.__setattr__(self, "slots", tuple(slots))
        object.__setattr__(self, "constraints", tuple(constraints))
        free = sum(len(c.free_params) for c in constraints)
        object.__setattr__(self, "free_dim", free)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("FactorizationFamily is immutable")

    @property
    def n(self) -> int:
        return self.field.n

    def baseline_theta(self) -> np.ndarray:
        return np.zeros(self.free_dim)

    def instantiate(self, theta: Sequence[float]) -> MatrixPolynomial:
        """Build the family member for a share vector theta (length free_dim)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.free_dim,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.free_dim},)"
            )
        n = self.n
        cells: list[list[dict]] = [[{} for _ in range(n)] for _ in range(n)]

        def add(i, j, exponents, coefficient):
            if coefficient == 0.0:
                return
            cell = cells[i][j]
            cell[exponents] = cell.get(exponents, 0.0) + coefficient

        for constraint in self.constraints:
            i = constraint.component
            shares_used = 0.0
            for column, param in zip(constraint.columns, constraint.free_params):
                share = float(theta[param])
                shares_used += share
                add(i, column, _reduce(constraint.exponents, column), share)
            remainder = constraint.coefficient - shares_used
            add(
                i,
                constraint.remainder_column,
                _reduce(constraint.exponents, constraint.remainder_column),
                remainder,
            )
        for slot in self.slots:
            if slot.fixed_value is not None:
                add(slot.component, slot.column, slot.reduced_exponents, slot.fixed_value)
        entries = [
            [Polynomial(n, cells[i][j]) for j in range(n)] for i in range(n)
        ]
        return MatrixPolynomial(entries)

    def residual(self, theta: Sequence[float]) -> list[Polynomial]:
        """Components of A(x) x - f(x); identically zero for any theta."""
        return matrix_residual(self.instantiate(theta), self.field)

    def constraint_sums(self) -> dict[tuple[int, tuple[int, ...]], float]:
        """Right-hand sides of the share constraints, keyed by (component, exponents)."""
        return {
            (c.component, c.exponents): c.coefficient for c in self.constraints
        }


def _reduce(exponents: tuple[int, ...], column: int) -> tuple[int, ...]:
    reduced = list(exponents)
    reduced[column] -= 1
    return tuple(reduced)


def build_family(field: VectorField) -> FactorizationFamily:
    """Enumerate assignment slots and share constraints for a field.

    The field must be control-free with no constant terms (the origin is
    an equilibrium).  Each monomial with support J = {j : l_j >= 1} yields
    |J| slots and |J| - 1 free parameters.
    """
    if field.r:
        raise ValueError("factorization applies to control-free fields; close the loop first")
    slots: list[AssignmentSlot] = []
    constraints: list[MonomialConstraint] = []
    next_param = 0
    for i, comp in enumerate(field.components):
        for exponents, coefficient in comp.terms.items():
            support = [j for j, e in enumerate(exponents) if e >= 1]
            if not support:
                raise ValueError(
                    f"component {i + 1} has a constant monomial; the origin must be an equilibrium"
                )
            if len(support) == 1:
                j = support[0]
                slots.append(
                    AssignmentSlot(i, j, _reduce(exponents, j), fixed_value=coefficient)
                )
                continue
            # Remainder column: largest exponent wins, ties to the smallest index.
            remainder = max(support, key=lambda j: (exponents[j], -j))
            free_columns = [j for j in support if j != remainder]
            params = []
            for j in free_columns:
                slots.append(
                    AssignmentSlot(i, j, _reduce(exponents, j), param_index=next_param)
                )
                params.append(next_param)
                next_param += 1
            slots.append(AssignmentSlot(i, remainder, _reduce(exponents, remainder)))
            constraints.append(
                MonomialConstraint(
                    component=i,
                    exponents=exponents,
                    coefficient=coefficient,
                    columns=tuple(free_columns),
                    free_params=tuple(params),
                    remainder_column=remainder,
                )
            )
    return FactorizationFamily(field, slots, constraints)


def matrix_residual(matrix: MatrixPolynomial, field: VectorField) -> list[Polynomial]:
    """Components of A(x) x - f(x) for an arbitrary candidate matrix."""
    if field.r:
        raise ValueError("residual is defined for control-free fields")
    if matrix.n != field.n:
        raise ValueError("dimension mismatch")
    product = matrix.times_state()
    return [a - b for a, b in zip(product.components, field.components)]
