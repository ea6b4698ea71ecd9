"""Symbolic calculus for complex polynomial-coefficient vector fields.

Polynomials are sparse maps from exponent tuples to complex coefficients over
an ordered tuple of named (real) variables. Vector fields, first-order
operators and general differential operators are built on top of them.

Coefficients are complex floats. All inputs used here are small integers and
imaginary units, so identities hold exactly up to ``DROP_TOL``; coefficients
with smaller magnitude are discarded on construction.
"""
from __future__ import annotations

import itertools
from math import comb, prod
from typing import Iterable, Mapping, Sequence

import numpy as np

DROP_TOL = 1e-12
RANK_RTOL = 1e-9


class UsageError(ValueError):
    """Raised for malformed or incompatible inputs."""


class UnsupportedInput(ValueError):
    """Raised when an operator is outside the supported class for a routine."""


def _check_vars(a, b):
    if a.variables != b.variables:
        raise UsageError(f"variable mismatch: {a.variables} vs {b.variables}")


def _fmt_complex(c: complex) -> str:
    re, im = c.real, c.imag

    def num(v):
        return f"{v:.12g}"

    if im == 0:
        return num(re)
    if re == 0:
        if im == 1:
            return "i"
        if im == -1:
            return "-i"
        return f"{num(im)}i"
    return f"({num(re)}{'+' if im > 0 else '-'}{num(abs(im))}i)"


class Polynomial:
    """Sparse multivariate polynomial with complex coefficients.

    Parameters
    ----------
    variables : sequence of str
        Ordered variable names.
    terms : mapping, optional
        Exponent tuple (one entry per variable) -> coefficient.
    """

    __slots__ = ("variables", "terms")

    def __init__(self, variables: Sequence[str], terms: Mapping | None = None):
        self.variables = tuple(variables)
        n = len(self.variables)
        acc: dict[tuple[int, ...], complex] = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != n or any(e < 0 for e in exps):
                raise UsageError(f"bad exponent vector {exps} for {self.variables}")
            acc[exps] = acc.get(exps, 0j) + complex(c)
        self.terms = {e: c for e, c in acc.items() if abs(c) >= DROP_TOL}

    # construction helpers
    @classmethod
    def zero(cls, variables):
        return cls(variables)

    @classmethod
    def constant(cls, variables, c):
        return cls(variables, {(0,) * len(tuple(variables)): c})

    @classmethod
    def monomial(cls, variables, var: str, power: int = 1, coeff=1.0):
        variables = tuple(variables)
        e = [0] * len(variables)
        e[variables.index(var)] = power
        return cls(variables, {tuple(e): coeff})

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            _check_vars(self, other)
            return other
        if isinstance(other, (int, float, complex, np.number)):
            return Polynomial.constant(self.variables, other)
        return NotImplemented

    # arithmetic
    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0j) + c
        return Polynomial(self.variables, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.variables, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return Polynomial(self.variables, {e: c * other for e, c in self.terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[tuple[int, ...], complex] = {}
        for (e1, c1), (e2, c2) in itertools.product(self.terms.items(), other.terms.items()):
            e = tuple(a + b for a, b in zip(e1, e2))
            terms[e] = terms.get(e, 0j) + c1 * c2
        return Polynomial(self.variables, terms)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Polynomial.constant(self.variables, 1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.variables == other.variables and self.terms == other.terms

    def __hash__(self):
        return hash((self.variables, frozenset(self.terms.items())))

    def isclose(self, other: Polynomial, tol: float = 1e-12) -> bool:
        _check_vars(self, other)
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(e, 0j) - other.terms.get(e, 0j)) <= tol for e in keys)

    # calculus
    def diff(self, var: str | int, times: int = 1) -> Polynomial:
        i = var if isinstance(var, int) else self.variables.index(var)
        terms = {}
        for e, c in self.terms.items():
            if e[i] < times:
                continue
            f = prod(range(e[i] - times + 1, e[i] + 1))
            e2 = list(e)
            e2[i] -= times
            terms[tuple(e2)] = terms.get(tuple(e2), 0j) + c * f
        return Polynomial(self.variables, terms)

    def conj(self) -> Polynomial:
        return Polynomial(self.variables, {e: c.conjugate() for e, c in self.terms.items()})

    def __call__(self, point) -> complex:
        point = tuple(point)
        if len(point) != len(self.variables):
            raise UsageError("point dimension does not match variables")
        return sum((c * prod(p**k for p, k in zip(point, e)) for e, c in self.terms.items()), 0j)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def depends_on(self, var: str) -> bool:
        i = self.variables.index(var)
        return any(e[i] for e in self.terms)

    def restrict(self, keep: Sequence[str]) -> Polynomial:
        """Re-express over a subset of variables (dropped ones must not appear)."""
        keep = tuple(keep)
        idx = [self.variables.index(v) for v in keep]
        for v in self.variables:
            if v not in keep and self.depends_on(v):
                raise UnsupportedInput(f"coefficient depends on {v}")
        return Polynomial(keep, {tuple(e[i] for i in idx): c for e, c in self.terms.items()})

    def coefficients_1d(self) -> np.ndarray:
        """Dense coefficient array (ascending powers) of a univariate polynomial."""
        if len(self.variables) != 1:
            raise UsageError("coefficients_1d needs a univariate polynomial")
        out = np.zeros(self.degree() + 1, dtype=complex)
        for (e,), c in self.terms.items():
            out[e] = c
        return out

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, key=lambda e: (sum(e), tuple(-x for x in e))):
            c = self.terms[e]
            mono = "*".join(
                v if k == 1 else f"{v}^{k}" for v, k in zip(self.variables, e) if k
            )
            if not mono:
                parts.append(_fmt_complex(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{_fmt_complex(c)}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self):
        return f"Polynomial({self.variables}, {str(self)!r})"


def variables_of(names: Sequence[str]) -> tuple[Polynomial, ...]:
    """Coordinate polynomials ``x, t, ...`` for the given variable names."""
    return tuple(Polynomial.monomial(names, v) for v in names)


class VectorField:
    """``sum_j coefficients[j] * d/d(variables[j])``."""

    __slots__ = ("coefficients",)

    def __init__(self, coefficients: Sequence[Polynomial]):
        coefficients = tuple(coefficients)
        if not coefficients:
            raise UsageError("a vector field needs at least one variable")
        for c in coefficients[1:]:
            _check_vars(coefficients[0], c)
        if len(coefficients) != len(coefficients[0].variables):
            raise UsageError("need one coefficient per variable")
        self.coefficients = coefficients

    @property
    def variables(self):
        return self.coefficients[0].variables

    def __call__(self, f: Polynomial) -> Polynomial:
        """Apply the field to a polynomial function."""
        _check_vars(self, f)
        out = Polynomial.zero(self.variables)
        for j, a in enumerate(self.coefficients):
            out = out + a * f.diff(j)
        return out

    def __add__(self, other: VectorField):
        _check_vars(self, other)
        return VectorField([a + b for a, b in zip(self.coefficients, other.coefficients)])

    def __neg__(self):
        return VectorField([-a for a in self.coefficients])

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        # scalar or polynomial multiple
        return VectorField([a * other for a in self.coefficients])

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, VectorField):
            return NotImplemented
        return self.coefficients == other.coefficients

    def __hash__(self):
        return hash(self.coefficients)

    def is_zero(self):
        return all(a.is_zero() for a in self.coefficients)

    def isclose(self, other, tol=1e-12):
        return all(a.isclose(b, tol) for a, b in zip(self.coefficients, other.coefficients))

    def to_diffop(self) -> DiffOp:
        return FirstOrderOp(self).to_diffop()

    def __str__(self):
        parts = [
            f"({a})*d/d{v}" for a, v in zip(self.coefficients, self.variables) if not a.is_zero()
        ]
        return " + ".join(parts) or "0"

    def __repr__(self):
        return f"VectorField({str(self)!r})"


class FirstOrderOp:
    """First-order operator ``field + zeroth``."""

    __slots__ = ("field", "zeroth")

    def __init__(self, field: VectorField, zeroth: Polynomial | None = None):
        self.field = field
        self.zeroth = Polynomial.zero(field.variables) if zeroth is None else zeroth
        _check_vars(field, self.zeroth)

    @property
    def variables(self):
        return self.field.variables

    def __eq__(self, other):
        if not isinstance(other, FirstOrderOp):
            return NotImplemented
        return self.field == other.field and self.zeroth == other.zeroth

    def __hash__(self):
        return hash((self.field, self.zeroth))

    def isclose(self, other, tol=1e-12):
        return self.field.isclose(other.field, tol) and self.zeroth.isclose(other.zeroth, tol)

    def to_diffop(self) -> DiffOp:
        n = len(self.variables)
        terms = {(0,) * n: self.zeroth}
        for j, a in enumerate(self.field.coefficients):
            alpha = tuple(int(i == j) for i in range(n))
            terms[alpha] = a
        return DiffOp(self.variables, terms)

    def __str__(self):
        s = str(self.field)
        return s if self.zeroth.is_zero() else f"{s} + ({self.zeroth})"

    def __repr__(self):
        return f"FirstOrderOp({str(self)!r})"


def _as_first_order(z) -> FirstOrderOp:
    if isinstance(z, FirstOrderOp):
        return z
    if isinstance(z, VectorField):
        return FirstOrderOp(z)
    raise UsageError(f"expected VectorField or FirstOrderOp, got {type(z).__name__}")


def _deriv_label(var: str, m: int) -> str:
    return f"d/d{var}" if m == 1 else f"d{m}/d{var}{m}"


class DiffOp:
    """Linear differential operator ``sum_alpha a_alpha(vars) d^alpha``.

    ``terms`` maps derivative multi-indices to coefficient polynomials.
    Zero coefficients are dropped.
    """

    __slots__ = ("variables", "terms")

    def __init__(self, variables: Sequence[str], terms: Mapping | None = None):
        self.variables = tuple(variables)
        n = len(self.variables)
        acc: dict[tuple[int, ...], Polynomial] = {}
        for alpha, a in (terms or {}).items():
            alpha = tuple(int(i) for i in alpha)
            if len(alpha) != n or any(i < 0 for i in alpha):
                raise UsageError(f"bad multi-index {alpha}")
            if not isinstance(a, Polynomial):
                a = Polynomial.constant(self.variables, a)
            _check_vars(self, a)
            acc[alpha] = acc[alpha] + a if alpha in acc else a
        self.terms = {al: a for al, a in acc.items() if not a.is_zero()}

    @classmethod
    def identity(cls, variables):
        variables = tuple(variables)
        return cls(variables, {(0,) * len(variables): Polynomial.constant(variables, 1)})

    @classmethod
    def multiplication(cls, p: Polynomial):
        return cls(p.variables, {(0,) * len(p.variables): p})

    @classmethod
    def partial(cls, variables, var: str, times: int = 1):
        variables = tuple(variables)
        alpha = [0] * len(variables)
        alpha[variables.index(var)] = times
        return cls(variables, {tuple(alpha): Polynomial.constant(variables, 1)})

    @property
    def order(self) -> int:
        return max((sum(al) for al in self.terms), default=0)

    def coefficient(self, alpha) -> Polynomial:
        return self.terms.get(tuple(alpha), Polynomial.zero(self.variables))

    def _coerce(self, other):
        if isinstance(other, DiffOp):
            _check_vars(self, other)
            return other
        if isinstance(other, (int, float, complex, np.number, Polynomial)):
            p = other if isinstance(other, Polynomial) else Polynomial.constant(self.variables, other)
            return DiffOp.multiplication(p)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for al, a in other.terms.items():
            terms[al] = terms[al] + a if al in terms else a
        return DiffOp(self.variables, terms)

    __radd__ = __add__

    def __neg__(self):
        return DiffOp(self.variables, {al: -a for al, a in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        """Left multiplication by a scalar or polynomial coefficient."""
        if isinstance(other, (int, float, complex, np.number, Polynomial)):
            return DiffOp(self.variables, {al: a * other for al, a in self.terms.items()})
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        return compose(self, other)

    def __eq__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return self.variables == other.variables and self.terms == other.terms

    def __hash__(self):
        return hash((self.variables, frozenset(self.terms.items())))

    def isclose(self, other: DiffOp, tol: float = 1e-12) -> bool:
        _check_vars(self, other)
        zero = Polynomial.zero(self.variables)
        return all(
            self.terms.get(al, zero).isclose(other.terms.get(al, zero), tol)
            for al in set(self.terms) | set(other.terms)
        )

    def __call__(self, f: Polynomial) -> Polynomial:
        """Apply to a polynomial function."""
        _check_vars(self, f)
        out = Polynomial.zero(self.variables)
        for alpha, a in self.terms.items():
            g = f
            for j, m in enumerate(alpha):
                if m:
                    g = g.diff(j, m)
            out = out + a * g
        return out

    def adjoint(self) -> DiffOp:
        """Formal adjoint for Lebesgue measure: ``sum (-1)^|a| d^a o conj(c_a)``."""
        out = DiffOp(self.variables)
        for alpha, a in self.terms.items():
            d = DiffOp(self.variables, {alpha: (-1) ** sum(alpha)})
            out = out + compose(d, DiffOp.multiplication(a.conj()))
        return out

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: (-sum(kv[0]), tuple(-i for i in kv[0])))

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for alpha, a in self.sorted_terms():
            d = " ".join(_deriv_label(v, m) for v, m in zip(self.variables, alpha) if m)
            coef = str(a)
            if not d:
                parts.append(f"({coef})" if len(a.terms) > 1 else coef)
            elif coef == "1":
                parts.append(d)
            elif coef == "-1":
                parts.append(f"-{d}")
            elif len(a.terms) > 1:
                parts.append(f"({coef}) {d}")
            else:
                parts.append(f"{coef} {d}")
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self):
        return f"DiffOp({self.variables}, {str(self)!r})"


class OdeOp(DiffOp):
    """Differential operator in a single variable."""

    __slots__ = ()

    def __init__(self, variables, terms=None):
        super().__init__(variables, terms)
        if len(self.variables) != 1:
            raise UsageError("OdeOp takes exactly one variable")

    @classmethod
    def from_diffop(cls, op: DiffOp) -> OdeOp:
        return cls(op.variables, op.terms)

    @property
    def variable(self) -> str:
        return self.variables[0]

    def coefficient_of(self, m: int) -> Polynomial:
        return self.coefficient((m,))


def _ode(op: DiffOp) -> DiffOp:
    return OdeOp.from_diffop(op) if len(op.variables) == 1 else op


def compose(P: DiffOp, Q: DiffOp) -> DiffOp:
    """``P o Q`` expanded with the Leibniz rule."""
    _check_vars(P, Q)
    n = len(P.variables)
    terms: dict[tuple[int, ...], Polynomial] = {}
    for alpha, a in P.terms.items():
        for beta, b in Q.terms.items():
            # d^alpha (b d^beta) = sum_{gamma <= alpha} C(alpha, gamma) (d^gamma b) d^{alpha-gamma+beta}
            for gamma in itertools.product(*(range(i + 1) for i in alpha)):
                db = b
                for j, g in enumerate(gamma):
                    if g:
                        db = db.diff(j, g)
                if db.is_zero():
                    continue
                c = prod(comb(alpha[j], gamma[j]) for j in range(n))
                key = tuple(alpha[j] - gamma[j] + beta[j] for j in range(n))
                t = a * db * c
                terms[key] = terms[key] + t if key in terms else t
    return _ode(DiffOp(P.variables, terms))


def bracket(X: VectorField, Y: VectorField) -> VectorField:
    """Lie bracket ``[X, Y]`` with j-th coefficient ``X(Y_j) - Y(X_j)``."""
    _check_vars(X, Y)
    return VectorField([X(b) - Y(a) for a, b in zip(X.coefficients, Y.coefficients)])


def formal_adjoint(Z) -> FirstOrderOp:
    """Adjoint of ``sum a_j d_j + b`` w.r.t. Lebesgue measure (real variables).

    Returns ``-sum conj(a_j) d_j - sum d_j(conj(a_j)) + conj(b)``.
    """
    Z = _as_first_order(Z)
    conj = [a.conj() for a in Z.field.coefficients]
    div = Polynomial.zero(Z.variables)
    for j, a in enumerate(conj):
        div = div + a.diff(j)
    return FirstOrderOp(VectorField([-a for a in conj]), Z.zeroth.conj() - div)


def sum_of_squares(fields: Sequence) -> DiffOp:
    """``sum_j Z_j^* Z_j`` for vector fields or first-order operators."""
    fields = [_as_first_order(z) for z in fields]
    if not fields:
        raise UsageError("sum_of_squares needs at least one field")
    for z in fields[1:]:
        _check_vars(fields[0], z)
    out = DiffOp(fields[0].variables)
    for z in fields:
        out = out + compose(formal_adjoint(z).to_diffop(), z.to_diffop())
    return _ode(out)


def counterexample_fields(k: int, variables=("x", "t", "s")):
    """``(Lbar, x^k L, d/ds)`` with ``Lbar = dx - i x dt`` and ``L = dx + i x dt``.

    With two variable names the third field is omitted and a pair is returned.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise UsageError(f"k must be a positive integer, got {k!r}")
    variables = tuple(variables)
    if len(variables) not in (2, 3):
        raise UsageError("need variables (x, t) or (x, t, s)")
    x = Polynomial.monomial(variables, variables[0])
    one = Polynomial.constant(variables, 1)
    zero = Polynomial.zero(variables)
    pad = [zero] * (len(variables) - 2)
    Lbar = VectorField([one, -1j * x] + pad)
    L = VectorField([one, 1j * x] + pad)
    Z2 = L * x**k
    if len(variables) == 2:
        return Lbar, Z2
    Z3 = VectorField([zero, zero, one])
    return Lbar, Z2, Z3


def lbar_and_l(variables=("x", "t", "s")):
    variables = tuple(variables)
    x = Polynomial.monomial(variables, variables[0])
    one = Polynomial.constant(variables, 1)
    pad = [Polynomial.zero(variables)] * (len(variables) - 2)
    return VectorField([one, -1j * x] + pad), VectorField([one, 1j * x] + pad)


def evaluate(X: VectorField, p) -> np.ndarray:
    p = tuple(float(v) for v in p)
    if len(p) != len(X.variables):
        raise UsageError("point dimension does not match variables")
    return np.array([a(p) for a in X.coefficients], dtype=complex)


def numerical_rank(vectors, rtol: float = RANK_RTOL) -> tuple[int, list[int]]:
    """Rank by row reduction with magnitude pivoting.

    A pivot counts as zero when below ``rtol`` times the largest initial row
    norm. Returns the rank and indices of the rows that supplied pivots, in
    input order, so that those rows alone have the same rank.
    """
    A = np.array(vectors, dtype=complex if np.iscomplexobj(vectors) else float)
    if A.size == 0:
        return 0, []
    A = A.reshape(len(A), -1).copy()
    scale = np.max(np.linalg.norm(A, axis=1))
    if scale == 0:
        return 0, []
    thresh = rtol * scale
    rows = list(range(A.shape[0]))
    witnesses = []
    col_free = list(range(A.shape[1]))
    while rows and col_free:
        sub = np.abs(A[np.ix_(rows, col_free)])
        r, c = np.unravel_index(np.argmax(sub), sub.shape)
        if sub[r, c] < thresh:
            break
        pr, pc = rows[r], col_free[c]
        witnesses.append(pr)
        rows.remove(pr)
        col_free.remove(pc)
        for i in rows:
            A[i] -= (A[i, pc] / A[pr, pc]) * A[pr]
    return len(witnesses), sorted(witnesses)


def bracket_closure(generators: Sequence[VectorField], depth: int, labels=None):
    """Breadth-first bracket closure up to bracket length ``depth``.

    Level d holds ``[f, g]`` for every f at level d-1 and every generator g.
    Identically zero brackets are skipped. Returns ``(fields, labels)``.
    """
    if depth < 1:
        raise UsageError("depth must be >= 1")
    gens = list(generators)
    labels = list(labels) if labels else [f"Z{i + 1}" for i in range(len(gens))]
    fields, names = list(gens), list(labels)
    level = list(zip(gens, labels))
    for _ in range(depth - 1):
        nxt = []
        for f, lf in level:
            for g, lg in zip(gens, labels):
                b = bracket(f, g)
                if not b.is_zero():
                    nxt.append((b, f"[{lf},{lg}]"))
        fields += [f for f, _ in nxt]
        names += [n for _, n in nxt]
        level = nxt
    return fields, names


def hormander_rank(generators: Sequence[VectorField], p, depth: int, labels=None):
    """Complex rank at ``p`` of all brackets of length <= depth.

    Returns ``(rank, witnesses)`` where witnesses is a list of
    ``(label, VectorField)`` pairs spanning the same space at ``p``.
    """
    fields, names = bracket_closure(generators, depth, labels)
    vecs = np.array([evaluate(f, p) for f in fields])
    rank, idx = numerical_rank(vecs)
    return rank, [(names[i], fields[i]) for i in idx]


def real_rank(generators: Sequence[VectorField], p, depth: int) -> int:
    """Rank over R of the real and imaginary parts of the evaluated brackets."""
    fields, _ = bracket_closure(generators, depth)
    vecs = [evaluate(f, p) for f in fields]
    parts = [v.real for v in vecs] + [v.imag for v in vecs]
    return numerical_rank(np.array(parts))[0]


def fourier_reduce(op: DiffOp, thetas: Mapping[str, complex]) -> OdeOp:
    """Replace each ``d/dv`` by the scalar ``thetas[v]`` for the dual variables.

    Exactly one variable must remain; coefficients may not depend on the
    substituted ones. ``fourier_reduce(L, {"t": 1j*tau, "s": 0})`` gives the
    ODE satisfied by ``f`` when ``L(e^{i tau t} f(x)) = e^{i tau t} P f(x)``.
    """
    dual = [v for v in op.variables if v in thetas]
    keep = [v for v in op.variables if v not in thetas]
    if len(keep) != 1:
        raise UsageError(f"exactly one variable must remain, got {keep}")
    extra = set(thetas) - set(op.variables)
    if extra:
        raise UsageError(f"unknown variables {sorted(extra)}")
    ki = op.variables.index(keep[0])
    terms: dict[tuple[int], Polynomial] = {}
    for alpha, a in op.terms.items():
        for v in dual:
            if a.depends_on(v):
                raise UnsupportedInput(f"coefficient {a} depends on {v}")
        scalar = prod(complex(thetas[v]) ** alpha[op.variables.index(v)] for v in dual)
        if scalar == 0:
            continue
        key = (alpha[ki],)
        t = a.restrict(keep) * scalar
        terms[key] = terms[key] + t if key in terms else t
    return OdeOp(keep, terms)


def dilate(op: OdeOp, scale: float, new_var: str | None = None) -> OdeOp:
    """Rewrite ``op`` in the variable ``y`` where ``x = scale * y``.

    A term ``a x^n d^m/dx^m`` becomes ``a scale^(n-m) y^n d^m/dy^m``.
    """
    var = new_var or op.variable
    terms = {}
    for (m,), a in op.terms.items():
        terms[(m,)] = Polynomial(
            (var,), {e: c * scale ** (e[0] - m) for e, c in a.terms.items()}
        )
    return OdeOp((var,), terms)


def _first_order_1d(var, a: Polynomial, b: Polynomial) -> DiffOp:
    """``a d/dvar + b`` as a one-variable operator."""
    return OdeOp((var,), {(1,): a, (0,): b})


def p_tau(k: int, tau: float, var: str = "x") -> OdeOp:
    """Expanded ``-(dx - tau x)(dx + tau x) - (dx + tau x) x^{2k} (dx - tau x)``."""
    _check_k_tau(k, tau)
    x = Polynomial.monomial((var,), var)
    one = Polynomial.constant((var,), 1)
    minus = _first_order_1d(var, one, -tau * x)
    plus = _first_order_1d(var, one, tau * x)
    weight = DiffOp.multiplication(x ** (2 * k))
    return OdeOp.from_diffop(-compose(minus, plus) - compose(compose(plus, weight), minus))


def q_tau(k: int, tau: float, var: str = "y") -> OdeOp:
    """Expanded ``-(dy - y)(dy + y) - tau^{-k} (dy + y) y^{2k} (dy - y)``.

    Unitarily equivalent to ``p_tau(k, tau) / tau`` under ``y = sqrt(tau) x``.
    """
    _check_k_tau(k, tau)
    y = Polynomial.monomial((var,), var)
    one = Polynomial.constant((var,), 1)
    minus = _first_order_1d(var, one, -y)
    plus = _first_order_1d(var, one, y)
    weight = DiffOp.multiplication(y ** (2 * k))
    eps = float(tau) ** (-k)
    return OdeOp.from_diffop(-compose(minus, plus) - eps * compose(compose(plus, weight), minus))


def _check_k_tau(k, tau):
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise UsageError(f"k must be a positive integer, got {k!r}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")


def reduced_operator(fields: Iterable[VectorField], tau: float, x="x", t="t") -> OdeOp:
    """Rescaled ground-state operator for ``e^{i tau t} f(x)`` separated solutions.

    Builds the sum of squares of ``fields`` (which must be independent of the
    t-derivative coefficient dependence), keeps only the x and t directions,
    reduces with ``d/dt -> i tau``, and rescales ``x = y / sqrt(tau)`` and
    divides by ``tau``. For the degenerate family this equals ``q_tau``.
    """
    fields = list(fields)
    vars_ = fields[0].variables
    keep = (x, t)
    restricted = []
    for f in fields:
        idx = [vars_.index(v) for v in keep]
        others = [j for j, v in enumerate(vars_) if v not in keep]
        if all(f.coefficients[j].is_zero() for j in others):
            coeffs = [f.coefficients[j].restrict(keep) for j in idx]
            if not all(c.is_zero() for c in coeffs):
                restricted.append(VectorField(coeffs))
    op = sum_of_squares(restricted)
    ode = fourier_reduce(op, {t: 1j * tau})
    return OdeOp.from_diffop(dilate(ode, tau**-0.5, "y") * (1.0 / tau))
