import sympy
import pytest

from sumsquares.symbolic_fields import DiffOp, Polynomial, VectorField

X, T, S = sympy.symbols("x t s", real=True)
SYMS = {"x": X, "t": T, "s": S, "y": sympy.Symbol("y", real=True)}


def poly_to_sympy(p: Polynomial):
    syms = [SYMS[v] for v in p.variables]
    expr = 0
    for e, c in p.terms.items():
        c = sympy.nsimplify(c.real) + sympy.I * sympy.nsimplify(c.imag)
        term = c
        for s, k in zip(syms, e):
            term *= s**k
        expr += term
    return sympy.expand(expr)


def apply_sympy(op: DiffOp, f):
    """Act with ``op`` on a sympy expression using sympy's own differentiation."""
    syms = [SYMS[v] for v in op.variables]
    out = 0
    for alpha, a in op.terms.items():
        g = f
        for s, m in zip(syms, alpha):
            if m:
                g = sympy.diff(g, s, m)
        out += poly_to_sympy(a) * g
    return out


def field_apply_sympy(X_: VectorField, f):
    syms = [SYMS[v] for v in X_.variables]
    return sum(poly_to_sympy(a) * sympy.diff(f, s) for a, s in zip(X_.coefficients, syms))


@pytest.fixture
def generic_function():
    """Opaque smooth test function of (x, t, s)."""
    return sympy.Function("f")(X, T, S)
