import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from conftest import SYMS, apply_sympy, field_apply_sympy, poly_to_sympy
from sumsquares.symbolic_fields import (
    DiffOp, FirstOrderOp, OdeOp, Polynomial, UnsupportedInput, UsageError, VectorField,
    bracket, compose, counterexample_fields, dilate, evaluate, formal_adjoint, fourier_reduce,
    hormander_rank, lbar_and_l, numerical_rank, p_tau, q_tau, real_rank, reduced_operator,
    sum_of_squares, variables_of,
)

V3 = ("x", "t", "s")
x, t, s = variables_of(V3)
one = Polynomial.constant(V3, 1)
zero = Polynomial.zero(V3)


def ode(var, **coeffs):
    """OdeOp from keyword coefficient dicts: d0={power: coeff}, d1=..., d2=..."""
    terms = {}
    for key, poly in coeffs.items():
        terms[(int(key[1:]),)] = Polynomial((var,), {(e,): c for e, c in poly.items()})
    return OdeOp((var,), terms)


# -- strategies -------------------------------------------------------------

small = st.integers(-3, 3).map(float) | st.sampled_from([1j, -1j, 2j, 1 + 1j])


@st.composite
def polynomials(draw, variables=V3, max_deg=3, max_terms=4):
    n = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(n):
        e = tuple(draw(st.integers(0, max_deg)) for _ in variables)
        if sum(e) <= max_deg:
            terms[e] = draw(small)
    return Polynomial(variables, terms)


@st.composite
def fields(draw):
    return VectorField([draw(polynomials()) for _ in V3])


# -- Polynomial -------------------------------------------------------------

def test_polynomial_canonical_drop():
    p = Polynomial(V3, {(1, 0, 0): 1e-13, (0, 0, 0): 2})
    assert p.terms == {(0, 0, 0): 2}


def test_polynomial_equal_from_same_multiset():
    a = Polynomial(V3, {(1, 0, 0): 1, (0, 2, 0): 1j})
    b = Polynomial(V3, {(0, 2, 0): 1j, (1, 0, 0): 1})
    assert a == b and hash(a) == hash(b)


def test_polynomial_bad_exponent_length():
    with pytest.raises(UsageError):
        Polynomial(V3, {(1, 0): 1})


@given(polynomials(), polynomials())
@settings(max_examples=50, deadline=None)
def test_polynomial_product_matches_sympy(p, q):
    assert sympy.expand(poly_to_sympy(p * q) - poly_to_sympy(p) * poly_to_sympy(q)) == 0


def test_polynomial_diff_and_eval():
    p = x**3 * t + 2j * s
    assert p.diff("x") == 3 * x**2 * t
    assert p((2, 1, 0)) == 8


# -- bracket ----------------------------------------------------------------

def test_bracket_self_is_zero():
    Z1, Z2, _ = counterexample_fields(1)
    assert bracket(Z2, Z2).is_zero()


def test_bracket_lbar_l():
    Lbar, L = lbar_and_l(V3)
    assert bracket(Lbar, L) == VectorField([zero, 2j * one, zero])


def test_bracket_z1_z2_k1():
    Z1, Z2, _ = counterexample_fields(1)
    assert bracket(Z1, Z2) == VectorField([one, 3j * x, zero])


def test_bracket_mismatched_variables():
    Z1, Z2 = counterexample_fields(1, ("x", "t"))
    Z3 = counterexample_fields(1)[2]
    with pytest.raises(UsageError):
        bracket(Z1, Z3)


@given(fields(), fields())
@settings(max_examples=40, deadline=None)
def test_bracket_antisymmetric(X, Y):
    assert bracket(X, Y).isclose(-bracket(Y, X))


@given(fields(), fields(), fields())
@settings(max_examples=25, deadline=None)
def test_bracket_jacobi(X, Y, Z):
    J = bracket(X, bracket(Y, Z)) + bracket(Y, bracket(Z, X)) + bracket(Z, bracket(X, Y))
    assert J.isclose(VectorField([zero] * 3), tol=1e-9)


@given(fields(), fields())
@settings(max_examples=20, deadline=None)
def test_bracket_is_commutator_on_functions(X, Y):
    f = sympy.Function("f")(*[SYMS[v] for v in V3])
    lhs = field_apply_sympy(bracket(X, Y), f)
    rhs = field_apply_sympy(X, field_apply_sympy(Y, f)) - field_apply_sympy(Y, field_apply_sympy(X, f))
    assert sympy.simplify(sympy.expand(lhs - rhs)) == 0


# -- adjoint ----------------------------------------------------------------

def test_adjoint_z1():
    Z1 = counterexample_fields(1)[0]
    adj = formal_adjoint(Z1)
    assert adj == FirstOrderOp(VectorField([-one, -1j * x, zero]))


def test_adjoint_z2_k1():
    Z2 = counterexample_fields(1)[1]
    adj = formal_adjoint(Z2)
    assert adj == FirstOrderOp(VectorField([-x, 1j * x**2, zero]), -one)


@given(fields(), polynomials())
@settings(max_examples=40, deadline=None)
def test_adjoint_involution(X, b):
    Z = FirstOrderOp(X, b)
    assert formal_adjoint(formal_adjoint(Z)).isclose(Z)


def test_adjoint_pairing_by_integration():
    """<Z f, g> = <f, Z* g> for compactly decaying f, g (Lebesgue measure on R)."""
    y = sympy.Symbol("x", real=True)
    V1 = ("x",)
    xx = Polynomial.monomial(V1, "x")
    Z = FirstOrderOp(VectorField([xx**2 * (1 + 2j)]), xx * 1j)
    f = sympy.exp(-y**2) * (1 + y)
    g = sympy.exp(-y**2) * (2 - y**2)
    lhs = sympy.integrate(apply_sympy(Z.to_diffop(), f) * sympy.conjugate(g), (y, -sympy.oo, sympy.oo))
    rhs = sympy.integrate(f * sympy.conjugate(apply_sympy(formal_adjoint(Z).to_diffop(), g)),
                          (y, -sympy.oo, sympy.oo))
    assert sympy.simplify(lhs - rhs) == 0


# -- compose ----------------------------------------------------------------

def test_compose_identity():
    Q = counterexample_fields(2)[1].to_diffop()
    assert compose(DiffOp.identity(V3), Q) == Q


def test_compose_leibniz_single_term():
    dx = DiffOp.partial(V3, "x")
    assert compose(dx, DiffOp.multiplication(x)) == DiffOp(V3, {(1, 0, 0): x, (0, 0, 0): one})


def test_compose_z1_adjoint_z1():
    P = DiffOp(V3, {(1, 0, 0): -one, (0, 1, 0): -1j * x})
    Q = DiffOp(V3, {(1, 0, 0): one, (0, 1, 0): -1j * x})
    expected = DiffOp(V3, {(2, 0, 0): -one, (0, 2, 0): -(x**2), (0, 1, 0): 1j * one})
    assert compose(P, Q) == expected


@st.composite
def diffops(draw):
    n = draw(st.integers(1, 3))
    terms = {}
    for _ in range(n):
        alpha = tuple(draw(st.integers(0, 1)) for _ in V3)
        terms[alpha] = draw(polynomials(max_deg=2, max_terms=2))
    return DiffOp(V3, terms)


@given(diffops(), diffops())
@settings(max_examples=25, deadline=None)
def test_compose_matches_sympy_action(P, Q):
    f = sympy.Function("f")(*[SYMS[v] for v in V3])
    lhs = apply_sympy(compose(P, Q), f)
    rhs = apply_sympy(P, apply_sympy(Q, f))
    assert sympy.expand(lhs - rhs) == 0


def test_compose_mismatch():
    with pytest.raises(UsageError):
        compose(DiffOp.identity(V3), DiffOp.identity(("x", "t")))


# -- sum of squares ---------------------------------------------------------

def test_sos_ds():
    Z3 = counterexample_fields(1)[2]
    assert sum_of_squares([Z3]) == DiffOp(V3, {(0, 0, 2): -one})


def test_sos_z1():
    Z1 = counterexample_fields(1)[0]
    expected = DiffOp(V3, {(2, 0, 0): -one, (0, 2, 0): -(x**2), (0, 1, 0): 1j * one})
    assert sum_of_squares([Z1]) == expected


def test_sos_full_k1():
    L = sum_of_squares(counterexample_fields(1))
    expected = DiffOp(V3, {
        (2, 0, 0): -(one + x**2),
        (0, 2, 0): -(x**2) * (one + x**2),
        (0, 0, 2): -one,
        (1, 0, 0): -2 * x,
        (0, 1, 0): 1j * (one - 3 * x**2),
    })
    assert L == expected
    assert L.order == 2


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_sos_formally_self_adjoint(k):
    L = sum_of_squares(counterexample_fields(k))
    assert L.adjoint().isclose(L)


def test_sos_empty():
    with pytest.raises(UsageError):
        sum_of_squares([])


def test_sos_matches_sympy_expansion(generic_function):
    """sum Z_j^* Z_j f computed entirely in sympy from the field definitions."""
    f = generic_function
    X_, T_, S_ = SYMS["x"], SYMS["t"], SYMS["s"]
    k = 2
    Z = [lambda g: sympy.diff(g, X_) - sympy.I * X_ * sympy.diff(g, T_),
         lambda g: X_**k * (sympy.diff(g, X_) + sympy.I * X_ * sympy.diff(g, T_)),
         lambda g: sympy.diff(g, S_)]
    # Z_j^* g = -d_x(conj(a) g) - d_t(conj(b) g) - ... for real variables
    Zs = [lambda g: -sympy.diff(g, X_) - sympy.I * sympy.diff(X_ * g, T_),
          lambda g: -sympy.diff(X_**k * g, X_) + sympy.I * sympy.diff(X_**(k + 1) * g, T_),
          lambda g: -sympy.diff(g, S_)]
    ref = sum(zs(z(f)) for z, zs in zip(Z, Zs))
    ours = apply_sympy(sum_of_squares(counterexample_fields(k)), f)
    assert sympy.expand(ref - ours) == 0


# -- fields and evaluation ----------------------------------------------------

def test_fields_k1_k2():
    _, Z2, Z3 = counterexample_fields(1)
    assert Z2 == VectorField([x, 1j * x**2, zero])
    assert counterexample_fields(2)[1] == VectorField([x**2, 1j * x**3, zero])
    assert Z3 == VectorField([zero, zero, one])


def test_fields_bad_k():
    with pytest.raises(UsageError):
        counterexample_fields(0)


def test_evaluate():
    Z1, Z2, _ = counterexample_fields(1)
    np.testing.assert_array_equal(evaluate(Z2, (0, 0, 0)), [0, 0, 0])
    np.testing.assert_array_equal(evaluate(Z1, (0, 0, 0)), [1, 0, 0])
    np.testing.assert_array_equal(evaluate(Z2, (2, 0, 0)), [2, 4j, 0])
    with pytest.raises(UsageError):
        evaluate(Z1, (0, 0))


# -- ranks ------------------------------------------------------------------

def test_rank_examples():
    gens = counterexample_fields(1)
    assert hormander_rank(gens, (0, 0, 0), 2)[0] == 2
    rank, wit = hormander_rank(gens, (0, 0, 0), 3)
    assert rank == 3
    labels = [lbl for lbl, _ in wit]
    assert len(wit) == 3 and any(lbl.count("[") == 2 for lbl in labels)
    assert hormander_rank(gens, (2, 0, 0), 1)[0] == 3


def test_rank_witness_value():
    Z1, Z2, _ = counterexample_fields(1)
    W = bracket(Z1, bracket(Z1, Z2))
    np.testing.assert_allclose(evaluate(W, (0, 0, 0)), [0, 4j, 0])


@pytest.mark.parametrize("k", [1, 2, 3])
def test_rank_depth_threshold(k):
    gens = counterexample_fields(k)
    assert hormander_rank(gens, (0, 0, 0), k + 2)[0] == 3
    assert hormander_rank(gens, (0, 0, 0), k + 1)[0] < 3
    assert real_rank(gens, (0, 0, 0), k + 2) == 3


def test_rank_away_from_origin():
    gens = counterexample_fields(3)
    assert hormander_rank(gens, (0.5, 1.0, -2.0), 1)[0] == 3


def test_numerical_rank_tolerance():
    v = np.array([[1, 0, 0], [0, 1e-12, 0], [1, 1, 0]], dtype=complex)
    assert numerical_rank(v)[0] == 2
    assert numerical_rank(np.zeros((2, 3)))[0] == 0


def test_witnesses_reproduce_rank():
    gens = counterexample_fields(2)
    rank, wit = hormander_rank(gens, (0, 0, 0), 4)
    vecs = np.array([evaluate(f, (0, 0, 0)) for _, f in wit])
    assert np.linalg.matrix_rank(vecs) == rank == len(wit)


# -- reduction --------------------------------------------------------------

def test_reduce_z1_sos():
    tau = 3.0
    got = fourier_reduce(sum_of_squares([counterexample_fields(1)[0]]), {"t": 1j * tau, "s": 0})
    assert got.isclose(ode("x", d2={0: -1}, d0={2: tau**2, 0: -tau}))


def test_reduce_ds():
    op = DiffOp(V3, {(0, 0, 2): -one})
    sigma = 1.7
    got = fourier_reduce(op, {"t": 0, "s": sigma})
    assert got.isclose(ode("x", d0={0: -sigma**2}))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("tau", [1.0, 2.0, 4.0])
def test_reduce_matches_p_tau(k, tau):
    L2 = sum_of_squares(counterexample_fields(k, ("x", "t")))
    assert fourier_reduce(L2, {"t": 1j * tau}).isclose(p_tau(k, tau), tol=1e-12)


def test_reduce_rejects_t_dependence():
    op = DiffOp(V3, {(0, 1, 0): t})
    with pytest.raises(UnsupportedInput):
        fourier_reduce(op, {"t": 1j, "s": 0})


def test_p_tau_first_term_k1():
    # P_tau minus its weighted term equals -(dx - tau x)(dx + tau x)
    tau = 5.0
    full = p_tau(1, tau)
    weighted = p_tau(1, tau) - ode("x", d2={0: -1}, d0={2: tau**2, 0: -tau})
    second = ode("x", d2={2: -1}, d1={1: -2}, d0={2: 3 * tau, 4: tau**2})
    assert weighted.isclose(second)
    assert full.order == 2


def test_q_tau_zeroth_at_origin():
    Q = q_tau(2, 7.0)
    assert Q.coefficient_of(0)((0.0,)) == -1
    base = q_tau(1, 1e300)  # weighted term negligible
    assert base.isclose(ode("y", d2={0: -1}, d0={2: 1, 0: -1}), tol=1e-12)


def test_q_tau_is_rescaled_p_tau():
    tau = 4.0
    rescaled = dilate(p_tau(1, tau), tau**-0.5, "y") * (1 / tau)
    assert OdeOp.from_diffop(rescaled).isclose(q_tau(1, tau))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_reduced_operator_is_q_tau(k):
    assert reduced_operator(counterexample_fields(k), 9.0).isclose(q_tau(k, 9.0), tol=1e-12)


def test_tau_domain():
    with pytest.raises(ValueError):
        p_tau(1, 0.0)
    with pytest.raises(ValueError):
        q_tau(1, -1.0)


def test_render():
    text = str(sum_of_squares(counterexample_fields(1)))
    assert "d2/dx2" in text and "d2/ds2" in text
    assert str(DiffOp(V3)) == "0"
