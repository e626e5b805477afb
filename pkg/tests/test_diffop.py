"""Operators in theta, duality, self-duality conditions, and families."""

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dhrfield.diffop import (
    DiffOp, OrePoly, dependent_coefficient_formulas, duality_comparisons,
    is_self_dual, op_adjoint, op_compose, op_dual, psi_log_ratios,
    self_dual_operator, self_duality_residuals, self_duality_via_conjugation,
    twisted_conjugate,
)
from dhrfield.exactalg import RatFunc, as_expr, expr_equal, jet
from dhrfield.families import (
    FamilyError, family_from_dict, hypergeometric_family, list_presets,
    load_family, load_preset, parse_rational_function,
)

Z = RatFunc.z()


def A(i, k=0):
    return as_expr(jet(i, k))


# ------------------------------------------------------------ Ore algebra

def test_ore_composition_example():
    # (D + z)(D + z) = D^2 + 2z D + (z + z^2) since D.z = z D + z
    op = OrePoly([Z, 1])
    sq = op * op
    assert sq.coeff(2).equals(1)
    assert sq.coeff(1).equals(2 * as_expr(Z))
    assert sq.coeff(0).equals(as_expr(Z) + as_expr(Z) ** 2)


def test_ore_apply():
    d2 = OrePoly([0, 0, 1])
    assert d2.apply(Z ** 3).equals(9 * as_expr(Z) ** 3)
    dp1 = OrePoly([1, 1])
    assert dp1.apply(Z).equals(2 * as_expr(Z))


@st.composite
def z_polys(draw):
    coeffs = draw(st.lists(st.integers(-3, 3), min_size=1, max_size=3))
    return RatFunc(coeffs)


@st.composite
def ore_ops(draw):
    k = draw(st.integers(1, 2))
    return OrePoly([draw(z_polys()) for _ in range(k + 1)])


@given(ore_ops(), ore_ops(), ore_ops())
@settings(max_examples=25, deadline=None)
def test_ore_associative(p, q, r):
    assert ((p * q) * r).equals(p * (q * r))


@given(ore_ops(), ore_ops(), z_polys())
@settings(max_examples=25, deadline=None)
def test_compose_matches_nested_apply(p, q, f):
    assert (p * q).apply(f).equals(p.apply(q.apply(f)))


# ------------------------------------------------------------------ duality

def _sample_op(n):
    """A concrete operator with mildly interesting rational coefficients."""
    return DiffOp([(i + 1 + Z) / (1 - 2 * Z) if i % 2 else Z ** 2 - i
                   for i in range(n + 1)])


def test_dual_is_monic_same_order():
    for n in range(1, 5):
        d = op_dual(DiffOp.generic(n))
        assert d.order == n + 1


def test_dual_agrees_with_signed_adjoint():
    for n in range(1, 5):
        op = DiffOp.generic(n)
        lhs = op_dual(op).to_ore()
        sign = 1 if n % 2 else -1
        rhs = OrePoly([sign]) * op_adjoint(op)
        assert lhs.equals(rhs)


def test_dual_involution_orders_2_to_6():
    for n in range(1, 6):
        op = _sample_op(n)
        assert op_dual(op_dual(op)).equals(op)
    for n in range(1, 4):
        op = DiffOp.generic(n)
        assert op_dual(op_dual(op)).equals(op)


def test_dual_via_conjugation_on_quintic():
    # two independent routes: residuals of the theta^i comparisons, and the
    # literal operator identity psi^{-1} L psi = dual(L)
    op = load_preset("quintic").operator()
    assert is_self_dual(op)
    assert self_duality_via_conjugation(op)


def test_conjugation_route_on_generic_order_two():
    op = DiffOp.generic(1)
    assert twisted_conjugate(op).equals(op_dual(op).to_ore())


# --------------------------------------------------------------- psi ratios

def test_psi_log_ratios_frozen_n5():
    # rho_1 = (1/3) a5; rho_2 = (1/9) a5^2 + (1/3) theta a5;
    # rho_3 = (1/27) a5^3 + (1/3) a5 theta a5 + (1/3) theta^2 a5.
    rho = psi_log_ratios(DiffOp.generic(5), 3)
    assert rho[0].equals(1)
    assert expr_equal(rho[1], Fraction(1, 3) * A(5))
    assert expr_equal(rho[2], Fraction(1, 9) * A(5) ** 2 + Fraction(1, 3) * A(5, 1))
    assert expr_equal(
        rho[3],
        Fraction(1, 27) * A(5) ** 3 + Fraction(1, 3) * A(5) * A(5, 1)
        + Fraction(1, 3) * A(5, 2))


def test_psi_log_ratios_length():
    rho = psi_log_ratios(DiffOp.generic(3), 5)
    assert len(rho) == 6


# ------------------------------------------------------ residual structure

def test_residual_counts():
    for n, count in [(1, 0), (2, 1), (3, 1), (4, 2), (5, 2), (6, 3)]:
        res = self_duality_residuals(DiffOp.generic(n), check_odd=False)
        assert len(res) == count


def test_every_order_two_operator_is_self_dual():
    assert self_duality_residuals(DiffOp.generic(1)) == []
    assert is_self_dual(DiffOp.generic(1))
    assert is_self_dual(DiffOp([Z, (1 + Z) / (1 - Z)]))


def test_comparison_ladder_structure():
    # top two comparisons and the first odd-distance one vanish for
    # arbitrary coefficients; the first even-distance one does not
    for n in range(1, 7):
        comp = duality_comparisons(DiffOp.generic(n))
        assert comp[n + 1].is_zero()
        assert comp[n].is_zero()
        if n >= 1:
            assert comp[n - 1].is_zero()
        if n >= 2:
            assert not comp[n - 2].is_zero()


def test_deep_odd_comparisons_follow_from_even_conditions():
    # at distance >= 3 the odd comparisons are consequences, not identities:
    # generically nonzero, but zero on every operator with vanishing residuals
    comp = duality_comparisons(DiffOp.generic(3))
    assert not comp[0].is_zero()
    op = self_dual_operator(
        5, {5: Z, 4: 1 / (1 - Z), 2: Z ** 2, 0: RatFunc.const(1)})
    for i, c in duality_comparisons(op).items():
        assert c.is_zero(), f"comparison at theta^{i}"


def test_quintic_residuals_vanish_perturbed_do_not():
    fam = load_preset("quintic")
    op = fam.operator()
    assert all(r.is_zero() for r in self_duality_residuals(op))
    bad_coeffs = list(fam.coeffs)
    bad_coeffs[2] = bad_coeffs[2] + Z
    bad = DiffOp(bad_coeffs)
    assert any(not r.is_zero() for r in self_duality_residuals(bad))
    assert not self_duality_via_conjugation(bad)


# ------------------------------------------------- solved coefficient forms

def test_formula_n3_plus_convention():
    f = dependent_coefficient_formulas(3, convention="plus")
    assert set(f) == {1}
    expected = (Fraction(1, 2) * A(2) * A(3) - Fraction(3, 4) * A(3) * A(3, 1)
                - Fraction(1, 8) * A(3) ** 3 + A(2, 1)
                - Fraction(1, 2) * A(3, 2))
    assert expr_equal(f[1], expected)


def test_formula_n3_pf_convention():
    f = dependent_coefficient_formulas(3, convention="pf")
    expected = (Fraction(3, 4) * A(3) * A(3, 1) + A(2, 1)
                - Fraction(1, 2) * A(3, 2) - Fraction(1, 8) * A(3) ** 3
                - Fraction(1, 2) * A(2) * A(3))
    assert expr_equal(f[1], expected)


def test_formula_n5_plus_convention():
    f = dependent_coefficient_formulas(5, convention="plus")
    assert set(f) == {3, 1}
    exp_a3 = (Fraction(2, 3) * A(4) * A(5) - Fraction(5, 3) * A(5) * A(5, 1)
              - Fraction(5, 27) * A(5) ** 3 + 2 * A(4, 1)
              - Fraction(5, 3) * A(5, 2))
    assert expr_equal(f[3], exp_a3)
    exp_a1 = (A(2, 1) - A(4, 3) + A(5, 4) - A(4, 2) * A(5) - A(4, 1) * A(5, 1)
              + Fraction(5, 3) * A(5) * A(5, 1) ** 2
              + Fraction(1, 3) * A(2) * A(5)
              - Fraction(1, 27) * A(4) * A(5) ** 3
              + Fraction(10, 27) * A(5) ** 3 * A(5, 1)
              + Fraction(1, 81) * A(5) ** 5
              - Fraction(1, 3) * A(4, 1) * A(5) ** 2
              - Fraction(1, 3) * A(4) * A(5) * A(5, 1)
              + Fraction(10, 9) * A(5) ** 2 * A(5, 2)
              + Fraction(10, 3) * A(5, 1) * A(5, 2)
              - Fraction(1, 3) * A(4) * A(5, 2)
              + Fraction(5, 3) * A(5) * A(5, 3))
    assert expr_equal(f[1], exp_a1)


def test_formula_n5_pf_convention():
    f = dependent_coefficient_formulas(5, convention="pf")
    exp_a3 = (-Fraction(2, 3) * A(4) * A(5) + Fraction(5, 3) * A(5) * A(5, 1)
              - Fraction(5, 27) * A(5) ** 3 - Fraction(5, 3) * A(5, 2)
              + 2 * A(4, 1))
    assert expr_equal(f[3], exp_a3)
    exp_a1 = (A(2, 1) - A(4, 3) + A(5, 4) + A(4, 2) * A(5) + A(4, 1) * A(5, 1)
              + Fraction(5, 3) * A(5) * A(5, 1) ** 2
              - Fraction(1, 3) * A(2) * A(5)
              + Fraction(1, 27) * A(4) * A(5) ** 3
              - Fraction(10, 27) * A(5) ** 3 * A(5, 1)
              + Fraction(1, 81) * A(5) ** 5
              - Fraction(1, 3) * A(4, 1) * A(5) ** 2
              - Fraction(1, 3) * A(4) * A(5) * A(5, 1)
              + Fraction(10, 9) * A(5) ** 2 * A(5, 2)
              - Fraction(10, 3) * A(5, 1) * A(5, 2)
              + Fraction(1, 3) * A(4) * A(5, 2)
              - Fraction(5, 3) * A(5) * A(5, 3))
    assert expr_equal(f[1], exp_a1)


def test_first_solved_coefficient_general_form():
    # a_{n-2} in the plus convention for a run of orders
    for n in range(2, 7):
        f = dependent_coefficient_formulas(n, convention="plus")
        expected = (Fraction(n - 1, n + 1) * A(n - 1) * A(n)
                    - Fraction(n * (n - 1), 2 * (n + 1)) * A(n) * A(n, 1)
                    - Fraction(n * (n - 1), 3 * (n + 1) ** 2) * A(n) ** 3
                    + Fraction(n - 1, 2) * A(n - 1, 1)
                    - Fraction(n * (n - 1), 12) * A(n, 2))
        assert expr_equal(f[n - 2], expected)


def test_self_dual_operator_constructor():
    op4 = self_dual_operator(4, {4: Z / (1 - Z), 3: 1 / (1 + Z), 1: Z ** 2})
    assert is_self_dual(op4)
    assert self_duality_via_conjugation(op4)
    op5 = self_dual_operator(
        5, {5: 2 * Z, 4: Z / (1 - 3 * Z), 2: Z, 0: RatFunc.const(7)})
    assert is_self_dual(op5)
    assert self_duality_via_conjugation(op5)


def test_self_dual_operator_missing_free_coefficient():
    with pytest.raises(ValueError):
        self_dual_operator(4, {4: Z, 3: Z})


# ----------------------------------------------------------------- families

def test_fourteen_presets():
    names = list_presets()
    assert len(names) == 14
    assert names[0] == "X(5)"
    for name in names:
        fam = load_preset(name)
        assert fam.n == 3
        assert fam.atilde is not None


def test_preset_aliases_and_indices():
    q = load_preset("quintic")
    assert q.name == "X(5)"
    assert load_preset("1").name == "X(5)"
    assert load_preset(14).name == "X(2,12)"
    with pytest.raises(FamilyError):
        load_preset("X(7)")


def test_quintic_coefficients():
    fam = load_preset("quintic")
    c = 3125
    denom = 1 - c * Z
    assert fam.coeffs[3] == 6250 * Z / denom
    assert fam.coeffs[2] == 4375 * Z / denom
    assert fam.coeffs[1] == 1250 * Z / denom
    assert fam.coeffs[0] == 120 * Z / denom
    assert fam.atilde == 1 / denom


def test_hypergeometric_coefficient_closed_forms():
    # a2 = c z (1 + r1 + r2 - r1^2 - r2^2)/(1 - c z), a3 = 2 c z/(1 - c z)
    for name in ("X(3,3)", "X(2,12)"):
        fam = load_preset(name)
        r1, r2, c = fam.params["r1"], fam.params["r2"], fam.params["c"]
        gear = c * Z / (1 - c * Z)
        assert fam.coeffs[3] == 2 * gear
        assert fam.coeffs[2] == gear * (1 + r1 + r2 - r1 ** 2 - r2 ** 2)
        assert fam.coeffs[1] == gear * (r1 + r2 - r1 ** 2 - r2 ** 2)
        assert fam.coeffs[0] == gear * (r1 * r2 * (1 - r1) * (1 - r2))


def test_random_hypergeometric_operators_are_self_dual():
    for r1, r2, c in [(Fraction(1, 7), Fraction(2, 7), 49),
                      (Fraction(1, 2), Fraction(1, 3), -12),
                      (Fraction(3, 11), Fraction(5, 11), 1)]:
        op = hypergeometric_family(r1, r2, c).operator()
        assert is_self_dual(op)


# ------------------------------------------------------------------ parsing

def test_parse_rational_function():
    f = parse_rational_function("120*z/(1 - 3125*z)")
    assert f == 120 * Z / (1 - 3125 * Z)
    assert parse_rational_function("z^2 - 1/2") == Z ** 2 - Fraction(1, 2)
    assert parse_rational_function("-z^-1") == -(Z ** -1)
    assert parse_rational_function("(1+z)*(1-z)") == 1 - Z ** 2
    assert parse_rational_function("  7  ") == RatFunc.const(7)


@pytest.mark.parametrize("bad", ["z z", "2*", "(z", "w", "", "1/^2", "z^"])
def test_parse_errors(bad):
    with pytest.raises(FamilyError):
        parse_rational_function(bad)


def test_family_from_toml(tmp_path):
    body = """
name = "custom quintic"
n = 3
atilde = "1/(1 - 3125*z)"

[coefficients]
a0 = "120*z/(1 - 3125*z)"
a1 = "1250*z/(1 - 3125*z)"
a2 = "4375*z/(1 - 3125*z)"
a3 = "6250*z/(1 - 3125*z)"
"""
    p = tmp_path / "fam.toml"
    p.write_text(body)
    fam = load_family(str(p))
    ref = load_preset("quintic")
    assert fam.name == "custom quintic"
    assert fam.n == 3
    assert all(x == y for x, y in zip(fam.coeffs, ref.coeffs))
    assert fam.atilde == ref.atilde


def test_family_dict_validation():
    with pytest.raises(FamilyError):
        family_from_dict({"coefficients": {}})
    with pytest.raises(FamilyError):
        family_from_dict({"n": 1, "coefficients": {"a0": "z"}})
    with pytest.raises(FamilyError):
        family_from_dict(
            {"n": 1, "coefficients": {"a0": "z", "a1": "z", "a2": "z"}})
