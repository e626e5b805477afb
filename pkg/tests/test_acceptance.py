"""End-to-end gate: one test per frozen deliverable, with runtime budgets.

Each test re-derives a pile of published formulas from scratch and
compares against the displays frozen here; the per-test budgets keep the
whole gate comfortably interactive.
"""

import math
import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

from dhrfield.connection import (
    flatness_residuals, intersection_matrix, phi_matrix,
)
from dhrfield.diffop import (
    DiffOp, dependent_coefficient_formulas, generic_self_dual,
    self_duality_residuals,
)
from dhrfield.exactalg import (
    as_expr, atilde_sym, chart_sym, expr_equal, free_sym, jet, jet_derive,
    mat_add, mat_mul, mat_transpose,
)
from dhrfield.families import list_presets, load_preset
from dhrfield.moduli import (
    compatibility_check, compute_y_zdot, derive_vector_field,
    moduli_dimension, solve_dependent_entries,
)
from dhrfield.numint import (
    compile_exprs, convergence_orders, integrate_ramanujan,
    mobius_invariance_check,
)
from dhrfield.qseries import (
    jacobi_residual, pushforward_check, verify_darboux_halphen,
    verify_ramanujan,
)


def A(i, k=0):
    return as_expr(jet(i, k))


def T(k):
    return chart_sym(k).expr()


@contextmanager
def budget(seconds):
    start = time.perf_counter()
    yield
    assert time.perf_counter() - start < seconds


def test_criterion_1_coefficient_relations():
    with budget(10):
        # order four, monic-sum convention: the five-term closed form
        f3 = dependent_coefficient_formulas(3, convention="plus")
        want_a1 = (Fraction(1, 2) * A(2) * A(3)
                   - Fraction(3, 4) * A(3) * A(3, 1)
                   - Fraction(1, 8) * A(3) ** 3
                   + A(2, 1) - Fraction(1, 2) * A(3, 2))
        assert expr_equal(f3[1], want_a1)

        # order six: both solved relations, substituted back, kill every
        # duality residual identically (the odd-distance comparisons are
        # asserted to follow)
        assert all(r.is_zero() for r in
                   self_duality_residuals(generic_self_dual(5),
                                          check_odd=True))

        # the two printed variants of the order-six relations differ only
        # by the sign convention for the coefficients; the bridge is
        # "negate every jet, then negate the solved formula"
        plus = dependent_coefficient_formulas(5, convention="plus")
        pf = dependent_coefficient_formulas(5, convention="pf")
        flip = {}
        for idx in range(6):
            for order in range(7):
                s = jet(idx, order)
                flip[s] = -s.expr()
        for i in (3, 1):
            assert expr_equal(pf[i], -(plus[i].subs(flip)))
        want_pf_a3 = (-Fraction(2, 3) * A(4) * A(5)
                      + Fraction(5, 3) * A(5) * A(5, 1)
                      - Fraction(5, 27) * A(5) ** 3
                      - Fraction(5, 3) * A(5, 2) + 2 * A(4, 1))
        assert expr_equal(pf[3], want_pf_a3)


def test_criterion_2_intersection_entries():
    with budget(10):
        im3 = intersection_matrix(DiffOp.generic(3), mode="defer")
        at3 = atilde_sym(3).expr()
        assert im3.entry(2, 4).equals(-Fraction(1, 2) * at3 * A(3))
        assert im3.entry(3, 4).equals(
            Fraction(1, 4) * at3 * A(3) ** 2 + at3 * A(2)
            - Fraction(1, 2) * at3 * A(3, 1))

        im5 = intersection_matrix(DiffOp.generic(5), mode="defer")
        at5 = atilde_sym(5).expr()
        printed = {
            (2, 6): -Fraction(2, 3) * A(5),
            (3, 5): Fraction(1, 3) * A(5),
            (3, 6): A(4) + Fraction(4, 9) * A(5) ** 2
                    - Fraction(2, 3) * A(5, 1),
            (4, 5): -A(4) - Fraction(1, 3) * A(5) ** 2 + A(5, 1),
            (4, 6): -A(3) - A(4) * A(5) - Fraction(8, 27) * A(5) ** 3
                    + A(4, 1) + Fraction(4, 3) * A(5) * A(5, 1)
                    - Fraction(2, 3) * A(5, 2),
            (5, 6): A(2) + Fraction(2, 3) * A(3) * A(5) + A(4) ** 2
                    + A(4) * A(5) ** 2 + Fraction(16, 81) * A(5) ** 4
                    - A(3, 1) - Fraction(5, 3) * A(5) * A(4, 1)
                    - Fraction(16, 9) * A(5) ** 2 * A(5, 1)
                    - 2 * A(4) * A(5, 1) + Fraction(4, 3) * A(5, 1) ** 2
                    + A(4, 2) + Fraction(16, 9) * A(5) * A(5, 2)
                    - Fraction(2, 3) * A(5, 3),
        }
        for (i, j), body in printed.items():
            assert im5.entry(i, j).equals(at5 * body), (i, j)


def _a3_reduction():
    forms = dependent_coefficient_formulas(5, convention="pf")
    subs = {}
    cur = forms[3]
    for k in range(5):
        subs[jet(3, k)] = cur
        cur = jet_derive(cur)
    return subs


def test_criterion_3_charts_and_fields():
    with budget(60):
        # ---- order four: the four dependent entries
        om3 = intersection_matrix(generic_self_dual(3), mode="strict")
        ch3 = solve_dependent_entries(3, om3)
        at = atilde_sym(3).expr()
        chart3 = {
            (3, 3): -1 / (at * T(3)),
            (4, 2): (4 * at * T(3) * T(4) - 4 * at * T(2) * T(5)
                     - A(3) ** 2 - 4 * A(2) + 2 * A(3, 1)) / (4 * at * T(1)),
            (4, 3): (2 * T(2) - T(3) * A(3)) / (2 * at * T(1) * T(3)),
            (4, 4): 1 / (at * T(1)),
        }
        for cell, want in chart3.items():
            assert expr_equal(ch3.dependent[cell], want), cell

        # ---- order four: the seven-equation field
        sys3 = derive_vector_field(generic_self_dual(3))
        field3 = [
            T(0) * T(3) / T(1),
            T(2),
            -at * T(3) ** 3 * T(4) / T(1),
            -(T(2) * T(3) + at * T(3) ** 3 * T(5)) / T(1),
            -T(6),
            (4 * at * T(2) * T(5) - 8 * at * T(3) * T(4)
             + A(3) ** 2 + 4 * A(2) - 2 * A(3, 1)) / (4 * at * T(1)),
            -T(3) * A(0) / (at * T(1) ** 2),
        ]
        assert len(sys3.rhs) == 7
        for k, want in enumerate(field3):
            assert expr_equal(sys3.rhs[k], want), k

        # ---- order six: the nine dependent entries.  Seven are literal;
        # the printed s62/s63 keep the dependent coefficient a_3 while the
        # solver works on the generic self-dual operator where a_3 is
        # already substituted, so those two are compared after reduction.
        om5 = intersection_matrix(generic_self_dual(5), mode="strict")
        ch5 = solve_dependent_entries(5, om5)
        at = atilde_sym(5).expr()
        chart5 = {
            (4, 4): 1 / (at * T(6)),
            (5, 3): (-3 * at * T(5) * T(9) + 3 * at * T(6) * T(8)
                     + 3 * A(4) + A(5) ** 2 - 3 * A(5, 1)) / (3 * at * T(3)),
            (5, 4): (-3 * T(5) + T(6) * A(5)) / (3 * at * T(3) * T(6)),
            (5, 5): -1 / (at * T(3)),
            (6, 4): (9 * T(2) * T(5) - 3 * T(2) * T(6) * A(5)
                     - 9 * T(3) * T(4) - 9 * T(3) * T(6) * A(4)
                     - 2 * T(3) * T(6) * A(5) ** 2
                     + 6 * T(3) * T(6) * A(5, 1))
                    / (9 * at * T(1) * T(3) * T(6)),
            (6, 5): (3 * T(2) - 2 * T(3) * A(5)) / (3 * at * T(1) * T(3)),
            (6, 6): 1 / (at * T(1)),
        }
        for cell, want in chart5.items():
            assert expr_equal(ch5.dependent[cell], want), cell
        subs = _a3_reduction()
        disp_62 = (-27 * at * T(2) * T(11) + 27 * at * T(3) * T(10)
                   - 27 * at * T(4) * T(8) + 27 * at * T(5) * T(7)
                   - 27 * A(2) - 27 * A(3) * A(5) + 27 * A(3, 1)
                   - 15 * A(4) * A(5) ** 2 + 9 * A(4) * A(5, 1)
                   + 54 * A(5) * A(4, 1) - 27 * A(4, 2) - 4 * A(5) ** 4
                   + 42 * A(5) ** 2 * A(5, 1) - 54 * A(5) * A(5, 2)
                   - 18 * A(5, 1) ** 2 + 18 * A(5, 3)) / (27 * at * T(1))
        disp_63 = (27 * at * T(2) * T(5) * T(9)
                   - 27 * at * T(2) * T(6) * T(8)
                   - 27 * at * T(3) * T(4) * T(9)
                   + 27 * at * T(3) * T(6) * T(7)
                   - 27 * T(2) * A(4) - 9 * T(2) * A(5) ** 2
                   + 27 * T(2) * A(5, 1) - 27 * T(3) * A(3)
                   - 9 * T(3) * A(4) * A(5) + 27 * T(3) * A(4, 1)
                   - 2 * T(3) * A(5) ** 3 + 18 * T(3) * A(5) * A(5, 1)
                   - 18 * T(3) * A(5, 2)) / (27 * at * T(1) * T(3))
        assert expr_equal(ch5.dependent[(6, 2)], disp_62.subs(subs))
        assert expr_equal(ch5.dependent[(6, 3)], disp_63.subs(subs))
        assert len(ch5.dependent) == 9

        # ---- order six: the symmetry entries and the thirteen equations
        _, ym5 = compute_y_zdot(5, ch5)
        assert expr_equal(ym5.ys[0], T(3) ** 2 / (T(1) * T(6)))
        assert expr_equal(ym5.ys[1], at * T(3) * T(6) ** 2 / T(1))

        sys5 = derive_vector_field(generic_self_dual(5))
        assert len(sys5.rhs) == 13
        field5 = [
            T(0) * T(3) / T(1),
            T(2),
            T(3) ** 2 * T(4) / (T(1) * T(6)),
            (-T(2) * T(3) * T(6) + T(3) ** 2 * T(5)) / (T(1) * T(6)),
            at * T(3) * T(6) ** 2 * T(7) / T(1),
            (-T(3) * T(4) + at * T(3) * T(6) ** 2 * T(8)) / T(1),
            (-T(3) * T(5) + at * T(3) * T(6) ** 2 * T(9)) / T(1),
            -T(3) ** 2 * T(10) / (T(1) * T(6)),
            (-T(3) ** 2 * T(11) - T(3) * T(6) * T(7)) / (T(1) * T(6)),
            (3 * at * T(3) * T(5) * T(9) - 6 * at * T(3) * T(6) * T(8)
             - 3 * T(3) * A(4) - T(3) * A(5) ** 2
             + 3 * T(3) * A(5, 1)) / (3 * at * T(1) * T(6)),
            -T(12),
            None,              # printed with raw a_3 jets; reduced below
            -T(3) * A(0) / (at * T(1) ** 2),
        ]
        for k, want in enumerate(field5):
            if want is None:
                continue
            assert expr_equal(sys5.rhs[k], want), k
        disp_t11 = (27 * at * T(2) * T(11) - 54 * at * T(3) * T(10)
                    + 27 * at * T(4) * T(8) - 27 * at * T(5) * T(7)
                    + 27 * A(2) + 27 * A(3) * A(5) - 27 * A(3, 1)
                    + 15 * A(4) * A(5) ** 2 - 9 * A(4) * A(5, 1)
                    - 54 * A(5) * A(4, 1) + 27 * A(4, 2) + 4 * A(5) ** 4
                    - 42 * A(5) ** 2 * A(5, 1) + 54 * A(5) * A(5, 2)
                    + 18 * A(5, 1) ** 2 - 18 * A(5, 3)) / (27 * at * T(1))
        assert expr_equal(sys5.rhs[11], disp_t11.subs(subs))


def test_criterion_4_parity_and_structure():
    assert [moduli_dimension(n) for n in range(1, 7)] == [3, 3, 7, 7, 13, 13]
    for n in range(1, 7):
        op = generic_self_dual(n)
        im = intersection_matrix(op, mode="strict")
        assert im.violations == []
        sign = -1 if n % 2 else 1
        for i in range(1, n + 2):
            for j in range(1, n + 2):
                assert im.cofactor(j, i).equals(sign * im.cofactor(i, j)), \
                    (n, i, j)
        assert all(r.is_zero() for row in flatness_residuals(im) for r in row)
        ch = solve_dependent_entries(n, im)
        _, ym = compute_y_zdot(n, ch)
        Y = ym.matrix()
        P = phi_matrix(n).matrix()
        M = mat_add(mat_mul(Y, P), mat_mul(P, mat_transpose(Y)))
        assert all(x.is_zero() for row in M for x in row), n


def test_criterion_5_two_route_compatibility():
    with budget(300):
        for label in list_presets():
            rep = compatibility_check(load_preset(label).operator(),
                                      label=label)
            assert rep.self_dual, label
            assert rep.verdicts and rep.ok, (label, rep.failed_cells())
        # negative control: break self-duality, the routes must disagree
        spec = load_preset("quintic")
        bumped = list(spec.coeffs)
        bumped[2] = bumped[2] + bumped[2].z()
        rep = compatibility_check(DiffOp(bumped))
        assert not rep.self_dual
        assert not rep.ok and rep.failed_cells()


def test_criterion_6_series_identities():
    with budget(30):
        ram = verify_ramanujan(50)
        assert ram.ok
        assert all(r.is_zero() for r in ram.residuals)
        assert all(r.is_zero() for r in ram.classical_residuals)
        dh = verify_darboux_halphen(40)
        assert dh.ok
        assert dh.quadratic_factor == 2
        assert all(r.is_zero() for r in dh.residuals)
        assert jacobi_residual(40).is_zero()


def test_criterion_7_pushforward_normalization():
    verdict = pushforward_check()
    # the literal reading of the displayed map is not exact; exactly one
    # sign normalization makes it an identity, frozen here as the golden
    assert verdict.displayed_exact is False
    assert verdict.matches == [(-1, -1, 1)]
    assert verdict.normalization == (-1, -1, 1)
    assert verdict.ok


def test_criterion_8_numeric_cross_checks():
    q0 = math.exp(-2 * math.pi)
    for q1 in (math.exp(-3 * math.pi), math.exp(-1.5 * math.pi)):
        traj, ref = integrate_ramanujan(q0, q1, h=1e-3, order=50)
        _, state = traj.endpoint()
        rel = max(abs(a - b) / abs(b) for a, b in zip(state, ref))
        assert rel < 1e-8, (q1, rel)

    exp_field = compile_exprs(("x",), [free_sym("x").expr()])
    rep = convergence_orders(exp_field, (1.0,), 0.0, 1.0, (math.e,), h0=0.05)
    assert rep.min_order >= 3.8, rep.orders

    x0, span = (0.1, 0.2, 0.3), (1.0, 1.5)
    transforms = [(1, 1, 0, 1), (2, 0, 0, 1), (1, 1, 1, 3)]
    for t in transforms:
        mob = mobius_invariance_check(*t, x0, span)
        assert mob.ok and mob.max_residual < 1e-6, (t, mob.max_residual)


def test_criterion_9_geometric_input_axioms():
    # the existence of the preset families as geometric objects and the
    # accompanying assumptions on their periods are consumed, not
    # verified: the package checks everything downstream of them
    readme = (Path(__file__).resolve().parent.parent / "README.md")
    assert "input axioms" in readme.read_text(encoding="utf-8")
