"""Monic operators in theta = z*d/dz, duality, and self-duality relations.

An order-(n+1) operator is stored through the coefficients a_0..a_n of

    theta^{n+1} omega = a_n theta^n omega + ... + a_1 theta omega + a_0 omega,

i.e. L = theta^{n+1} - a_n theta^n - ... - a_0.  The "monic" coefficient
vector b with L = theta^{n+1} + b_n theta^n + ... + b_0 is b_i = -a_i; both
conventions appear in the literature and ``dependent_coefficient_formulas``
can emit either.

The dual operator (the one acting on the dual local system, transported so
that it stays monic) is

    dual(L) = sum_i ( sum_{j>=i} (-1)^{n+1-j} C(j,i) theta^{j-i}(b_j) ) theta^i,

with b_{n+1} = 1.  It equals (-1)^{n+1} times the formal adjoint
sum_i (-theta)^i . b_i, which gives an independent computation route and
shows dual is an involution.

L is self-dual iff L psi = psi dual(L) for psi with
theta psi = -(2/(n+1)) b_n psi.  Writing rho_k = theta^k(psi)/psi
(a polynomial in b_n and its theta-derivatives), the comparison at
theta^i of that identity reads

    sum_{j>=i} C(j,i) b_j rho_{j-i}  =  sum_{j>=i} (-1)^{n+1-j} C(j,i) theta^{j-i}(b_j).

At i = n+1 and i = n it holds by the choice of psi, and at i = n-1 it holds
identically for arbitrary coefficients.  At i = n-2k it is an honest
condition, affine in b_{n-2k} with slope exactly 2; the deeper odd-distance
comparisons (i = n-3, n-5, ...) are consequences of the even ones, not
extra conditions.  Solving the even conditions top-down expresses
a_{n-2}, a_{n-4}, ... through the remaining coefficients.
"""

from __future__ import annotations

from fractions import Fraction

from .exactalg import (
    DiffExpr, as_expr, binom, expr_equal, jet, solve_linear, theta_on,
)


def _theta(e):
    return theta_on(e, chart_policy="error")


class OrePoly:
    """Polynomial sum c_i D^i in the derivation D = theta, with D.c = c D + theta(c)."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        cs = [as_expr(c) for c in coeffs]
        while cs and cs[-1].is_zero():
            cs.pop()
        self.coeffs = cs

    @staticmethod
    def zero():
        return OrePoly([])

    @staticmethod
    def d():
        return OrePoly([0, 1])

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def coeff(self, i):
        return self.coeffs[i] if 0 <= i < len(self.coeffs) else DiffExpr.zero()

    def is_zero(self):
        return not self.coeffs

    def __add__(self, other):
        n = max(len(self.coeffs), len(other.coeffs))
        return OrePoly([self.coeff(i) + other.coeff(i) for i in range(n)])

    def __neg__(self):
        return OrePoly([-c for c in self.coeffs])

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if self.is_zero() or other.is_zero():
            return OrePoly.zero()
        out = [DiffExpr.zero()] * (len(self.coeffs) + len(other.coeffs) - 1)
        # cache theta^r of the right-hand coefficients
        derivs = [[b] for b in other.coeffs]
        top = len(self.coeffs) - 1
        for d in derivs:
            for _ in range(top):
                d.append(_theta(d[-1]))
        for i, a in enumerate(self.coeffs):
            if a.is_zero():
                continue
            for j, b in enumerate(other.coeffs):
                for r in range(i + 1):
                    t = derivs[j][r]
                    if t.is_zero():
                        continue
                    out[i - r + j] = out[i - r + j] + a * binom(i, r) * t
        return OrePoly(out)

    def __pow__(self, e):
        out = OrePoly([1])
        for _ in range(e):
            out = out * self
        return out

    def apply(self, f):
        """Evaluate the operator on an expression."""
        f = as_expr(f)
        total = DiffExpr.zero()
        cur = f
        for i, c in enumerate(self.coeffs):
            if i:
                cur = _theta(cur)
            if not c.is_zero():
                total = total + c * cur
        return total

    def equals(self, other):
        n = max(len(self.coeffs), len(other.coeffs))
        return all(self.coeff(i).equals(other.coeff(i)) for i in range(n))

    def text(self):
        if not self.coeffs:
            return "0"
        parts = []
        for i in range(len(self.coeffs) - 1, -1, -1):
            c = self.coeff(i)
            if c.is_zero():
                continue
            dpart = "" if i == 0 else ("th" if i == 1 else f"th^{i}")
            ctext = c.text()
            if dpart and ctext == "1":
                parts.append(dpart)
            elif dpart:
                parts.append(f"({ctext})*{dpart}")
            else:
                parts.append(f"({ctext})")
        return " + ".join(parts)

    def __repr__(self):
        return f"OrePoly({self.text()})"


class DiffOp:
    """theta^{n+1} - a_n theta^n - ... - a_0, coefficients in the expression field."""

    __slots__ = ("coeffs", "n")

    def __init__(self, coeffs):
        self.coeffs = [as_expr(c) for c in coeffs]
        self.n = len(self.coeffs) - 1
        if self.n < 0:
            raise ValueError("an operator needs at least one coefficient")

    @staticmethod
    def generic(n):
        """Order n+1 with opaque jet symbols a_0..a_n as coefficients."""
        return DiffOp([jet(i).expr() for i in range(n + 1)])

    @property
    def order(self):
        return self.n + 1

    def a(self, i):
        return self.coeffs[i]

    def monic_b(self):
        """[b_0, ..., b_n, b_{n+1}] with b_i = -a_i and b_{n+1} = 1."""
        return [-c for c in self.coeffs] + [DiffExpr.one()]

    def to_ore(self):
        return OrePoly(self.monic_b())

    def equals(self, other):
        return self.n == other.n and all(
            x.equals(y) for x, y in zip(self.coeffs, other.coeffs))

    def text(self):
        return self.to_ore().text()

    def __repr__(self):
        return f"DiffOp({self.text()})"


def _as_ore(op):
    if isinstance(op, DiffOp):
        return op.to_ore()
    if isinstance(op, OrePoly):
        return op
    raise TypeError("expected DiffOp or OrePoly")


def op_compose(op1, op2):
    """Operator composition op1 . op2 as an OrePoly."""
    return _as_ore(op1) * _as_ore(op2)


def op_dual(op):
    """The dual operator, itself monic of the same order."""
    b = op.monic_b()
    n = op.n
    derivs = [[c] for c in b]
    for d in derivs:
        for _ in range(n + 1):
            d.append(_theta(d[-1]))
    dual_c = []
    for i in range(n + 2):
        total = DiffExpr.zero()
        for j in range(i, n + 2):
            t = derivs[j][j - i]
            if t.is_zero():
                continue
            sign = -1 if (n + 1 - j) % 2 else 1
            total = total + sign * binom(j, i) * t
        dual_c.append(total)
    if not dual_c[n + 1].equals(1):
        raise AssertionError("dual lost monicity")
    return DiffOp([-dual_c[i] for i in range(n + 1)])


def op_adjoint(op):
    """Formal adjoint sum_i (-D)^i . b_i as an OrePoly (independent route)."""
    b = op.monic_b()
    neg_d = OrePoly([0, -1])
    total = OrePoly.zero()
    for i, c in enumerate(b):
        if c.is_zero():
            continue
        total = total + (neg_d ** i) * OrePoly([c])
    return total


def psi_log_ratios(op, kmax):
    """[rho_0, ..., rho_kmax] with rho_k = theta^k(psi)/psi for the dualizing psi.

    theta(psi) = (2/(n+1)) a_n psi, so rho_1 = (2/(n+1)) a_n and
    rho_{k+1} = theta(rho_k) + rho_1 rho_k.
    """
    n = op.n
    rho = [DiffExpr.one()]
    if kmax >= 1:
        rho1 = Fraction(2, n + 1) * op.a(n)
        rho.append(rho1)
        for _ in range(kmax - 1):
            rho.append(_theta(rho[-1]) + rho1 * rho[-1])
    return rho[:kmax + 1]


def _rho_from_b(b_top, n, kmax):
    """rho list from the top monic coefficient b_n (rho_1 = -(2/(n+1)) b_n)."""
    rho = [DiffExpr.one()]
    if kmax >= 1:
        rho1 = Fraction(-2, n + 1) * b_top
        rho.append(rho1)
        for _ in range(kmax - 1):
            rho.append(_theta(rho[-1]) + rho1 * rho[-1])
    return rho


def _comparison(b, derivs, rho, n, i):
    """LHS - RHS of the self-duality identity at theta^i."""
    total = DiffExpr.zero()
    for j in range(i, n + 2):
        c = binom(j, i)
        bj = b[j]
        if not bj.is_zero():
            r = rho[j - i]
            total = total + c * bj * r
        t = derivs[j][j - i]
        if not t.is_zero():
            sign = -1 if (n + 1 - j) % 2 else 1
            total = total - sign * c * t
    return total


def _theta_table(b, depth):
    derivs = [[c] for c in b]
    for d in derivs:
        for _ in range(depth):
            d.append(_theta(d[-1]))
    return derivs


def duality_comparisons(op):
    """All comparisons {i: LHS - RHS} of L psi = psi dual(L), i = n+1 .. 0."""
    n = op.n
    b = op.monic_b()
    rho = _rho_from_b(b[n], n, n + 1)
    derivs = _theta_table(b, n + 1)
    return {i: _comparison(b, derivs, rho, n, i) for i in range(n + 1, -1, -1)}


def self_duality_residuals(op, check_odd=True):
    """Obstructions to self-duality: one expression per comparison theta^{n-2k}.

    Returns [r_1, r_2, ...] for k = 1, 2, ... while n-2k >= 0; the operator
    is self-dual iff all vanish.  The comparisons at odd distance are not
    independent conditions: with check_odd=True, whenever the returned
    residuals all vanish the odd-distance comparisons are asserted to
    vanish too.
    """
    n = op.n
    b = op.monic_b()
    rho = _rho_from_b(b[n], n, n + 1)
    derivs = _theta_table(b, n + 1)
    out = []
    k = 1
    while n - 2 * k >= 0:
        out.append(_comparison(b, derivs, rho, n, n - 2 * k))
        k += 1
    if check_odd and all(r.is_zero() for r in out):
        m = 1
        while n - (2 * m - 1) >= 0:
            ident = _comparison(b, derivs, rho, n, n - (2 * m - 1))
            if not ident.is_zero():
                raise AssertionError(
                    f"comparison at theta^{n - (2 * m - 1)} did not follow "
                    f"from the even-distance conditions")
            m += 1
    return out


def is_self_dual(op):
    return all(r.is_zero() for r in self_duality_residuals(op, check_odd=False))


def twisted_conjugate(op):
    """psi^{-1} . L . psi as an OrePoly, for the dualizing psi.

    theta(psi)/psi = (2/(n+1)) a_n is rational, so conjugating L by psi
    amounts to replacing D by D + (2/(n+1)) a_n; the result has rational
    coefficients even though psi itself is transcendental.  L is self-dual
    (L psi = psi dual(L)) iff this equals dual(L).
    """
    rho1 = Fraction(2, op.n + 1) * op.a(op.n)
    shifted = OrePoly([rho1, 1])
    b = op.monic_b()
    total = OrePoly.zero()
    power = OrePoly([1])
    for i, c in enumerate(b):
        if i:
            power = power * shifted
        if not c.is_zero():
            total = total + OrePoly([c]) * power
    return total


def self_duality_via_conjugation(op):
    """Independent route: compare psi^{-1} L psi with dual(L) coefficientwise."""
    return twisted_conjugate(op).equals(op_dual(op).to_ore())


def dependent_coefficient_formulas(n, convention="plus"):
    """Solve the self-duality conditions for a_{n-2}, a_{n-4}, ...

    Returns {index: formula} where the formula involves only the free
    coefficients (a_n, a_{n-1}, a_{n-3}, ...) and their theta-derivatives.
    convention="plus" writes the operator theta^{n+1} + sum a_i theta^i;
    convention="pf" writes theta^{n+1} - sum a_i theta^i (the two are
    related by negating every coefficient and each solved formula).
    """
    if convention not in ("plus", "pf"):
        raise ValueError(f"unknown convention {convention!r}")
    # work in the monic (plus) convention with generic jets
    b = [jet(i).expr() for i in range(n + 1)] + [DiffExpr.one()]
    rho = _rho_from_b(b[n], n, n + 1)
    formulas = {}
    k = 1
    while n - 2 * k >= 0:
        i = n - 2 * k
        derivs = _theta_table(b, n + 1)
        resid = _comparison(b, derivs, rho, n, i)
        x = jet(i)
        slope = resid.subs({x: 1}) - resid.subs({x: 0})
        if not slope.equals(2):
            raise AssertionError(
                f"condition at theta^{i} is not affine with slope 2 in a_{i}")
        sol = solve_linear(resid, x)
        formulas[i] = sol
        b[i] = sol
        k += 1
    if convention == "pf":
        flip = {}
        for idx in range(n + 1):
            for order in range(n + 2):
                s = jet(idx, order)
                flip[s] = -s.expr()
        formulas = {i: -(f.subs(flip)) for i, f in formulas.items()}
    return formulas


def generic_self_dual(n):
    """The generic self-dual operator of order n+1.

    Free coefficient slots stay as jet symbols; dependent slots carry the
    solved formulas, so every duality residual vanishes identically.
    """
    formulas = dependent_coefficient_formulas(n, convention="pf")
    return DiffOp([formulas.get(i, jet(i).expr()) for i in range(n + 1)])


def self_dual_operator(n, free_coeffs):
    """Build the self-dual operator from its free coefficients.

    free_coeffs maps index -> coefficient for the free slots
    (n, n-1, n-3, n-5, ...); the dependent slots are filled from
    ``dependent_coefficient_formulas``.  All in the a-convention
    (theta^{n+1} = sum a_i theta^i).
    """
    free_idx = {n} | {n - 1 - 2 * m for m in range((n + 1) // 2) if n - 1 - 2 * m >= 0}
    missing = free_idx - set(free_coeffs)
    if missing:
        raise ValueError(f"missing free coefficients {sorted(missing)}")
    formulas = dependent_coefficient_formulas(n, convention="pf")
    subs_map = {}
    for idx in free_idx:
        val = as_expr(free_coeffs[idx])
        cur = val
        for order in range(n + 2):
            subs_map[jet(idx, order)] = cur
            cur = _theta(cur)
    coeffs = []
    for i in range(n + 1):
        if i in free_idx:
            coeffs.append(as_expr(free_coeffs[i]))
        else:
            coeffs.append(formulas[i].subs(subs_map))
    return DiffOp(coeffs)
