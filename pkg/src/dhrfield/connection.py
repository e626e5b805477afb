"""Connection data attached to a theta-form operator.

A theta-form operator of order n+1 turns into a first-order system for the
vector (f, theta f, ..., theta^n f): theta F = A F with A the companion
matrix below (the underlying one-form is A dz/z; entries themselves carry
no dz/z factor).  Solutions of the operator and of its dual pair into a
flat bilinear form Omega; with the weight function

    atilde = c0 * exp((2/(n+1)) * int_0^z a_n(v) dv / v),

every entry of Omega is atilde times a polynomial in the coefficients and
their theta-derivatives.  We therefore store the polynomial cofactor matrix
C with Omega = atilde * C.  C is built row by row from the twisted
derivation

    D(P) = theta P + (2/(n+1)) a_n P,

which is exactly theta acting on P*atilde divided by atilde.  The first row
is (0, ..., 0, 1) and

    C[i+1][j] = D(C[i][j]) - C[i][j+1]          (j <= n),
    C[i+1][n+1] = D(C[i][n+1]) - sum_k a_k C[i][k+1],

in 1-based indexing.  Structural consequences (zero block above the
antidiagonal, alternating antidiagonal) hold for every operator; the parity
symmetry of the deeper entries (antisymmetric for n odd, symmetric for n
even) holds exactly when the operator is self-dual, so a violated cell is a
self-duality certificate and is reported as such.

The constant matrix Phi is the value the pairing takes in a normalized
solution basis; it is antidiagonal with signs (+...+,-...-) for n odd and
the all-ones antidiagonal for n even.
"""

from fractions import Fraction
from math import lcm

from .exactalg import (
    DiffExpr,
    RatFunc,
    as_expr,
    atilde_sym,
    mat_det,
    mat_mul,
    mat_sub,
    mat_transpose,
    mat_zero,
    poly_deriv,
    poly_eval,
    poly_gcd,
    theta_on,
    to_ratfunc,
)


class IntersectionError(ValueError):
    """A pairing symmetry cell failed; carries the 1-based cell index."""

    def __init__(self, message, cell):
        super().__init__(message)
        self.cell = cell


# --------------------------------------------------------------------------
# companion matrix and constant pairing matrix
# --------------------------------------------------------------------------


class CompanionMatrix:
    """Companion matrix of theta F = A F (one-form A dz/z, factor implicit)."""

    prefactor_text = "dz/z"

    def __init__(self, op):
        self.op = op
        self.n = op.n
        n = op.n
        rows = mat_zero(n + 1, n + 1)
        for i in range(n):
            rows[i][i + 1] = DiffExpr.one()
        for j in range(n + 1):
            rows[n][j] = op.a(j)
        self._rows = rows

    def entry(self, i, j):
        """1-based entry."""
        return self._rows[i - 1][j - 1]

    def matrix(self):
        return [list(row) for row in self._rows]


def companion_matrix(op):
    return CompanionMatrix(op)


class PhiMatrix:
    """Constant pairing matrix in a normalized solution basis."""

    def __init__(self, n):
        self.n = n
        rows = [[0] * (n + 1) for _ in range(n + 1)]
        if n % 2:
            half = (n + 1) // 2
            for p in range(1, n + 2):
                rows[p - 1][n + 1 - p] = 1 if p <= half else -1
        else:
            for p in range(1, n + 2):
                rows[p - 1][n + 1 - p] = 1
        self.rows = rows

    def entry(self, p, q):
        """1-based entry (a plain integer)."""
        return self.rows[p - 1][q - 1]

    def matrix(self):
        return [[as_expr(x) for x in row] for row in self.rows]


def phi_matrix(n):
    return PhiMatrix(n)


# --------------------------------------------------------------------------
# closed form for the pairing weight
# --------------------------------------------------------------------------


def _divisors(m):
    m = abs(m)
    out = []
    d = 1
    while d * d <= m:
        if m % d == 0:
            out.append(d)
            if d != m // d:
                out.append(m // d)
        d += 1
    return sorted(out)


def _deflate(p, r):
    """Divide the ascending-coefficient polynomial p by (z - r) exactly."""
    d = len(p) - 1
    q = [Fraction(0)] * d
    carry = Fraction(0)
    for k in range(d, 0, -1):
        carry = p[k] + carry * r
        q[k - 1] = carry
    assert p[0] + carry * r == 0, "deflation by a non-root"
    return q


def _rational_roots_monic(p):
    """Roots of a monic squarefree Fraction polynomial, or None if it does
    not split over the rationals."""
    roots = []
    p = list(p)
    while len(p) > 1:
        if p[0] == 0:
            roots.append(Fraction(0))
            p = p[1:]
            continue
        scale = lcm(*(c.denominator for c in p))
        ip = [int(c * scale) for c in p]
        found = None
        for a in _divisors(ip[0]):
            for b in _divisors(ip[-1]):
                for cand in (Fraction(a, b), Fraction(-a, b)):
                    if poly_eval(p, cand) == 0:
                        found = cand
                        break
                if found is not None:
                    break
            if found is not None:
                break
        if found is None:
            return None
        roots.append(found)
        p = _deflate(p, found)
    return roots


def atilde_closed_form(a_n, n, c0=1):
    """Rational closed form of the pairing weight, when one exists.

    The weight is c0 * exp((2/(n+1)) * int_0^z a_n(v) dv / v).  When the
    integrand is a proper rational function with simple rational poles away
    from 0 and integer residues r_i at poles p_i, the weight is

        c0 * prod_i (1 - z/p_i)^{r_i},

    returned as a RatFunc.  Otherwise the weight is not rational (or the
    base point normalization fails) and the opaque symbol is returned
    instead; theta acts on it through its registered derivation rule.
    """
    fallback = atilde_sym(n).expr()
    an = to_ratfunc(a_n)
    g = an * Fraction(2, n + 1) / RatFunc.z()
    if g.is_zero():
        return RatFunc.const(c0)
    num, den = g.num, g.den
    if len(num) >= len(den):          # improper: exp of a polynomial part
        return fallback
    if len(poly_gcd(den, poly_deriv(den))) > 1:   # repeated pole
        return fallback
    roots = _rational_roots_monic(den)
    if roots is None:
        return fallback
    dden = poly_deriv(den)
    factors = []
    for p in roots:
        if p == 0:                    # integral from 0 diverges
            return fallback
        r = poly_eval(num, p) / poly_eval(dden, p)
        if r.denominator != 1:
            return fallback
        factors.append((p, int(r)))
    result = RatFunc.const(c0)
    for p, r in factors:
        base = RatFunc([Fraction(1), -1 / p], [Fraction(1)])
        result = result * base ** r
    return result


# --------------------------------------------------------------------------
# the intersection matrix
# --------------------------------------------------------------------------


class IntersectionMatrix:
    """Pairing matrix Omega = atilde * C, stored through its cofactors C.

    mode="strict" raises IntersectionError at the first parity-symmetry
    violation (which certifies the operator is not self-dual); mode="defer"
    records every violation in .violations and carries on.
    """

    def __init__(self, op, mode="strict"):
        if mode not in ("strict", "defer"):
            raise ValueError(f"unknown mode {mode!r}")
        self.op = op
        self.n = op.n
        self.mode = mode
        self.violations = []
        self._build()
        self._check()

    # -- construction ------------------------------------------------------

    def twisted_theta(self, e):
        """theta P + (2/(n+1)) a_n P: theta on P*atilde, divided by atilde."""
        n = self.n
        return theta_on(e) + self.op.a(n) * Fraction(2, n + 1) * e

    def _build(self):
        n = self.n
        rows = mat_zero(n + 1, n + 1)
        rows[0][n] = DiffExpr.one()
        for i in range(n):
            for j in range(n):
                rows[i + 1][j] = self.twisted_theta(rows[i][j]) - rows[i][j + 1]
            acc = self.twisted_theta(rows[i][n])
            for k in range(n + 1):
                if not rows[i][k].is_zero():
                    acc = acc - self.op.a(k) * rows[i][k]
            rows[i + 1][n] = acc
        self._cof = rows

    def _check(self):
        n = self.n
        cof = self._cof
        # structural: zero block and alternating antidiagonal
        for i in range(n + 1):
            for j in range(n + 1):
                s = i + j + 2
                if s <= n + 1:
                    assert cof[i][j].is_zero(), "zero block corrupted"
                elif s == n + 2:
                    want = 1 if i % 2 == 0 else -1
                    assert cof[i][j].equals(want), "antidiagonal corrupted"
        # parity symmetry of the deeper entries
        sign = -1 if n % 2 else 1
        for i in range(n + 1):
            for j in range(i, n + 1):
                if i + j + 2 <= n + 2:
                    continue
                diff = cof[j][i] - cof[i][j] * sign
                if not diff.is_zero():
                    self._report(j + 1, i + 1, diff)

    def _report(self, i, j, diff):
        kind = "antisymmetry" if self.n % 2 else "symmetry"
        if self.mode == "strict":
            raise IntersectionError(
                f"intersection entry ({i},{j}) violates {kind}: the operator "
                f"is not self-dual", (i, j))
        self.violations.append(((i, j), diff))

    # -- access ------------------------------------------------------------

    def cofactor(self, i, j):
        """1-based polynomial cofactor C[i][j] (entry without the weight)."""
        return self._cof[i - 1][j - 1]

    def cofactor_matrix(self):
        return [list(row) for row in self._cof]

    def entry(self, i, j, atilde=None):
        """1-based full entry; atilde defaults to the opaque weight symbol."""
        w = atilde_sym(self.n).expr() if atilde is None else as_expr(atilde)
        return self._cof[i - 1][j - 1] * w

    def matrix(self, atilde=None):
        w = atilde_sym(self.n).expr() if atilde is None else as_expr(atilde)
        return [[x * w for x in row] for row in self._cof]

    def det(self, atilde=None):
        w = atilde_sym(self.n).expr() if atilde is None else as_expr(atilde)
        return mat_det(self._cof) * w ** (self.n + 1)


def intersection_matrix(op, mode="strict"):
    return IntersectionMatrix(op, mode=mode)


# --------------------------------------------------------------------------
# flatness
# --------------------------------------------------------------------------


def flatness_residuals(im):
    """Entrywise D(C) - (A C + C A^T); all zero iff theta Omega = A Omega + Omega A^T."""
    a = companion_matrix(im.op).matrix()
    c = im.cofactor_matrix()
    lhs = [[im.twisted_theta(x) for x in row] for row in c]
    rhs = mat_mul(a, c)
    rhs = [[x + y for x, y in zip(r1, r2)]
           for r1, r2 in zip(rhs, mat_mul(c, mat_transpose(a)))]
    return mat_sub(lhs, rhs)


def is_flat(im):
    return all(x.is_zero() for row in flatness_residuals(im) for x in row)
