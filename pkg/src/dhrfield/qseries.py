"""Exact q-expansions and the classical quadratic vector fields.

Series here are verification-grade: coefficients are rationals, the
truncation order is explicit, and the transcendental scale 2*pi*i never
appears as a number.  It is a formal grading symbol kappa attached to
each series: differentiating in the modular variable raises the grade by
one, sums insist on matching grades (a mismatch raises GradingError
instead of silently mixing units), and products add them.  An identity
counts as verified only when its residual series vanishes while the
kappa grading cancels on its own.

Fractional exponents are handled through a fixed base: a series with
base d is a sum of c_e * u^e over integer e >= 0 with u = q^(1/d).
Divisor-sum series are native to d = 1; theta nulls live at d = 8, the
common denominator of their exponents (2n+1)^2/8 and n^2/2.

The second half of the module holds the small quadratic vector fields
attached to these series -- the Darboux-Halphen system solved by theta
logarithmic derivatives, its one-parameter quadratic deformations, the
Eisenstein flow of Ramanujan -- and the symmetric-function map between
the two, checked as an exact polynomial identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .exactalg import DiffExpr, Fraction as _Fraction  # noqa: F401
from .exactalg import as_expr, expr_equal, free_sym


class GradingError(ValueError):
    """Two series with different kappa powers were added."""


class SeriesError(ValueError):
    pass


def _as_fraction(c):
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    raise TypeError(f"series coefficients are exact rationals, not "
                    f"{type(c).__name__}")


class QSeries:
    """Truncated series sum c_e u^e, u = q^(1/d), scaled by kappa^k.

    ``order`` means the coefficients are exact for every exponent up to
    and including ``order`` (in u); anything beyond is unknown and
    silently dropped.  ``kappa`` is the formal power of 2*pi*i carried
    by the whole series.
    """

    __slots__ = ("d", "order", "kappa", "coeffs")

    def __init__(self, coeffs, order, d=1, kappa=0):
        if order < 0:
            raise SeriesError(f"truncation order must be >= 0, got {order}")
        if d < 1:
            raise SeriesError(f"exponent base must be >= 1, got {d}")
        clean = {}
        for e, c in coeffs.items():
            if e < 0:
                raise SeriesError(f"negative exponent {e} in a series")
            if e > order:
                continue
            c = _as_fraction(c)
            if c:
                clean[int(e)] = c
        self.coeffs = clean
        self.order = int(order)
        self.d = int(d)
        self.kappa = int(kappa)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(order, d=1, kappa=0):
        return QSeries({}, order, d, kappa)

    @staticmethod
    def one(order, d=1):
        return QSeries({0: Fraction(1)}, order, d)

    @staticmethod
    def const(c, order, d=1, kappa=0):
        return QSeries({0: _as_fraction(c)}, order, d, kappa)

    # -- bookkeeping -------------------------------------------------------

    def is_zero(self):
        return not self.coeffs

    def coeff(self, e):
        """Coefficient of u^e (e counted in the series' own base)."""
        return self.coeffs.get(e, Fraction(0))

    def valuation(self):
        if not self.coeffs:
            return None
        return min(self.coeffs)

    def leading_coeff(self):
        v = self.valuation()
        return Fraction(0) if v is None else self.coeffs[v]

    def truncated(self, order):
        return QSeries(self.coeffs, min(self.order, order), self.d,
                       self.kappa)

    def kappa_shift(self, k):
        """The same series times kappa^k (pure bookkeeping)."""
        return QSeries(self.coeffs, self.order, self.d, self.kappa + k)

    def rebase(self, d):
        """Re-express in u' = q^(1/d); exponents must stay integral."""
        if d == self.d:
            return self
        if d % self.d == 0:
            f = d // self.d
            return QSeries({e * f: c for e, c in self.coeffs.items()},
                           self.order * f, d, self.kappa)
        if self.d % d == 0:
            f = self.d // d
            out = {}
            for e, c in self.coeffs.items():
                if e % f:
                    raise SeriesError(
                        f"exponent {e}/{self.d} is not representable in "
                        f"base 1/{d}")
                out[e // f] = c
            return QSeries(out, self.order // f, d, self.kappa)
        raise SeriesError(f"cannot rebase 1/{self.d} onto 1/{d}")

    def _align(self, other):
        d = self.d * other.d // math.gcd(self.d, other.d)
        return self.rebase(d), other.rebase(d)

    def _join_kappa(self, other):
        # the zero series is grade-neutral; anything else must match
        if self.is_zero():
            return other.kappa
        if other.is_zero():
            return self.kappa
        if self.kappa != other.kappa:
            raise GradingError(
                f"kappa powers do not cancel: grade {self.kappa} summed "
                f"with grade {other.kappa}")
        return self.kappa

    # -- ring operations ---------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, QSeries):
            return other
        if isinstance(other, (int, Fraction)):
            return QSeries.const(other, self.order, self.d, self.kappa)
        return None

    def __eq__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        a, b = self._align(other)
        n = min(a.order, b.order)
        if {e: c for e, c in a.coeffs.items() if e <= n} != \
                {e: c for e, c in b.coeffs.items() if e <= n}:
            return False
        if a.is_zero() or b.is_zero():
            return True
        return a.kappa == b.kappa

    def __hash__(self):
        raise TypeError("truncated series are not hashable")

    def __add__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        a, b = self._align(other)
        k = a._join_kappa(b)
        out = dict(a.coeffs)
        for e, c in b.coeffs.items():
            out[e] = out.get(e, Fraction(0)) + c
        return QSeries(out, min(a.order, b.order), a.d, k)

    __radd__ = __add__

    def __neg__(self):
        return QSeries({e: -c for e, c in self.coeffs.items()}, self.order,
                       self.d, self.kappa)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            c = _as_fraction(other)
            return QSeries({e: v * c for e, v in self.coeffs.items()},
                           self.order, self.d, self.kappa)
        if not isinstance(other, QSeries):
            return NotImplemented
        a, b = self._align(other)
        n = min(a.order, b.order)
        out = {}
        for e1, c1 in a.coeffs.items():
            for e2, c2 in b.coeffs.items():
                e = e1 + e2
                if e <= n:
                    out[e] = out.get(e, Fraction(0)) + c1 * c2
        return QSeries(out, n, a.d, a.kappa + b.kappa)

    __rmul__ = __mul__

    def __pow__(self, e):
        if not isinstance(e, int) or e < 0:
            raise SeriesError("series powers are nonnegative integers")
        out = QSeries.one(self.order, self.d)
        for _ in range(e):
            out = out * self
        return out

    def inverse(self):
        """Reciprocal series; needs a nonzero constant term."""
        a0 = self.coeffs.get(0)
        if not a0:
            raise SeriesError("series is not invertible: the constant "
                              "term vanishes")
        inv = {0: 1 / a0}
        for e in range(1, self.order + 1):
            acc = Fraction(0)
            for j, c in self.coeffs.items():
                if 0 < j <= e:
                    acc += c * inv.get(e - j, Fraction(0))
            if acc:
                inv[e] = -acc / a0
        return QSeries(inv, self.order, self.d, -self.kappa)

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return self * (Fraction(1) / _as_fraction(other))
        if isinstance(other, QSeries):
            return self * other.inverse()
        return NotImplemented

    # -- calculus ----------------------------------------------------------

    def theta_q(self):
        """q d/dq applied coefficient-wise: u^e picks up e/d."""
        return QSeries({e: c * Fraction(e, self.d)
                        for e, c in self.coeffs.items()},
                       self.order, self.d, self.kappa)

    def dz(self):
        """d/dz with q = exp(kappa z): theta_q times one power of kappa."""
        return self.theta_q().kappa_shift(1)

    # -- evaluation and rendering ------------------------------------------

    def evaluate(self, q):
        """Float value at real q in (0,1); the grade must be zero."""
        if self.kappa and not self.is_zero():
            raise SeriesError(
                f"cannot evaluate a series carrying kappa^{self.kappa}")
        total = 0.0
        for e in sorted(self.coeffs):
            total += float(self.coeffs[e]) * q ** (e / self.d)
        return total

    def text(self):
        if not self.coeffs:
            body = "0"
        else:
            parts = []
            for e in sorted(self.coeffs):
                c = self.coeffs[e]
                if e == 0:
                    parts.append(str(c))
                else:
                    parts.append(f"{c}*u^{e}" if self.d > 1
                                 else f"{c}*q^{e}")
            body = " + ".join(parts).replace("+ -", "- ")
        if self.kappa:
            body = f"kappa^{self.kappa} * ({body})"
        return body

    def __repr__(self):
        return f"QSeries({self.text()} + O(u^{self.order + 1}))"


# -- golden rendering ------------------------------------------------------


def format_series(s):
    """Golden text: a kappa header, then `exponent/base : value` lines."""
    lines = [f"kappa: {s.kappa}"]
    for e in sorted(s.coeffs):
        c = s.coeffs[e]
        lines.append(f"{e}/{s.d} : {c.numerator}/{c.denominator}")
    return "\n".join(lines) + "\n"


def parse_series(text):
    kappa = None
    d = 1
    coeffs = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("kappa:"):
            kappa = int(line.split(":", 1)[1])
            continue
        try:
            expo, value = line.split(":")
            e, d_here = (int(p) for p in expo.split("/"))
            num, den = (int(p) for p in value.split("/"))
        except ValueError:
            raise SeriesError(f"line {ln} is not `e/d : p/q`: {raw!r}") \
                from None
        d = d_here
        coeffs[e] = Fraction(num, den)
    if kappa is None:
        raise SeriesError("series text is missing the `kappa:` header")
    order = max(coeffs) if coeffs else 0
    return QSeries(coeffs, order, d, kappa)


# -- arithmetic building blocks --------------------------------------------


def bernoulli_number(m):
    """B_m from the defining recurrence sum C(m+1,k) B_k = 0."""
    if m < 0:
        raise ValueError("Bernoulli index must be >= 0")
    row = [Fraction(1)]
    for i in range(1, m + 1):
        acc = Fraction(0)
        for k, bk in enumerate(row):
            acc += math.comb(i + 1, k) * bk
        row.append(-acc / (i + 1))
    return row[m]


def divisor_power_sum(k, r):
    """sigma_k(r): the sum of d^k over divisors d of r."""
    if r < 1:
        raise ValueError("divisor sums need r >= 1")
    total = 0
    i = 1
    while i * i <= r:
        if r % i == 0:
            total += i ** k
            j = r // i
            if j != i:
                total += j ** k
        i += 1
    return total


def eisenstein(weight, order):
    """E_weight = 1 - (2*weight/B_weight) sum sigma_{weight-1}(r) q^r."""
    if weight < 2 or weight % 2:
        raise ValueError(f"Eisenstein weight must be even and >= 2, "
                         f"got {weight}")
    scale = Fraction(2 * weight) / bernoulli_number(weight)
    coeffs = {0: Fraction(1)}
    for r in range(1, order + 1):
        coeffs[r] = -scale * divisor_power_sum(weight - 1, r)
    return QSeries(coeffs, order, d=1)


def theta_null(k, order):
    """Theta null value as a series in u = q^(1/8).

    theta2 sums q^((2n+1)^2/8) over the integers, theta3 sums q^(n^2/2),
    theta4 is theta3 with alternating signs; each lattice point and its
    mirror contribute, so the nonconstant coefficients are +-2.
    """
    if order < 1:
        raise ValueError("theta truncation order must be >= 1")
    coeffs = {}
    if k == 2:
        n = 0
        while (2 * n + 1) ** 2 <= order:
            coeffs[(2 * n + 1) ** 2] = Fraction(2)
            n += 1
    elif k in (3, 4):
        coeffs[0] = Fraction(1)
        n = 1
        while 4 * n * n <= order:
            sign = -1 if (k == 4 and n % 2) else 1
            coeffs[4 * n * n] = Fraction(2 * sign)
            n += 1
    else:
        raise ValueError(f"theta index must be 2, 3 or 4, got {k}")
    return QSeries(coeffs, order, d=8)


def log_derivative(s):
    """2 (ln s)' with ' = d/dz, computed as 2 kappa (1/d) u s'/s.

    The series may have positive valuation (the lattice sum with odd
    exponents does): u s'/s is then the valuation plus the logarithmic
    derivative of the unit part.  A series with no nonzero coefficient
    has no leading coefficient to divide by and is rejected.
    """
    v = s.valuation()
    if v is None:
        raise SeriesError("leading coefficient is zero: cannot take a "
                          "logarithmic derivative of the zero series")
    unit = QSeries({e - v: c for e, c in s.coeffs.items()},
                   s.order - v, s.d)
    num = QSeries({e: c * e for e, c in unit.coeffs.items()},
                  unit.order, unit.d)
    ratio = num * unit.inverse() + v
    return (ratio * Fraction(2, s.d)).kappa_shift(s.kappa + 1)


# -- residual reports ------------------------------------------------------


@dataclass
class DarbouxHalphenReport:
    """Residuals of the pairwise theta system.

    With t1, t2, t3 = 2(ln theta_4)', 2(ln theta_2)', 2(ln theta_3)'
    the pairwise quadratic system holds with the product term counted
    twice:

        dt_i/dz + dt_j/dz = 2 t_i t_j,

    and ``residuals`` are the (zero) residual series of that identity.
    Read with coefficient 1 on the product, the same data leave the
    residual -t_i t_j, reported in ``displayed_residuals``; the two
    readings differ by the factor-two time rescaling recorded in
    ``quadratic_factor``.  Both sides of every equation carry kappa^2,
    which cancels in the residuals.
    """

    order: int
    pairs: tuple
    quadratic_factor: Fraction
    residuals: list
    displayed_residuals: list

    @property
    def ok(self):
        return all(r.is_zero() for r in self.residuals)

    @property
    def displayed_ok(self):
        return all(r.is_zero() for r in self.displayed_residuals)


def darboux_halphen_solution(order, margin=8):
    """The triple (2(ln theta_4)', 2(ln theta_2)', 2(ln theta_3)')."""
    thetas = (theta_null(4, order + margin), theta_null(2, order + margin),
              theta_null(3, order + margin))
    return tuple(log_derivative(t).truncated(order) for t in thetas)


def verify_darboux_halphen(order):
    """Substitute the theta triple into the pairwise system, to u^order."""
    if order < 16:
        raise ValueError(f"truncation order below 16 proves nothing about "
                         f"the theta identities, got {order}")
    t = darboux_halphen_solution(order + 1)
    pairs = ((1, 2), (2, 3), (1, 3))
    residuals = []
    displayed = []
    for i, j in pairs:
        lhs = t[i - 1].dz() + t[j - 1].dz()
        prod = t[i - 1] * t[j - 1]
        residuals.append((lhs - 2 * prod).truncated(order))
        displayed.append((lhs - prod).truncated(order))
    return DarbouxHalphenReport(order=order, pairs=pairs,
                                quadratic_factor=Fraction(2),
                                residuals=residuals,
                                displayed_residuals=displayed)


@dataclass
class RamanujanReport:
    """Residuals of the Eisenstein flow.

    With r1 = (kappa/12) E2, r2 = 12 (kappa/12)^2 E4 and
    r3 = 8 (kappa/12)^3 E6, and d/dtau = kappa q d/dq, the three
    equations

        r1' = r1^2 - r2/12,  r2' = 4 r1 r2 - 6 r3,  r3' = 6 r1 r3 - r2^2/3

    reduce, after the kappa powers cancel, to the classical derivative
    relations

        q E2' = (E2^2 - E4)/12,
        q E4' = (E2 E4 - E6)/3,
        q E6' = (E2 E6 - E4^2)/2,

    reported in ``classical_residuals``; ``residuals`` are the graded
    originals.
    """

    order: int
    residuals: list
    classical_residuals: list
    kappa_weights: tuple

    @property
    def ok(self):
        return all(r.is_zero() for r in self.residuals) and \
            all(r.is_zero() for r in self.classical_residuals)


def verify_ramanujan(order):
    """Check the Eisenstein solution of the degree-(1,2,3) flow."""
    if order < 20:
        raise ValueError(f"truncation order below 20 proves nothing about "
                         f"the Eisenstein identities, got {order}")
    e2, e4, e6 = (eisenstein(w, order + 1) for w in (2, 4, 6))
    r1 = (e2 * Fraction(1, 12)).kappa_shift(1)
    r2 = (e4 * Fraction(1, 12)).kappa_shift(2)
    r3 = (e6 * Fraction(1, 216)).kappa_shift(3)
    residuals = [
        r1.dz() - (r1 * r1 - r2 * Fraction(1, 12)),
        r2.dz() - (r1 * r2 * 4 - r3 * 6),
        r3.dz() - (r1 * r3 * 6 - r2 * r2 * Fraction(1, 3)),
    ]
    classical = [
        e2.theta_q() - (e2 * e2 - e4) * Fraction(1, 12),
        e4.theta_q() - (e2 * e4 - e6) * Fraction(1, 3),
        e6.theta_q() - (e2 * e6 - e4 * e4) * Fraction(1, 2),
    ]
    return RamanujanReport(order=order,
                           residuals=[r.truncated(order) for r in residuals],
                           classical_residuals=[r.truncated(order)
                                                for r in classical],
                           kappa_weights=(2, 3, 4))


def jacobi_residual(order):
    """theta3^4 - theta2^4 - theta4^4, an internal lattice-sum oracle."""
    t2, t3, t4 = (theta_null(k, order) for k in (2, 3, 4))
    return (t3 ** 4 - t2 ** 4 - t4 ** 4).truncated(order)


# -- quadratic vector fields -----------------------------------------------


@dataclass
class PolyField3:
    """A vector field on three coordinates with polynomial components."""

    variables: tuple
    rhs: tuple

    def equals(self, other):
        return self.variables == other.variables and all(
            expr_equal(a, b) for a, b in zip(self.rhs, other.rhs))

    def scaled(self, c):
        return PolyField3(self.variables,
                          tuple(r * as_expr(c) for r in self.rhs))


def _field_vars(names=("t1", "t2", "t3")):
    return tuple(as_expr(free_sym(v)) for v in names)


def halphen_system(a1, a2, a3, lam):
    """The quadratic deformation family

        t_i' = a_i t_i^2 + (lam - a_i)(t_i t_j + t_i t_k - t_j t_k)

    with (i, j, k) cycling; (0, 0, 0, 1) is the Darboux-Halphen field
    t_i' = t_i(t_j + t_k) - t_j t_k and (1, 1, 1, 1) decouples into
    t_i' = t_i^2.
    """
    a = [Fraction(x) for x in (a1, a2, a3)]
    lam = Fraction(lam)
    t = _field_vars()
    rhs = []
    for i in range(3):
        ti, tj, tk = t[i], t[(i + 1) % 3], t[(i + 2) % 3]
        rhs.append(as_expr(a[i]) * ti * ti +
                   as_expr(lam - a[i]) * (ti * tj + ti * tk - tj * tk))
    return PolyField3(("t1", "t2", "t3"), tuple(rhs))


def darboux_halphen_field():
    """t_i' = t_i(t_j + t_k) - t_j t_k."""
    return halphen_system(0, 0, 0, 1)


def halphen_pairwise_field():
    """Right-hand sides solved from the pairwise form t_i' + t_j' = t_i t_j.

    Summing and subtracting the three pairwise relations gives
    t_1' = (t_1 t_2 + t_1 t_3 - t_2 t_3)/2 and cyclic; this is half the
    Darboux-Halphen field, the factor-two time rescaling between the two
    presentations.
    """
    return darboux_halphen_field().scaled(Fraction(1, 2))


def ramanujan_field():
    """The degree-graded Eisenstein flow on (r1, r2, r3)."""
    r1, r2, r3 = _field_vars(("r1", "r2", "r3"))
    return PolyField3(("r1", "r2", "r3"), (
        r1 * r1 - r2 * Fraction(1, 12),
        r1 * r2 * 4 - r3 * 6,
        r1 * r3 * 6 - r2 * r2 * Fraction(1, 3),
    ))


# -- the symmetric-function map --------------------------------------------


def pushforward_map():
    """The displayed map (T, 4 sum, 4 prod) with T the coordinate mean.

    Components: T = (t1+t2+t3)/3, then 4 times the second elementary
    symmetric function of (T - t_i), then 4 times their product.
    """
    t1, t2, t3 = _field_vars()
    T = (t1 + t2 + t3) / as_expr(3)
    u1, u2, u3 = T - t1, T - t2, T - t3
    return (T,
            as_expr(4) * (u1 * u2 + u1 * u3 + u2 * u3),
            as_expr(4) * (u1 * u2 * u3))


@dataclass
class PushforwardVerdict:
    """Outcome of pushing the Darboux-Halphen field through the map.

    ``matches`` lists the sign choices (eps2, eps3, eps_t) -- flip the
    second map component, the third, reverse time -- under which the
    Jacobian of the adjusted map applied to the Darboux-Halphen field
    equals the Eisenstein flow exactly as polynomials.  The map as
    displayed is the choice (1, 1, 1); ``normalization`` is the unique
    working choice when there is exactly one.
    """

    displayed_exact: bool
    normalization: tuple
    matches: list
    displayed_residuals: tuple

    @property
    def ok(self):
        return self.normalization is not None


def pushforward_check():
    """Compare the mapped Darboux-Halphen field with the Eisenstein flow.

    For each sign choice the three residual polynomials in t1, t2, t3
    are computed exactly; a verdict never forces equality, it records
    which orientation (if any) makes every residual vanish.
    """
    tvars = [free_sym(v) for v in ("t1", "t2", "t3")]
    dh = darboux_halphen_field()
    phi = pushforward_map()

    def residuals(eps2, eps3, eps_t):
        p1, p2, p3 = phi[0], phi[1] * as_expr(eps2), phi[2] * as_expr(eps3)
        pushed = []
        for comp in (p1, p2, p3):
            flow = DiffExpr.zero()
            for v, rhs in zip(tvars, dh.rhs):
                flow = flow + comp.partial(v.key) * rhs
            pushed.append(flow * as_expr(eps_t))
        target = (p1 * p1 - p2 * Fraction(1, 12),
                  p1 * p2 * 4 - p3 * 6,
                  p1 * p3 * 6 - p2 * p2 * Fraction(1, 3))
        return tuple(a - b for a, b in zip(pushed, target))

    matches = []
    for eps2 in (1, -1):
        for eps3 in (1, -1):
            for eps_t in (1, -1):
                if all(r.is_zero() for r in residuals(eps2, eps3, eps_t)):
                    matches.append((eps2, eps3, eps_t))
    return PushforwardVerdict(
        displayed_exact=(1, 1, 1) in matches,
        normalization=matches[0] if len(matches) == 1 else None,
        matches=matches,
        displayed_residuals=residuals(1, 1, 1))
