"""Exact arithmetic for the differential algebra of the moduli construction.

Three layers, all over arbitrary-precision rationals:

* ``RatFunc`` -- univariate rational functions of z with exact gcd
  reduction (monic denominator).  These carry the concrete coefficients
  of an operator family.
* ``MPoly`` / ``DiffExpr`` -- sparse multivariate polynomials and their
  fraction field over a global symbol registry: z, the jet symbols
  (theta^k applied to a coefficient a_i), the exponential prefactor
  ``atilde``, the even-order center symbol ``smid``, moduli chart
  symbols t_i, dependent matrix entries s_ij, and free variables.
* the logarithmic derivation theta = z*d/dz acting on each layer, with
  configurable handling of chart symbols (error out, or treat as
  constants).

Equality of fractions is decided by cross multiplication, so no
multivariate gcd is ever required.  What *is* normalized: the zero
fraction, shared monomial content, purely-z denominators (cancelled via
univariate gcd and made monic), and otherwise the denominator's leading
coefficient.  Printing is canonical -- a global symbol order independent
of creation order, plus a graded monomial order -- so rendered
expressions are stable across runs and usable as golden strings.
"""

from __future__ import annotations

import math
import threading
from fractions import Fraction

Rational = Fraction

binom = math.comb


class ChartDeriveError(ValueError):
    """theta was applied to a symbol it has no rule for (chart/dependent/free)."""


# --------------------------------------------------------------------------
# symbol registry
# --------------------------------------------------------------------------
#
# A symbol is identified by a key tuple whose first entry fixes its rank in
# the global order:
#
#   (0,)            z
#   (1, i, k)       jet: theta^k a_i
#   (2, 0, n)       atilde for an order-(n+1) operator
#   (2, 1, n)       smid = the center entry s_{l,l} for even n
#   (3, idx)        chart symbol t_idx
#   (4, i, j)       dependent matrix entry s_ij
#   (5, name)       free variable
#
# Keys, not names, drive ordering and identity; names are for rendering.

KIND_Z = 0
KIND_JET = 1
KIND_EXP = 2
KIND_CHART = 3
KIND_DEP = 4
KIND_VAR = 5


class Sym:
    __slots__ = ("key", "name", "kind")

    def __init__(self, key, name, kind):
        self.key = key
        self.name = name
        self.kind = kind

    def __repr__(self):
        return f"Sym({self.name})"

    def expr(self):
        return DiffExpr.from_sym(self)


_REGISTRY: dict[tuple, Sym] = {}
_REG_LOCK = threading.Lock()


def _register(key, name, kind):
    with _REG_LOCK:
        s = _REGISTRY.get(key)
        if s is None:
            s = Sym(key, name, kind)
            _REGISTRY[key] = s
        return s


def sym_by_key(key):
    return _REGISTRY[key]


def sym_name(key):
    return _REGISTRY[key].name if key in _REGISTRY else repr(key)


def z_sym():
    return _register((KIND_Z,), "z", KIND_Z)


def jet(i, k=0):
    """The symbol theta^k a_i."""
    if k == 0:
        name = f"a{i}"
    elif k == 1:
        name = f"da{i}"
    else:
        name = f"d{k}a{i}"
    return _register((KIND_JET, i, k), name, KIND_JET)


def atilde_sym(n):
    return _register((KIND_EXP, 0, n), "atilde", KIND_EXP)


def smid_sym(n):
    return _register((KIND_EXP, 1, n), "smid", KIND_EXP)


def chart_sym(idx):
    return _register((KIND_CHART, idx), f"t{idx}", KIND_CHART)


def s_entry_sym(i, j):
    return _register((KIND_DEP, i, j), f"s{i}{j}", KIND_DEP)


def free_sym(name):
    return _register((KIND_VAR, name), name, KIND_VAR)


# --------------------------------------------------------------------------
# monomials: sorted tuples of (key, exponent), exponents > 0
# --------------------------------------------------------------------------


def _mono_mul(m1, m2):
    if not m1:
        return m2
    if not m2:
        return m1
    d = dict(m1)
    for k, e in m2:
        d[k] = d.get(k, 0) + e
    return tuple(sorted(d.items()))


def _mono_degree(m):
    return sum(e for _, e in m)


def _mono_order(m):
    # graded, then lexicographic on the (key, exponent) pairs
    return (_mono_degree(m), m)


# --------------------------------------------------------------------------
# sparse multivariate polynomials
# --------------------------------------------------------------------------


class MPoly:
    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = terms if terms is not None else {}

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero():
        return MPoly({})

    @staticmethod
    def const(c):
        c = Fraction(c)
        return MPoly({(): c}) if c else MPoly({})

    @staticmethod
    def one():
        return MPoly.const(1)

    @staticmethod
    def sym(s, exp=1):
        if exp == 0:
            return MPoly.one()
        return MPoly({((s.key, exp),): Fraction(1)})

    @staticmethod
    def sym_key(key, exp=1):
        if exp == 0:
            return MPoly.one()
        return MPoly({((key, exp),): Fraction(1)})

    @staticmethod
    def from_terms(terms):
        return MPoly({m: c for m, c in terms.items() if c})

    # -- predicates --------------------------------------------------------

    def is_zero(self):
        return not self.terms

    def as_const(self):
        """The Fraction value if constant, else None."""
        if not self.terms:
            return Fraction(0)
        if len(self.terms) == 1 and () in self.terms:
            return self.terms[()]
        return None

    def __eq__(self, other):
        if not isinstance(other, MPoly):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        out = dict(self.terms)
        for m, c in other.terms.items():
            v = out.get(m)
            if v is None:
                out[m] = c
            else:
                v = v + c
                if v:
                    out[m] = v
                else:
                    del out[m]
        return MPoly(out)

    def __neg__(self):
        return MPoly({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not self.terms or not other.terms:
            return MPoly.zero()
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                c = c1 * c2
                v = out.get(m)
                if v is None:
                    out[m] = c
                else:
                    v = v + c
                    if v:
                        out[m] = v
                    else:
                        del out[m]
        return MPoly(out)

    def scale(self, c):
        c = Fraction(c)
        if not c:
            return MPoly.zero()
        return MPoly({m: q * c for m, q in self.terms.items()})

    def __pow__(self, e):
        if e < 0:
            raise ValueError("negative power of a polynomial")
        result = MPoly.one()
        base = self
        while e:
            if e & 1:
                result = result * base
            base = base * base if e > 1 else base
            e >>= 1
        return result

    # -- structure ---------------------------------------------------------

    def symbol_keys(self):
        keys = set()
        for m in self.terms:
            for k, _ in m:
                keys.add(k)
        return keys

    def degree_in(self, key):
        deg = 0
        for m in self.terms:
            for k, e in m:
                if k == key and e > deg:
                    deg = e
        return deg

    def coeff_of(self, key, exp):
        """Collect terms with the given exponent of ``key``, that factor removed."""
        out = {}
        for m, c in self.terms.items():
            e = 0
            rest = []
            for k, d in m:
                if k == key:
                    e = d
                else:
                    rest.append((k, d))
            if e == exp:
                out[tuple(rest)] = out.get(tuple(rest), Fraction(0)) + c
        return MPoly.from_terms(out)

    def leading(self):
        """(monomial, coeff) maximal in the canonical order; None if zero."""
        if not self.terms:
            return None
        m = max(self.terms, key=_mono_order)
        return m, self.terms[m]

    def monomial_content(self):
        """Per-key minimal exponent across all terms (empty poly -> {})."""
        if not self.terms:
            return {}
        it = iter(self.terms)
        content = dict(next(it))
        for m in it:
            md = dict(m)
            for k in list(content):
                e = md.get(k, 0)
                if e < content[k]:
                    if e:
                        content[k] = e
                    else:
                        del content[k]
            if not content:
                break
        return content

    def divide_monomial(self, content):
        if not content:
            return self
        out = {}
        for m, c in self.terms.items():
            md = dict(m)
            for k, e in content.items():
                md[k] -= e
                if not md[k]:
                    del md[k]
            out[tuple(sorted(md.items()))] = c
        return MPoly(out)

    def content_gcd(self):
        """gcd of coefficients (positive), 0 for the zero polynomial."""
        g = Fraction(0)
        for c in self.terms.values():
            g = _frac_gcd(g, c)
        return g

    # -- z-univariate view -------------------------------------------------

    def is_z_only(self):
        zk = (KIND_Z,)
        return all(all(k == zk for k, _ in m) for m in self.terms)

    def to_z_coeffs(self):
        """Dense Fraction list (ascending powers of z); requires is_z_only."""
        zk = (KIND_Z,)
        deg = 0
        for m in self.terms:
            if m:
                deg = max(deg, m[0][1])
        out = [Fraction(0)] * (deg + 1)
        for m, c in self.terms.items():
            if not m:
                out[0] = c
            else:
                (k, e), = m
                if k != zk:
                    raise ValueError("polynomial is not z-only")
                out[e] = c
        return out

    @staticmethod
    def from_z_coeffs(coeffs):
        zk = (KIND_Z,)
        z_sym()
        out = {}
        for e, c in enumerate(coeffs):
            c = Fraction(c)
            if not c:
                continue
            out[((zk, e),) if e else ()] = c
        return MPoly(out)

    # -- calculus ----------------------------------------------------------

    def partial(self, key):
        out = MPoly.zero()
        for m, c in self.terms.items():
            for idx, (k, e) in enumerate(m):
                if k == key:
                    rest = list(m)
                    if e == 1:
                        del rest[idx]
                    else:
                        rest[idx] = (k, e - 1)
                    out = out + MPoly({tuple(rest): c * e})
                    break
        return out

    def derive(self, rule):
        """Extend a derivation: rule(key) -> DiffExpr image of that symbol."""
        out = DiffExpr.zero()
        for m, c in self.terms.items():
            for idx, (k, e) in enumerate(m):
                rest = list(m)
                if e == 1:
                    del rest[idx]
                else:
                    rest[idx] = (k, e - 1)
                img = rule(k)
                if img.is_zero():
                    continue
                out = out + DiffExpr.from_mpoly(MPoly({tuple(rest): c * e})) * img
        return out

    def subs(self, mapping):
        """Substitute symbols (key -> DiffExpr); returns a DiffExpr."""
        out = DiffExpr.zero()
        cache = {}
        for m, c in self.terms.items():
            term = DiffExpr.const(c)
            for k, e in m:
                if k in mapping:
                    base = mapping[k]
                    if not isinstance(base, DiffExpr):
                        base = as_expr(base)
                    pw = cache.get((k, e))
                    if pw is None:
                        pw = base ** e
                        cache[(k, e)] = pw
                    term = term * pw
                else:
                    term = term * DiffExpr.from_mpoly(MPoly.sym_key(k, e))
            out = out + term
        return out

    def eval_env(self, env):
        """Numeric value; env maps key -> number."""
        total = 0
        for m, c in self.terms.items():
            v = c.numerator / c.denominator if isinstance(c, Fraction) else c
            for k, e in m:
                v *= env[k] ** e
            total += v
        return total

    # -- rendering ---------------------------------------------------------

    def text(self):
        if not self.terms:
            return "0"
        pieces = []
        for m in sorted(self.terms, key=_mono_order, reverse=True):
            c = self.terms[m]
            factors = []
            for k, e in m:
                nm = sym_name(k)
                factors.append(nm if e == 1 else f"{nm}^{e}")
            mag = abs(c)
            if not factors:
                body = str(mag)
            elif mag == 1:
                body = "*".join(factors)
            else:
                body = "*".join([str(mag)] + factors)
            if not pieces:
                pieces.append(body if c > 0 else "-" + body)
            else:
                pieces.append(("+ " if c > 0 else "- ") + body)
        return " ".join(pieces)

    def __repr__(self):
        return f"MPoly({self.text()})"


def _frac_gcd(a, b):
    a, b = abs(a), abs(b)
    if not a:
        return b
    if not b:
        return a
    return Fraction(
        math.gcd(a.numerator * b.denominator, b.numerator * a.denominator),
        a.denominator * b.denominator,
    )


# --------------------------------------------------------------------------
# dense univariate polynomial helpers over Fraction (ascending coefficients)
# --------------------------------------------------------------------------


def _poly_trim(p):
    while p and not p[-1]:
        p.pop()
    return p


def poly_add(p, q):
    n = max(len(p), len(q))
    out = [Fraction(0)] * n
    for i, c in enumerate(p):
        out[i] += c
    for i, c in enumerate(q):
        out[i] += c
    return _poly_trim(out)


def poly_neg(p):
    return [-c for c in p]

def poly_sub(p, q):
    return poly_add(p, poly_neg(q))


def poly_mul(p, q):
    if not p or not q:
        return []
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if not a:
            continue
        for j, b in enumerate(q):
            out[i + j] += a * b
    return _poly_trim(out)


def poly_scale(p, c):
    c = Fraction(c)
    return _poly_trim([a * c for a in p])


def poly_divmod(p, q):
    if not q:
        raise ZeroDivisionError("polynomial division by zero")
    p = list(p)
    quot = [Fraction(0)] * max(len(p) - len(q) + 1, 0)
    lead = q[-1]
    while len(p) >= len(q) and p:
        _poly_trim(p)
        if len(p) < len(q):
            break
        c = p[-1] / lead
        d = len(p) - len(q)
        quot[d] = c
        for i, b in enumerate(q):
            p[i + d] -= c * b
        p.pop()
    return _poly_trim(quot), _poly_trim(p)


def poly_gcd(p, q):
    p, q = list(p), list(q)
    while q:
        _, r = poly_divmod(p, q)
        p, q = q, r
        if p:
            p = poly_scale(p, 1 / p[-1])  # keep remainders monic
    return p if p else []


def poly_deriv(p):
    return _poly_trim([p[i] * i for i in range(1, len(p))])


def poly_eval(p, x):
    v = 0
    for c in reversed(p):
        v = v * x + (c.numerator / c.denominator if isinstance(c, Fraction) and not isinstance(x, Fraction) else c)
    return v


# --------------------------------------------------------------------------
# univariate rational functions of z
# --------------------------------------------------------------------------


class RatFunc:
    """p(z)/q(z) over Q, stored reduced with monic denominator."""

    __slots__ = ("num", "den")

    def __init__(self, num, den=(Fraction(1),), _normalized=False):
        num = [Fraction(c) for c in num]
        den = [Fraction(c) for c in den]
        _poly_trim(num)
        _poly_trim(den)
        if not den:
            raise ZeroDivisionError("zero denominator")
        if not _normalized:
            if not num:
                den = [Fraction(1)]
            else:
                g = poly_gcd(num, den)
                if len(g) > 1:
                    num, _ = poly_divmod(num, g)
                    den, _ = poly_divmod(den, g)
                lc = den[-1]
                if lc != 1:
                    num = poly_scale(num, 1 / lc)
                    den = poly_scale(den, 1 / lc)
        self.num = tuple(num)
        self.den = tuple(den)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def const(c):
        return RatFunc([Fraction(c)])

    @staticmethod
    def zero():
        return RatFunc([])

    @staticmethod
    def one():
        return RatFunc([Fraction(1)])

    @staticmethod
    def z():
        return RatFunc([Fraction(0), Fraction(1)])

    # -- predicates --------------------------------------------------------

    def is_zero(self):
        return not self.num

    def as_const(self):
        if not self.num:
            return Fraction(0)
        if len(self.num) == 1 and self.den == (Fraction(1),):
            return self.num[0]
        return None

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = RatFunc.const(other)
        if not isinstance(other, RatFunc):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.num, self.den))

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, (int, Fraction)):
            return RatFunc.const(other)
        if isinstance(other, RatFunc):
            return other
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        num = poly_add(poly_mul(list(self.num), list(o.den)),
                       poly_mul(list(o.num), list(self.den)))
        return RatFunc(num, poly_mul(list(self.den), list(o.den)))

    __radd__ = __add__

    def __neg__(self):
        return RatFunc(poly_neg(list(self.num)), list(self.den), _normalized=True)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return RatFunc(poly_mul(list(self.num), list(o.num)),
                       poly_mul(list(self.den), list(o.den)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        if o.is_zero():
            raise ZeroDivisionError("division by zero rational function")
        return RatFunc(poly_mul(list(self.num), list(o.den)),
                       poly_mul(list(self.den), list(o.num)))

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return o / self

    def __pow__(self, e):
        if e < 0:
            return RatFunc.one() / (self ** (-e))
        out = RatFunc.one()
        for _ in range(e):
            out = out * self
        return out

    # -- calculus ----------------------------------------------------------

    def deriv(self):
        num = poly_sub(poly_mul(poly_deriv(list(self.num)), list(self.den)),
                       poly_mul(list(self.num), poly_deriv(list(self.den))))
        return RatFunc(num, poly_mul(list(self.den), list(self.den)))

    def theta(self):
        """z * d/dz."""
        d = self.deriv()
        return RatFunc(poly_mul([Fraction(0), Fraction(1)], list(d.num)), list(d.den))

    def eval(self, x):
        d = poly_eval(list(self.den), x)
        if d == 0:
            raise ZeroDivisionError(f"pole of rational function at {x!r}")
        return poly_eval(list(self.num), x) / d

    # -- conversion / rendering -------------------------------------------

    def to_expr(self):
        return DiffExpr(MPoly.from_z_coeffs(list(self.num)),
                        MPoly.from_z_coeffs(list(self.den)))

    def text(self):
        return self.to_expr().text()

    def __repr__(self):
        return f"RatFunc({self.text()})"


def theta_derive(f):
    """Logarithmic derivative operator theta = z*d/dz on RatFunc."""
    return f.theta()


# --------------------------------------------------------------------------
# fraction field over the symbol registry
# --------------------------------------------------------------------------


class DiffExpr:
    """Quotient of two MPoly, normalized enough to be canonical in practice.

    Normalization: zero has the unique form 0/1; shared monomial content
    between numerator and denominator is cancelled; when the denominator
    involves only z, the z-content (univariate gcd) is cancelled as well
    and the denominator is made monic; otherwise the denominator's leading
    coefficient is scaled to 1.  Equality is cross multiplication.
    """

    __slots__ = ("num", "den")

    def __init__(self, num, den=None, _normalized=False):
        if den is None:
            den = MPoly.one()
        if _normalized:
            self.num = num
            self.den = den
            return
        if den.is_zero():
            raise ZeroDivisionError("zero denominator")
        if num.is_zero():
            self.num = MPoly.zero()
            self.den = MPoly.one()
            return
        # cancel shared monomial content
        nc = num.monomial_content()
        dc = den.monomial_content()
        shared = {}
        for k, e in nc.items():
            if k in dc:
                shared[k] = min(e, dc[k])
        if shared:
            num = num.divide_monomial(shared)
            den = den.divide_monomial(shared)
        dconst = den.as_const()
        if dconst is not None:
            num = num.scale(1 / dconst)
            den = MPoly.one()
        elif den.is_z_only():
            dz = den.to_z_coeffs()
            if num.is_z_only():
                nz = num.to_z_coeffs()
                g = poly_gcd(nz, dz)
                if len(g) > 1:
                    nz, _ = poly_divmod(nz, g)
                    dz, _ = poly_divmod(dz, g)
                lc = dz[-1]
                num = MPoly.from_z_coeffs(poly_scale(nz, 1 / lc))
                den = MPoly.from_z_coeffs(poly_scale(dz, 1 / lc))
            else:
                # cancel the z-content of the numerator against the denominator
                g = poly_gcd(dz, _z_content(num))
                if len(g) > 1:
                    dz, _ = poly_divmod(dz, g)
                    num = _z_quotient(num, g)
                lc = dz[-1]
                num = num.scale(1 / lc)
                den = MPoly.from_z_coeffs(poly_scale(dz, 1 / lc))
        else:
            zk = (KIND_Z,)
            if num.degree_in(zk) and den.degree_in(zk):
                g = poly_gcd(_z_content(num), _z_content(den))
                if len(g) > 1:
                    num = _z_quotient(num, g)
                    den = _z_quotient(den, g)
            led = den.leading()
            lc = led[1]
            if lc != 1:
                num = num.scale(1 / lc)
                den = den.scale(1 / lc)
        self.num = num
        self.den = den

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero():
        return DiffExpr(MPoly.zero(), MPoly.one(), _normalized=True)

    @staticmethod
    def one():
        return DiffExpr(MPoly.one(), MPoly.one(), _normalized=True)

    @staticmethod
    def const(c):
        return DiffExpr(MPoly.const(c), MPoly.one(), _normalized=True)

    @staticmethod
    def from_sym(s):
        return DiffExpr(MPoly.sym(s), MPoly.one(), _normalized=True)

    @staticmethod
    def from_mpoly(p):
        return DiffExpr(p, MPoly.one(), _normalized=True)

    # -- predicates --------------------------------------------------------

    def is_zero(self):
        return self.num.is_zero()

    def as_const(self):
        if self.den.as_const() == 1:
            return self.num.as_const()
        return None

    def equals(self, other):
        other = as_expr(other)
        return (self.num * other.den) == (other.num * self.den)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction, MPoly, DiffExpr, Sym)):
            return self.equals(other)
        return NotImplemented

    def __hash__(self):
        raise TypeError("DiffExpr is unhashable; use .text() as a key")

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        o = as_expr(other)
        if self.den is o.den or self.den == o.den:
            return DiffExpr(self.num + o.num, self.den)
        return DiffExpr(self.num * o.den + o.num * self.den, self.den * o.den)

    __radd__ = __add__

    def __neg__(self):
        return DiffExpr(-self.num, self.den, _normalized=True)

    def __sub__(self, other):
        return self + (-as_expr(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = as_expr(other)
        return DiffExpr(self.num * o.num, self.den * o.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = as_expr(other)
        if o.is_zero():
            raise ZeroDivisionError("division by zero expression")
        return DiffExpr(self.num * o.den, self.den * o.num)

    def __rtruediv__(self, other):
        return as_expr(other) / self

    def __pow__(self, e):
        if e < 0:
            return DiffExpr.one() / (self ** (-e))
        out = DiffExpr.one()
        base = self
        while e:
            if e & 1:
                out = out * base
            if e > 1:
                base = base * base
            e >>= 1
        return out

    def inverse(self):
        return DiffExpr.one() / self

    # -- structure ---------------------------------------------------------

    def symbol_keys(self):
        return self.num.symbol_keys() | self.den.symbol_keys()

    # -- calculus ----------------------------------------------------------

    def derive(self, rule):
        dn = self.num.derive(rule)
        dd = self.den.derive(rule)
        return (dn * self.den - dd * self.num) / as_expr(self.den * self.den)

    def partial(self, key):
        if isinstance(key, Sym):
            key = key.key
        dn = self.num.partial(key)
        dd = self.den.partial(key)
        return DiffExpr(dn * self.den - self.num * dd, self.den * self.den)

    def subs(self, mapping):
        mp = {}
        for k, v in mapping.items():
            if isinstance(k, Sym):
                k = k.key
            mp[k] = as_expr(v)
        touched = self.symbol_keys() & set(mp)
        if not touched:
            return self
        n = self.num.subs(mp)
        d = self.den.subs(mp)
        return n / d

    def eval_env(self, env):
        e = {}
        for k, v in env.items():
            if isinstance(k, Sym):
                k = k.key
            e[k] = v
        d = self.den.eval_env(e)
        if d == 0:
            raise ZeroDivisionError("denominator vanishes at evaluation point")
        return self.num.eval_env(e) / d

    # -- rendering ---------------------------------------------------------

    def text(self):
        if self.den.as_const() == 1:
            return self.num.text()
        return f"({self.num.text()})/({self.den.text()})"

    def __repr__(self):
        return f"DiffExpr({self.text()})"


def as_expr(x):
    """Coerce numbers, symbols, polynomials and RatFunc into DiffExpr."""
    if isinstance(x, DiffExpr):
        return x
    if isinstance(x, (int, Fraction)):
        return DiffExpr.const(x)
    if isinstance(x, Sym):
        return DiffExpr.from_sym(x)
    if isinstance(x, MPoly):
        return DiffExpr.from_mpoly(x)
    if isinstance(x, RatFunc):
        return x.to_expr()
    raise TypeError(f"cannot interpret {type(x).__name__} as an expression")


def expr_equal(e1, e2):
    """Exact equality in the fraction field (cross multiplication)."""
    return as_expr(e1).equals(as_expr(e2))


def to_ratfunc(x):
    """Coerce a constant or a z-only expression into a RatFunc."""
    if isinstance(x, RatFunc):
        return x
    if isinstance(x, (int, Fraction)):
        return RatFunc.const(x)
    e = as_expr(x)
    if e.num.is_z_only() and e.den.is_z_only():
        return RatFunc(e.num.to_z_coeffs(), e.den.to_z_coeffs())
    raise ValueError("expression is not a rational function of z alone")


def solve_linear(e, s):
    """Solve e == 0 for the symbol s; e must be affine in s.

    Affine means the numerator has degree 1 in s and the denominator does
    not involve s at all.
    """
    e = as_expr(e)
    key = s.key if isinstance(s, Sym) else s
    if e.den.degree_in(key):
        raise ValueError(f"{sym_name(key)} appears in the denominator")
    if e.num.degree_in(key) != 1:
        raise ValueError(f"expression is not affine in {sym_name(key)}")
    a = e.num.coeff_of(key, 1)
    b = e.num.coeff_of(key, 0)
    return DiffExpr(-b, a)


def _z_layers(p):
    """Group the terms of p by their z-free part: {rest-monomial: {z-exp: c}}."""
    zk = (KIND_Z,)
    groups = {}
    for m, c in p.terms.items():
        ze = 0
        rest = []
        for k, e in m:
            if k == zk:
                ze = e
            else:
                rest.append((k, e))
        groups.setdefault(tuple(rest), {})[ze] = c
    return groups


def _z_content(p):
    """gcd (as a z-polynomial) of the z-layers of p."""
    g = []
    for coeffs in _z_layers(p).values():
        lst = [Fraction(0)] * (max(coeffs) + 1)
        for e, c in coeffs.items():
            lst[e] = c
        g = poly_gcd(g, lst) if g else _poly_trim(lst)
        if len(g) <= 1:
            break
    return g


def _z_quotient(p, g):
    """Divide every z-layer of p by the z-polynomial g (must be exact)."""
    zk = (KIND_Z,)
    new_terms = {}
    for rest, coeffs in _z_layers(p).items():
        lst = [Fraction(0)] * (max(coeffs) + 1)
        for e, c in coeffs.items():
            lst[e] = c
        q, r = poly_divmod(lst, g)
        assert not r, "inexact z-content division"
        for e, c in enumerate(q):
            if not c:
                continue
            m = tuple(sorted(((zk, e),) + rest)) if e else rest
            new_terms[m] = new_terms.get(m, Fraction(0)) + c
    return MPoly.from_terms(new_terms)


# --------------------------------------------------------------------------
# the derivation theta on the symbol algebra
# --------------------------------------------------------------------------


def derivation_rule(chart_policy="error", exp_scale=None):
    """Rule for theta = z*d/dz on registry symbols.

    theta z = z; theta (theta^k a_i) = theta^{k+1} a_i;
    theta atilde = (2/(n+1)) a_n atilde;
    theta smid = -(1/(n+1)) a_n smid.

    chart_policy: "error" raises ChartDeriveError on chart symbols,
    dependent entries and free variables; "const" sends them to 0.

    exp_scale, when given, overrides the logarithmic derivative of atilde:
    theta atilde = exp_scale * atilde (and theta smid = -exp_scale/2 * smid).
    This is how a concretely bound a_n(z) enters instead of its jet symbol.
    """

    def rule(key):
        kind = key[0]
        if kind == KIND_Z:
            return as_expr(MPoly.sym_key(key))
        if kind == KIND_JET:
            _, i, k = key
            return as_expr(jet(i, k + 1))
        if kind == KIND_EXP:
            _, which, n = key
            me = as_expr(MPoly.sym_key(key))
            if exp_scale is not None:
                lam = as_expr(exp_scale)
            else:
                lam = as_expr(jet(n, 0)) * Fraction(2, n + 1)
            if which == 0:
                return lam * me
            return lam * me * Fraction(-1, 2)
        if chart_policy == "const":
            return DiffExpr.zero()
        raise ChartDeriveError(
            f"theta has no rule for symbol {sym_name(key)!r}")

    return rule


def jet_derive(e, n=None):
    """theta on a symbolic expression over z / jets / atilde / smid.

    Chart symbols and free variables are rejected.  ``n`` is optional and,
    when given, validated against any atilde/smid symbols present.
    """
    e = as_expr(e)
    if n is not None:
        for key in e.symbol_keys():
            if key[0] == KIND_EXP and key[2] != n:
                raise ValueError(
                    f"expression carries {sym_name(key)} of order n={key[2]}, "
                    f"but n={n} was requested")
    return e.derive(derivation_rule("error"))


def theta_on(e, chart_policy="error", exp_scale=None):
    return as_expr(e).derive(derivation_rule(chart_policy, exp_scale))


# --------------------------------------------------------------------------
# small exact matrix helpers (lists of lists of DiffExpr)
# --------------------------------------------------------------------------


def mat_zero(r, c):
    return [[DiffExpr.zero() for _ in range(c)] for _ in range(r)]


def mat_identity(n):
    return [[DiffExpr.one() if i == j else DiffExpr.zero()
             for j in range(n)] for i in range(n)]


def mat_from(rows):
    return [[as_expr(x) for x in row] for row in rows]


def mat_add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_sub(a, b):
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_scale(a, c):
    c = as_expr(c)
    return [[x * c for x in row] for row in a]


def mat_mul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = mat_zero(rows, cols)
    for i in range(rows):
        for k in range(inner):
            x = a[i][k]
            if x.is_zero():
                continue
            for j in range(cols):
                y = b[k][j]
                if y.is_zero():
                    continue
                out[i][j] = out[i][j] + x * y
    return out

def mat_transpose(a):
    return [list(col) for col in zip(*a)]


def mat_apply(a, f):
    return [[f(x) for x in row] for row in a]


def mat_equal(a, b):
    if len(a) != len(b) or any(len(ra) != len(rb) for ra, rb in zip(a, b)):
        return False
    return all(x.equals(y) for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def mat_det(a):
    """Cofactor expansion along the row with the most zeros (sizes are tiny)."""
    n = len(a)
    if n == 1:
        return a[0][0]
    best, best_count = 0, -1
    for i in range(n):
        zc = sum(1 for x in a[i] if x.is_zero())
        if zc > best_count:
            best, best_count = i, zc
    total = DiffExpr.zero()
    for j in range(n):
        x = a[best][j]
        if x.is_zero():
            continue
        minor = [[a[r][c] for c in range(n) if c != j]
                 for r in range(n) if r != best]
        sub = mat_det(minor)
        if (best + j) % 2:
            sub = -sub
        total = total + x * sub
    return total
