"""Operator families with rational-in-z coefficients.

The built-in presets are the fourth-order hypergeometric operators

    theta^4 - c z (theta + r1)(theta + r2)(theta + 1 - r2)(theta + 1 - r1)

attached to the fourteen smooth complete intersections X(...) with a
one-parameter mirror family; expanding the product gives

    a_i = c z e_{4-i} / (1 - c z),

with e_k the elementary symmetric functions of (r1, r2, 1-r2, 1-r1), and
the pairing prefactor is atilde = c0/(1 - c z).  Every preset is
self-dual.

Custom families load from small TOML files holding rational expressions
in z, e.g.::

    name = "quintic"
    n = 3
    atilde = "1/(1 - 3125*z)"

    [coefficients]
    a0 = "120*z/(1 - 3125*z)"
    a1 = "1250*z/(1 - 3125*z)"
    a2 = "4375*z/(1 - 3125*z)"
    a3 = "6250*z/(1 - 3125*z)"

The expression grammar: integers, ``z``, ``+ - * / ^`` and parentheses;
division builds exact rationals.
"""

from __future__ import annotations

from fractions import Fraction

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .diffop import DiffOp
from .exactalg import RatFunc


class FamilyError(ValueError):
    pass


class FamilySpec:
    """An operator family: order, coefficients a_i(z), optional atilde."""

    __slots__ = ("name", "n", "coeffs", "atilde", "label", "params")

    def __init__(self, name, n, coeffs, atilde=None, label=None, params=None):
        if len(coeffs) != n + 1:
            raise FamilyError(
                f"need {n + 1} coefficients a0..a{n}, got {len(coeffs)}")
        self.name = name
        self.n = n
        self.coeffs = list(coeffs)
        self.atilde = atilde
        self.label = label or name
        self.params = params or {}

    def operator(self):
        return DiffOp(self.coeffs)

    def __repr__(self):
        return f"FamilySpec({self.name!r}, n={self.n})"


# ---------------------------------------------------------------- grammar


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, msg):
        raise FamilyError(f"{msg} at position {self.pos} in {self.text!r}")

    def peek(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self):
        c = self.peek()
        self.pos += 1
        return c

    def integer(self):
        c = self.peek()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self.error(f"expected a number, found {c!r}")
        return int(self.text[start:self.pos])

    def atom(self):
        c = self.peek()
        if c == "(":
            self.take()
            e = self.expr()
            if self.peek() != ")":
                self.error("expected ')'")
            self.take()
            return e
        if c == "z":
            self.take()
            return RatFunc.z()
        if c.isdigit():
            return RatFunc.const(self.integer())
        self.error(f"expected a number, 'z' or '(', found {c!r}")

    def factor(self):
        sign = 1
        while self.peek() in ("+", "-"):
            if self.take() == "-":
                sign = -sign
        base = self.atom()
        if self.peek() == "^":
            self.take()
            esign = 1
            if self.peek() == "-":
                self.take()
                esign = -1
            base = base ** (esign * self.integer())
        return base if sign > 0 else -base

    def term(self):
        v = self.factor()
        while True:
            c = self.peek()
            if c == "*":
                self.take()
                v = v * self.factor()
            elif c == "/":
                self.take()
                d = self.factor()
                if d.is_zero():
                    self.error("division by zero")
                v = v / d
            else:
                return v

    def expr(self):
        v = self.term()
        while True:
            c = self.peek()
            if c == "+":
                self.take()
                v = v + self.term()
            elif c == "-":
                self.take()
                v = v - self.term()
            else:
                return v

    def parse(self):
        v = self.expr()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}")
        return v


def parse_rational_function(text):
    """Exact rational function of z from an expression string."""
    return _Parser(str(text)).parse()


# ---------------------------------------------------------------- presets


def _elementary_symmetric(values):
    """[e_0, e_1, ..., e_m] of the given values."""
    es = [Fraction(1)]
    for v in values:
        es = [es[k] + (v * es[k - 1] if k else 0) for k in range(len(es))] + \
             [v * es[-1]]
    return es


def hypergeometric_family(r1, r2, c, name=None, label=None, c0=1):
    """The order-4 family theta^4 - c z prod(theta + root) with roots
    (r1, r2, 1-r2, 1-r1)."""
    r1, r2, c, c0 = Fraction(r1), Fraction(r2), Fraction(c), Fraction(c0)
    roots = [r1, r2, 1 - r2, 1 - r1]
    es = _elementary_symmetric(roots)
    z = RatFunc.z()
    gear = c * z / (1 - c * z)
    coeffs = [gear * es[4 - i] for i in range(4)]
    at = c0 / (1 - c * z)
    return FamilySpec(name or f"hg({r1},{r2},{c})", 3, coeffs, atilde=at,
                      label=label,
                      params={"r1": r1, "r2": r2, "c": c, "c0": c0})


_TABLE = [
    (Fraction(1, 5), Fraction(2, 5), 3125, "X(5)"),
    (Fraction(1, 6), Fraction(1, 3), 23328, "X(6)"),
    (Fraction(1, 8), Fraction(3, 8), 262144, "X(8)"),
    (Fraction(1, 10), Fraction(3, 10), 8000000, "X(10)"),
    (Fraction(1, 3), Fraction(1, 3), 729, "X(3,3)"),
    (Fraction(1, 4), Fraction(1, 2), 1024, "X(2,4)"),
    (Fraction(1, 3), Fraction(1, 2), 432, "X(2,2,3)"),
    (Fraction(1, 2), Fraction(1, 2), 256, "X(2,2,2,2)"),
    (Fraction(1, 4), Fraction(1, 4), 4096, "X(4,4)"),
    (Fraction(1, 6), Fraction(1, 6), 186624, "X(6,6)"),
    (Fraction(1, 4), Fraction(1, 3), 1728, "X(3,4)"),
    (Fraction(1, 6), Fraction(1, 2), 6912, "X(2,6)"),
    (Fraction(1, 6), Fraction(1, 4), 27648, "X(4,6)"),
    (Fraction(1, 12), Fraction(5, 12), 2985984, "X(2,12)"),
]

_ALIASES = {"quintic": "X(5)", "sextic": "X(6)", "octic": "X(8)"}


def list_presets():
    return [label for _, _, _, label in _TABLE]


def load_preset(name):
    want = str(name)
    if want.lower().startswith("table1:"):
        want = want.split(":", 1)[1]
    want = _ALIASES.get(want.lower(), want)
    for idx, (r1, r2, c, label) in enumerate(_TABLE, start=1):
        if want == label or want == str(idx):
            return hypergeometric_family(r1, r2, c, name=label, label=label)
    raise FamilyError(
        f"unknown preset {name!r}; known: {', '.join(list_presets())} "
        f"(or an index 1..{len(_TABLE)}, or {', '.join(sorted(_ALIASES))})")


# ---------------------------------------------------------------- loading


def load_family(source):
    """A FamilySpec from a preset name/index or a TOML file path."""
    text = str(source)
    if text.endswith(".toml"):
        with open(text, "rb") as fh:
            data = tomllib.load(fh)
        return family_from_dict(data, default_name=text)
    return load_preset(text)


def _as_rational(value, where):
    if isinstance(value, (int, str)):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError):
            raise FamilyError(f"{where} is not a rational: {value!r}") \
                from None
    raise FamilyError(f"{where} must be an integer or a string like "
                      f"\"1/3\", got {value!r}")


def family_from_dict(data, default_name="family"):
    name = data.get("name", default_name)
    hg = data.get("hypergeometric")
    if hg is not None:
        if "coefficients" in data:
            raise FamilyError("give either [hypergeometric] or "
                              "[coefficients], not both")
        if "n" in data and int(data["n"]) != 3:
            raise FamilyError("hypergeometric families have n = 3")
        missing = {"r1", "r2", "c"} - set(hg)
        if missing:
            raise FamilyError(
                f"[hypergeometric] is missing {sorted(missing)}")
        return hypergeometric_family(
            _as_rational(hg["r1"], "r1"), _as_rational(hg["r2"], "r2"),
            _as_rational(hg["c"], "c"),
            c0=_as_rational(hg.get("c0", 1), "c0"), name=name)
    try:
        n = int(data["n"])
    except KeyError:
        raise FamilyError("family file needs an integer key 'n'") from None
    if n < 1:
        raise FamilyError(f"n must be >= 1, got {n}")
    ctab = data.get("coefficients")
    if not isinstance(ctab, dict):
        raise FamilyError("family file needs a [coefficients] table")
    coeffs = []
    for i in range(n + 1):
        key = f"a{i}"
        if key not in ctab:
            raise FamilyError(f"[coefficients] is missing {key}")
        coeffs.append(parse_rational_function(ctab[key]))
    extra = set(ctab) - {f"a{i}" for i in range(n + 1)}
    if extra:
        raise FamilyError(
            f"[coefficients] has unexpected keys {sorted(extra)} for n={n}")
    at = data.get("atilde")
    if at is not None:
        at = parse_rational_function(at)
    return FamilySpec(name, n, coeffs, atilde=at)
