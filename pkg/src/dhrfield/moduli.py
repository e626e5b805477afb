"""Moduli chart on the pairing and the induced vector field.

A lower-triangular frame change S normalizes the pairing: S Omega S^T = Phi
with Phi the constant pairing matrix.  The entries of S in the lower
triangle split into independent chart variables t_1, ..., t_m (numbered
row-major) and dependent entries determined by the normalization; together
with the base coordinate t_0 = z they form a chart on the moduli space of
self-dual operators, of dimension

    (n+1)(n+3)/4 + 1   for n odd,
    n(n+2)/4 + 1       for n even.

For n odd the independent cells are those with i+j <= n+2 and every cell
with i+j >= n+3 is solved for.  For n even the antidiagonal center cell
(l,l), l = n/2+1, satisfies the quadratic atilde * s_ll^2 = (-1)^{n/2}; we
keep s_ll as the opaque symbol "smid" and eliminate the weight through
atilde = (-1)^{n/2} / smid^2, so the independent cells are i+j <= n+1 and
the remaining cells with i+j >= n+2 are solved for.

Moving in the moduli space deforms S along

    dS/dtau = Y S - (zdot/z) S A,

where A is the companion matrix, Y is the unique infinitesimal symmetry of
Phi (Y Phi + Phi Y^T = 0) with superdiagonal (1, y_1, ..., y_{n-2}, -1),
and the base flows as zdot = Y_12 * z * s22/s11 (for n = 1 the single
superdiagonal entry is -1, so zdot = -z * s22/s11).  Reading this equation
on the independent cells yields an autonomous system of ODEs in the chart
variables; reading it on the dependent cells gives nothing new exactly when
the operator is self-dual, which is what ``compatibility_check`` verifies
two ways without assuming it.
"""

from dataclasses import dataclass, field
from fractions import Fraction

from .connection import (
    IntersectionMatrix,
    atilde_closed_form,
    companion_matrix,
    phi_matrix,
)
from .diffop import DiffOp, generic_self_dual, self_duality_residuals
from .exactalg import (
    DiffExpr,
    RatFunc,
    as_expr,
    atilde_sym,
    chart_sym,
    expr_equal,
    jet,
    mat_mul,
    mat_scale,
    mat_sub,
    mat_transpose,
    mat_zero,
    s_entry_sym,
    smid_sym,
    solve_linear,
    theta_on,
    to_ratfunc,
    z_sym,
)


class ModuliError(ValueError):
    pass


def moduli_dimension(n):
    """Chart variables including the base coordinate t_0."""
    if n % 2:
        return (n + 1) * (n + 3) // 4 + 1
    return n * (n + 2) // 4 + 1


def chart_layout(n):
    """(independent, dependent, center): 1-based lower-triangle cells.

    independent cells are ordered row-major; this ordering is the chart
    numbering t_1, ..., t_m.  center is the (l,l) cell for n even, None
    for n odd.
    """
    bound = n + 2 if n % 2 else n + 1
    center = None if n % 2 else (n // 2 + 1, n // 2 + 1)
    independent, dependent = [], []
    for i in range(1, n + 2):
        for j in range(1, i + 1):
            cell = (i, j)
            if cell == center:
                continue
            (independent if i + j <= bound else dependent).append(cell)
    return independent, dependent, center


@dataclass
class ChartSpec:
    """The solved frame: chart symbols plus formulas for the dependents."""

    n: int
    independent: list
    symbols: dict                  # cell -> Sym (chart variables, 1-based t_k)
    dependent: dict                # cell -> DiffExpr
    center: tuple | None
    atilde_expr: DiffExpr          # weight carried by the pairing entries

    def s_entry(self, i, j):
        if j > i:
            return DiffExpr.zero()
        cell = (i, j)
        if cell in self.symbols:
            return self.symbols[cell].expr()
        if cell == self.center:
            return smid_sym(self.n).expr()
        return self.dependent[cell]

    def matrix(self):
        return [[self.s_entry(i, j) for j in range(1, self.n + 2)]
                for i in range(1, self.n + 2)]

    def variables(self):
        """Chart symbols t_1..t_m in chart order."""
        return [self.symbols[c] for c in self.independent]


def solve_dependent_entries(n, omega, phi=None, atilde=None):
    """Solve S Omega S^T = Phi for the dependent frame entries.

    omega is an IntersectionMatrix; phi defaults to the constant pairing of
    matching parity.  The constraints on the upper triangle are scanned by
    increasing p+q and decreasing q-p, each one solved for the single
    unknown entry it is affine in; a pass that solves nothing raises
    ModuliError("stuck solver ...").

    atilde overrides the weight expression multiplying the pairing
    cofactors (used to bind a concrete closed form); by default it is the
    opaque weight symbol for n odd and (-1)^{n/2}/smid^2 for n even.
    """
    if phi is None:
        phi = phi_matrix(n)
    if omega.n != n or phi.n != n:
        raise ValueError("inconsistent sizes between omega, phi and n")
    if atilde is None:
        if n % 2:
            atilde = atilde_sym(n).expr()
        else:
            atilde = as_expr(Fraction((-1) ** (n // 2))) / (
                smid_sym(n).expr() ** 2)
    atilde = as_expr(atilde)

    independent, dependent_cells, center = chart_layout(n)
    symbols = {cell: chart_sym(k + 1) for k, cell in enumerate(independent)}
    placeholders = {cell: s_entry_sym(*cell) for cell in dependent_cells}

    def s_template(i, j):
        if j > i:
            return DiffExpr.zero()
        cell = (i, j)
        if cell in symbols:
            return symbols[cell].expr()
        if cell == center:
            return smid_sym(n).expr()
        return placeholders[cell].expr()

    size = n + 1
    smat = [[s_template(i, j) for j in range(1, size + 1)]
            for i in range(1, size + 1)]
    omat = [[omega.cofactor(i, j) * atilde for j in range(1, size + 1)]
            for i in range(1, size + 1)]

    constraints = []
    for p in range(1, size + 1):
        for q in range(p, size + 1):
            if p + q < n + 2:
                continue               # identically satisfied by the zero block
            if p == q and n % 2:
                continue               # diagonal of an antisymmetric pairing
            if (p, q) == center:
                continue               # consumed by the smid elimination
            constraints.append((p, q))
    constraints.sort(key=lambda c: (c[0] + c[1], c[0] - c[1]))

    def constraint_expr(p, q):
        acc = DiffExpr.zero()
        for i in range(1, size + 1):
            si = smat[p - 1][i - 1]
            if si.is_zero():
                continue
            for j in range(1, size + 1):
                w = omat[i - 1][j - 1]
                if w.is_zero():
                    continue
                sj = smat[q - 1][j - 1]
                if sj.is_zero():
                    continue
                acc = acc + si * w * sj
        return acc - phi.entry(p, q)

    solved = {}
    remaining = dict(placeholders)
    pending = list(constraints)
    while remaining:
        progress = False
        still = []
        for (p, q) in pending:
            e = constraint_expr(p, q).subs({s: v for s, v in solved.items()})
            unknowns = [c for c, s in remaining.items()
                        if s.key in e.symbol_keys()]
            if len(unknowns) != 1:
                still.append((p, q))
                continue
            cell = unknowns[0]
            try:
                sol = solve_linear(e, remaining[cell])
            except ValueError:
                still.append((p, q))
                continue
            solved[remaining[cell]] = sol
            del remaining[cell]
            progress = True
        pending = still
        if remaining and not progress:
            names = ", ".join(f"s{i}{j}" for (i, j) in sorted(remaining))
            raise ModuliError(f"stuck solver: cannot determine {names}")

    dependent = {cell: solved[placeholders[cell]] for cell in dependent_cells}
    return ChartSpec(n=n, independent=independent, symbols=symbols,
                     dependent=dependent, center=center, atilde_expr=atilde)


# --------------------------------------------------------------------------
# the infinitesimal symmetry Y and the base flow
# --------------------------------------------------------------------------


class YMatrix:
    """Superdiagonal (1, y_1, ..., y_{n-2}, -1); for n = 1 just (-1)."""

    def __init__(self, n, ys):
        self.n = n
        self.ys = list(ys)

    def entry(self, i, j):
        if j != i + 1:
            return DiffExpr.zero()
        if i == 1:
            return as_expr(-1 if self.n == 1 else 1)
        if i == self.n:
            return as_expr(-1)
        return self.ys[i - 2]

    def matrix(self):
        return [[self.entry(i, j) for j in range(1, self.n + 2)]
                for i in range(1, self.n + 2)]


def compute_y_zdot(n, chart):
    """The base flow and the symmetry matrix determined by the chart.

    zdot = Y_12 * z * s22/s11 with Y_12 = -1 for n = 1 and +1 otherwise;
    the equivalent reading off the other end of the superdiagonal,
    zdot = -z * s_{n+1,n+1}/s_{nn}, is asserted to agree.
    """
    z = z_sym().expr()
    sign = -1 if n == 1 else 1
    s = chart.s_entry
    zdot = sign * z * s(2, 2) / s(1, 1)
    other = -z * s(n + 1, n + 1) / s(n, n)
    if not expr_equal(zdot, other):
        raise ModuliError("chart solution inconsistent: the two readings of "
                          "the base flow disagree")
    ratio = as_expr(sign) * s(2, 2) / s(1, 1)        # zdot/z, z-free
    ys = [ratio * s(i, i) / s(i + 1, i + 1) for i in range(2, n)]
    return zdot, YMatrix(n, ys)


# --------------------------------------------------------------------------
# the vector field on the chart
# --------------------------------------------------------------------------


@dataclass
class ODESystem:
    """Autonomous polynomial-coefficient field in the chart variables.

    variables are ["t0", ..., "tm"] with t0 the base coordinate; rhs[k] is
    the right-hand side of d t_k / d tau.  The generic right-hand sides
    involve only chart symbols, the weight symbol and coefficient jets;
    family metadata allows binding them to concrete functions.
    """

    n: int
    variables: list
    rhs: list
    chart: ChartSpec
    y_exprs: list
    zdot: DiffExpr
    atilde_expr: DiffExpr
    label: str | None = None
    coeffs: list | None = None     # concrete a_0..a_n when derived from a family
    atilde_value: object | None = None

    def equation(self, k):
        return self.rhs[k]

    def to_dict(self):
        d = {
            "n": self.n,
            "family": self.label,
            "variables": list(self.variables),
            "equations": {v: e.text() for v, e in zip(self.variables, self.rhs)},
            "y": [y.text() for y in self.y_exprs],
            "zdot": self.zdot.text(),
            "atilde": (self.atilde_value.text()
                       if isinstance(self.atilde_value, RatFunc)
                       else self.atilde_expr.text()),
        }
        return d

    def bound_rhs(self):
        """Right-hand sides with jets and weight bound to the family.

        Requires concrete coefficients and, for the weight, a rational
        closed form; n even (weight eliminated through smid) has no
        rational binding and raises ModuliError.
        """
        if self.coeffs is None:
            raise ModuliError("no family metadata attached to this system")
        if self.n % 2 == 0:
            raise ModuliError("even order parameter: the weight has no "
                              "rational closed form to bind")
        if not isinstance(self.atilde_value, RatFunc):
            raise ModuliError("the weight of this family has no rational "
                              "closed form")
        subs = {atilde_sym(self.n): as_expr(self.atilde_value)}
        for i, c in enumerate(self.coeffs):
            cur = to_ratfunc(c)
            for k in range(self.n + 3):
                subs[jet(i, k)] = as_expr(cur)
                cur = cur.theta()
        t0 = chart_sym(0)
        out = []
        for e in self.rhs:
            b = e.subs(subs)
            out.append(b.subs({z_sym(): t0.expr()}))
        return out


def derive_vector_field(L, n=None, label=None):
    """The moduli flow read in the chart, for a self-dual operator L.

    L is checked to be self-dual (ModuliError otherwise, quoting the first
    non-vanishing obstruction).  The field itself is derived once for the
    generic self-dual operator of the same order, so its right-hand sides
    are expressions in the chart variables, the weight and the coefficient
    jets; L's concrete coefficients travel along as metadata.
    """
    if n is None:
        n = L.n
    elif n != L.n:
        raise ValueError(f"operator has order parameter {L.n}, not {n}")
    residuals = self_duality_residuals(L, check_odd=False)
    for k, r in enumerate(residuals, start=1):
        if not r.is_zero():
            raise ModuliError(
                f"operator is not self-dual: the condition at "
                f"theta^{n - 2 * k} leaves the residual {r.text()}")

    op = generic_self_dual(n)
    omega = IntersectionMatrix(op, mode="strict")
    chart = solve_dependent_entries(n, omega)
    zdot, ymat = compute_y_zdot(n, chart)

    size = n + 1
    smat = chart.matrix()
    amat = companion_matrix(op).matrix()
    ratio = zdot / z_sym().expr()
    flow = mat_sub(mat_mul(ymat.matrix(), smat),
                   mat_scale(mat_mul(smat, amat), ratio))

    t0 = chart_sym(0)
    variables = ["t0"] + [s.name for s in chart.variables()]
    rhs = [zdot.subs({z_sym(): t0.expr()})]
    for (i, j) in chart.independent:
        rhs.append(flow[i - 1][j - 1])

    concrete = all(_is_concrete(c) for c in L.coeffs)
    coeffs = list(L.coeffs) if concrete else None
    atv = None
    if concrete and n % 2:
        try:
            atv = atilde_closed_form(L.a(n), n)
        except ValueError:
            atv = None
    return ODESystem(n=n, variables=variables, rhs=rhs, chart=chart,
                     y_exprs=list(ymat.ys), zdot=zdot,
                     atilde_expr=chart.atilde_expr, label=label,
                     coeffs=coeffs, atilde_value=atv)


def _is_concrete(e):
    e = as_expr(e)
    return all(k[0] == 0 for k in e.symbol_keys())


# --------------------------------------------------------------------------
# two-route compatibility
# --------------------------------------------------------------------------


@dataclass
class CompatReport:
    """Verdicts of the dependent-cell consistency check; never raises on
    inequality -- a failed cell is the reported result."""

    n: int
    label: str | None
    self_dual: bool
    omega_violations: list
    verdicts: dict = field(default_factory=dict)   # cell -> bool

    @property
    def ok(self):
        return all(self.verdicts.values())

    def failed_cells(self):
        return sorted(c for c, v in self.verdicts.items() if not v)


def compatibility_check(L, n=None, label=None):
    """Check, with L's concrete coefficients bound in, that the dependent
    frame entries evolve consistently.

    Route one differentiates each dependent formula along the derived flow
    (chain rule over the chart variables plus the base motion).  Route two
    reads the same cell directly from dS/dtau = Y S - (zdot/z) S A.  The
    two agree for every dependent cell exactly when the pairing
    normalization propagates, which encodes self-duality; each cell gets a
    verdict and inequality is never an exception.
    """
    if n is None:
        n = L.n
    elif n != L.n:
        raise ValueError(f"operator has order parameter {L.n}, not {n}")
    residuals = self_duality_residuals(L, check_odd=False)
    self_dual = all(r.is_zero() for r in residuals)

    omega = IntersectionMatrix(L, mode="defer")

    exp_scale = None
    if n % 2:
        atv = (atilde_closed_form(L.a(n), n)
               if _is_concrete(L.a(n)) else None)
        if isinstance(atv, RatFunc):
            weight = as_expr(atv)
        else:
            weight = atilde_sym(n).expr()
            exp_scale = L.a(n) * Fraction(2, n + 1)
    else:
        weight = as_expr(Fraction((-1) ** (n // 2))) / (smid_sym(n).expr() ** 2)
        exp_scale = L.a(n) * Fraction(2, n + 1)

    chart = solve_dependent_entries(n, omega, atilde=weight)
    zdot, ymat = compute_y_zdot(n, chart)
    ratio = zdot / z_sym().expr()

    smat = chart.matrix()
    amat = companion_matrix(L).matrix()
    flow = mat_sub(mat_mul(ymat.matrix(), smat),
                   mat_scale(mat_mul(smat, amat), ratio))

    tdots = {chart.symbols[cell].key: flow[cell[0] - 1][cell[1] - 1]
             for cell in chart.independent}

    def along_flow(phi):
        acc = ratio * theta_on(phi, chart_policy="const", exp_scale=exp_scale)
        for key, td in tdots.items():
            p = phi.partial(key)
            if not p.is_zero():
                acc = acc + td * p
        return acc

    report = CompatReport(n=n, label=label, self_dual=self_dual,
                          omega_violations=list(omega.violations))
    cells = list(chart.dependent)
    if chart.center is not None:
        cells.append(chart.center)
    for cell in cells:
        i, j = cell
        phi = chart.s_entry(i, j)
        report.verdicts[cell] = expr_equal(along_flow(phi), flow[i - 1][j - 1])
    return report
