"""Fixed-step numeric integration of the emitted vector fields.

Exact right-hand sides (chart fields bound to a family, or the small
quadratic systems) are compiled down to double-precision closures; a
classical fixed-step fourth-order Runge-Kutta scheme then produces
deterministic, reproducible trajectories.  Rational right-hand sides
declare their denominators as guards: when a guarded denominator falls
below the configured threshold the run stops with a "singularity
proximity" error instead of silently stepping across a pole, and any
non-finite state aborts immediately.

Two cross-checks tie the numerics back to the exact side: trajectories
of the Eisenstein flow are compared against direct series evaluation,
and solutions of the pairwise quadratic system are pushed through a
Mobius change of variables and tested, by dense-output finite
differences, to still satisfy the system.  Time is always a real
segment (q real in (0,1)); complex paths are out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .exactalg import as_expr, sym_name
from .moduli import ODESystem
from .qseries import PolyField3, eisenstein, halphen_pairwise_field


class NumFieldError(ValueError):
    pass


class SingularityError(RuntimeError):
    """A guarded denominator came too close to zero."""


class IntegrationError(RuntimeError):
    """The state left the representable domain (non-finite values)."""


# ------------------------------------------------------------ compilation


def _compile_poly(poly, index_of):
    """An MPoly over the named state variables as a float closure."""
    terms = []
    for mono, c in poly.terms.items():
        idx = []
        for key, e in mono:
            if key not in index_of:
                raise NumFieldError(
                    f"right-hand side mentions {sym_name(key)}, which is "
                    f"not a state variable")
            idx.append((index_of[key], e))
        terms.append((float(c), tuple(idx)))
    if not terms:
        return lambda x: 0.0

    def ev(x):
        total = 0.0
        for c, idx in terms:
            v = c
            for i, e in idx:
                v *= x[i] ** e
            total += v
        return total
    return ev


class NumField:
    """A compiled autonomous vector field on named real coordinates."""

    __slots__ = ("dimension", "names", "threshold", "guards", "_parts")

    def __init__(self, names, exprs, guard_threshold=1e-9):
        names = tuple(names)
        if len(exprs) != len(names):
            raise NumFieldError(
                f"{len(names)} variables but {len(exprs)} right-hand sides")
        self.names = names
        self.dimension = len(names)
        self.threshold = float(guard_threshold)
        index_of = {}
        self.guards = []
        self._parts = []
        for expr in exprs:
            e = as_expr(expr)
            for key in e.symbol_keys():
                nm = sym_name(key)
                if nm in names:
                    index_of.setdefault(key, names.index(nm))
        for expr in exprs:
            e = as_expr(expr)
            num = _compile_poly(e.num, index_of)
            dc = e.den.as_const()
            if dc is not None:
                scale = 1.0 / float(dc)
                self._parts.append((num, None, scale, None))
            else:
                den = _compile_poly(e.den, index_of)
                text = e.den.text()
                self.guards.append(text)
                self._parts.append((num, den, 1.0, text))

    def __call__(self, x):
        out = []
        for num, den, scale, text in self._parts:
            if den is None:
                out.append(num(x) * scale)
            else:
                d = den(x)
                if abs(d) < self.threshold:
                    raise SingularityError(
                        f"singularity proximity: denominator {text} = "
                        f"{d:.3e} is below the threshold {self.threshold:g}")
                out.append(num(x) / d)
        return tuple(out)


def compile_field(source, guard_threshold=1e-9):
    """A NumField from a PolyField3 or a family-bound chart system."""
    if isinstance(source, PolyField3):
        return NumField(source.variables, source.rhs, guard_threshold)
    if isinstance(source, ODESystem):
        return NumField(source.variables, source.bound_rhs(), guard_threshold)
    raise TypeError(f"cannot compile a {type(source).__name__} into a "
                    f"numeric field")


def compile_exprs(names, exprs, guard_threshold=1e-9):
    """A NumField directly from named variables and expressions."""
    return NumField(names, exprs, guard_threshold)


# -------------------------------------------------------------- integration


@dataclass
class Trajectory:
    """A sampled solution: monotone time grid, one state per node."""

    times: list
    states: list
    step: float
    max_local_error: float | None = None

    def endpoint(self):
        return self.times[-1], self.states[-1]

    def to_csv_text(self):
        d = len(self.states[0])
        lines = ["t," + ",".join(f"x{i + 1}" for i in range(d))]
        for t, x in zip(self.times, self.states):
            lines.append(",".join(f"{v:.17g}" for v in (t, *x)))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(tuple(xi + 0.5 * h * ki for xi, ki in zip(x, k1)))
    k3 = f(tuple(xi + 0.5 * h * ki for xi, ki in zip(x, k2)))
    k4 = f(tuple(xi + h * ki for xi, ki in zip(x, k3)))
    return tuple(xi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
                 for xi, a, b, c, d in zip(x, k1, k2, k3, k4))


def integrate_rk4(field, x0, t0, t1, h, estimate_error=False):
    """Classical fixed-step RK4 from t0 to t1 (either direction).

    The step magnitude is adjusted to the nearest value that divides the
    span evenly, so the grid lands exactly on t1; the adjusted signed
    step is recorded on the trajectory.  With estimate_error=True every
    step is re-done as two half steps and the largest component-wise
    deviation / 15 is kept as a local error estimate.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    x = tuple(float(v) for v in x0)
    if len(x) != field.dimension:
        raise ValueError(f"field has dimension {field.dimension}, initial "
                         f"state has {len(x)}")
    span = float(t1) - float(t0)
    if span == 0.0:
        return Trajectory([float(t0)], [x], 0.0,
                          0.0 if estimate_error else None)
    nsteps = max(1, round(abs(span) / h))
    hs = span / nsteps
    times = [float(t0)]
    states = [x]
    worst = 0.0 if estimate_error else None
    for k in range(nsteps):
        try:
            x = _rk4_step(field, states[-1], hs)
        except OverflowError:
            x = (math.inf,) * field.dimension
        if not all(math.isfinite(v) for v in x):
            raise IntegrationError(
                f"non-finite state at t = {times[-1] + hs!r}; the "
                f"trajectory left the representable domain")
        if estimate_error:
            half = _rk4_step(field, _rk4_step(field, states[-1], hs / 2),
                             hs / 2)
            worst = max(worst,
                        max(abs(a - b) for a, b in zip(x, half)) / 15.0)
        times.append(float(t0) + (k + 1) * hs)
        states.append(x)
    return Trajectory(times, states, hs, worst)


@dataclass
class ConvergenceReport:
    """Endpoint errors under step halving and the measured orders."""

    steps: list
    errors: list
    orders: list

    @property
    def min_order(self):
        return min(self.orders)


def convergence_orders(field, x0, t0, t1, exact_endpoint, h0, halvings=3):
    """Measure the scheme order against a known endpoint.

    Integrates with steps h0, h0/2, ..., h0/2^halvings, records the
    max-norm endpoint errors, and returns the dyadic logarithms of the
    successive error ratios (= 4 for an ideal fourth-order scheme).
    """
    steps = [h0 / 2 ** k for k in range(halvings + 1)]
    errors = []
    for h in steps:
        _, xe = integrate_rk4(field, x0, t0, t1, h).endpoint()
        errors.append(max(abs(a - b) for a, b in zip(xe, exact_endpoint)))
    orders = [math.log2(errors[k] / errors[k + 1])
              for k in range(len(errors) - 1)]
    return ConvergenceReport(steps, errors, orders)


# ------------------------------------------------- Eisenstein flow numerics


def ramanujan_series_state(q, order=40):
    """The normalized Eisenstein state (E2/12, E4/12, E6/216) at real q.

    With q = e^(kappa tau), rescaling the flow coordinates by their
    kappa weights turns the degree-graded system into the same
    polynomial field in the real time T = ln q; these are the matching
    initial/reference states, evaluated from the exact series.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"series evaluation needs q in (0,1), got {q}")
    e2, e4, e6 = (eisenstein(w, order) for w in (2, 4, 6))
    return (e2.evaluate(q) / 12.0, e4.evaluate(q) / 12.0,
            e6.evaluate(q) / 216.0)


def integrate_ramanujan(q_start, q_end, h=1e-3, order=40):
    """Run the Eisenstein flow between two nome values in (0,1).

    Integrates in T = ln q from series-evaluated initial data and
    returns the trajectory together with the series-evaluated reference
    state at the endpoint.
    """
    from .qseries import ramanujan_field
    field = compile_field(ramanujan_field())
    x0 = ramanujan_series_state(q_start, order)
    traj = integrate_rk4(field, x0, math.log(q_start), math.log(q_end), h)
    return traj, ramanujan_series_state(q_end, order)


# --------------------------------------------------------- Mobius invariance


@dataclass
class MobiusReport:
    """Dense-output residuals of the transformed pairwise solution."""

    transform: tuple
    span: tuple
    step: float
    samples: int
    max_residual: float
    raw_residual: float
    tolerance: float

    @property
    def ok(self):
        return self.max_residual < self.tolerance


def _pairwise_residual(zs, triples, dw_dz, h):
    """Max over pairs of |ds_i/dw + ds_j/dw - s_i s_j| on the grid.

    Derivatives in w come from five-point central differences on the
    uniform z grid divided by the analytic dw/dz.
    """
    worst = 0.0
    for k in range(2, len(zs) - 2):
        deriv = []
        for i in range(3):
            fd = (triples[k - 2][i] - 8.0 * triples[k - 1][i]
                  + 8.0 * triples[k + 1][i] - triples[k + 2][i]) / (12.0 * h)
            deriv.append(fd / dw_dz(zs[k]))
        s = triples[k]
        for i, j in ((0, 1), (1, 2), (0, 2)):
            worst = max(worst,
                        abs(deriv[i] + deriv[j] - s[i] * s[j]))
    return worst


def mobius_invariance_check(a, b, ap, bp, x0, span, h=1e-3, tolerance=1e-6):
    """Push a pairwise-system solution through w = (a z + b)/(a' z + b').

    The pairwise system t_i' + t_j' = t_i t_j is integrated from x0 over
    the real span; the solution is transformed by

        t_i = -2 a'/(a' z + b') + (a b' - b a')/(a' z + b')^2 * s_i,

    solved for s_i as a function of w, and the transformed triple is
    required to satisfy the same system in w up to the tolerance.  The
    raw residual (the same finite-difference check on the untransformed
    solution in z) is reported alongside for calibration.
    """
    a, b, ap, bp = (Fraction(v) for v in (a, b, ap, bp))
    det = a * bp - b * ap
    if det == 0:
        raise ValueError("degenerate transform: a b' - b a' = 0")
    z0, z1 = (float(span[0]), float(span[1]))
    if z1 <= z0:
        raise ValueError(f"span must be increasing, got {span}")
    if ap != 0:
        root = -float(bp) / float(ap)
        if z0 - h <= root <= z1 + h:
            raise ValueError(
                f"singular transform: a' z + b' vanishes at z = {root:g} "
                f"inside the span")
    field = compile_field(halphen_pairwise_field())
    traj = integrate_rk4(field, x0, z0, z1, h)
    if len(traj.times) < 5:
        raise ValueError("span too short for dense-output differences")
    af, bf, apf, bpf, detf = (float(v) for v in (a, b, ap, bp, det))

    def shift(z):
        return -2.0 * apf / (apf * z + bpf)

    def scale(z):
        return detf / (apf * z + bpf) ** 2

    transformed = []
    for z, t in zip(traj.times, traj.states):
        sc, sh = scale(z), shift(z)
        transformed.append(tuple((ti - sh) / sc for ti in t))
    # chain rule: d/dw = (d/dz) / (dw/dz), and dw/dz is the same scale
    worst = _pairwise_residual(traj.times, transformed, scale,
                               abs(traj.step))
    raw = _pairwise_residual(traj.times, traj.states, lambda z: 1.0,
                             abs(traj.step))
    return MobiusReport(transform=(a, b, ap, bp), span=(z0, z1),
                        step=traj.step, samples=len(traj.times),
                        max_residual=worst, raw_residual=raw,
                        tolerance=tolerance)
