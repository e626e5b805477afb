"""Batch front door: family presets in, derivations and verdicts out.

Subcommands cover the pipeline end to end: ``derive`` emits the chart
vector field of a family as a structured document, ``selfdual`` and
``intersection`` print the residuals and the pairing matrix, ``verify``
runs the series/polynomial identity suites, ``integrate`` produces
deterministic trajectory CSVs, and ``report`` runs everything over all
presets.

Machine-readable output is JSON with sorted keys and no timings, so a
repeated run is byte-identical; timing lines go to stderr.  Exit codes:
0 on success (verdict failures are recorded in the output), 1 on a hard
error, 2 when ``--strict`` is set and a verification verdict failed.
Golden files live in the package's ``goldens`` directory unless the
environment variable DHRFIELD_GOLDEN_DIR points elsewhere.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

from .connection import intersection_matrix, phi_matrix
from .diffop import self_duality_residuals
from .exactalg import expr_equal, free_sym, mat_add, mat_mul, mat_transpose
from .families import FamilyError, list_presets, load_family, load_preset
from .moduli import YMatrix, compatibility_check, derive_vector_field
from .numint import compile_field, integrate_rk4
from .qseries import (
    eisenstein, format_series, halphen_pairwise_field, halphen_system,
    jacobi_residual, log_derivative, pushforward_check, ramanujan_field,
    theta_null, verify_darboux_halphen, verify_ramanujan,
)

GOLDEN_ENV = "DHRFIELD_GOLDEN_DIR"


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name with the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ----------------------------------------------------------------- goldens


def golden_dir():
    env = os.environ.get(GOLDEN_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files(__package__) / "goldens"))


def read_golden(name):
    path = golden_dir() / name
    if not path.is_file():
        raise FileNotFoundError(f"golden file {name} not found in "
                                f"{golden_dir()}")
    return path.read_text()


def _golden_series():
    """name -> freshly computed series for every committed series golden."""
    return {
        "eisenstein_e2.series": eisenstein(2, 20),
        "theta4.series": theta_null(4, 40),
        "pairwise_t1.series": log_derivative(theta_null(4, 40)).truncated(32),
    }


def emit_goldens(directory):
    """(Re)write the golden files; used to seed an override directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, series in _golden_series().items():
        (directory / name).write_text(format_series(series))
    spec = load_preset("quintic")
    system = derive_vector_field(spec.operator(), label=spec.label)
    (directory / "X5_field.json").write_text(
        json.dumps(system.to_dict(), indent=2, sort_keys=True) + "\n")


# -------------------------------------------------------------- subcommands


def _emit(args, text):
    if getattr(args, "output", None):
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _render_text(doc):
    lines = [f"family {doc['family']}  (n = {doc['n']})",
             f"atilde = {doc['atilde']}"]
    for v in doc["variables"]:
        lines.append(f"d {v} / d tau = {doc['equations'][v]}")
    for i, y in enumerate(doc["y"], start=1):
        lines.append(f"y{i} = {y}")
    lines.append(f"z-dot = {doc['zdot']}")
    return "\n".join(lines) + "\n"


def cmd_derive(args):
    spec = _stage("load", load_family, args.family)
    system = _stage("derive", derive_vector_field, spec.operator(),
                    label=spec.label)
    doc = system.to_dict()
    if args.out == "json":
        _emit(args, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        _emit(args, _render_text(doc))
    return 0


def cmd_selfdual(args):
    spec = _stage("load", load_family, args.family)
    residuals = _stage("selfdual", self_duality_residuals, spec.operator(),
                       check_odd=False)
    ok = all(r.is_zero() for r in residuals)
    doc = {"family": spec.label, "n": spec.n, "self_dual": ok,
           "residuals": [r.text() for r in residuals]}
    _emit(args, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 2 if args.strict and not ok else 0


def cmd_intersection(args):
    spec = _stage("load", load_family, args.family)
    im = _stage("intersection", intersection_matrix, spec.operator(),
                mode=args.mode)
    matrix = im.matrix()
    doc = {
        "family": spec.label,
        "n": spec.n,
        "prefactor": "dz/z",
        "entries": [[e.text() for e in row] for row in matrix],
        "violations": [list(cell) for cell, _ in im.violations],
        "symmetric": not im.violations,
    }
    _emit(args, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 2 if args.strict and im.violations else 0


def _suite_ramanujan(order):
    rep = verify_ramanujan(order or 50)
    return {
        "suite": "ramanujan",
        "order": rep.order,
        "kappa_weights": list(rep.kappa_weights),
        "graded_residuals_zero": [r.is_zero() for r in rep.residuals],
        "classical_residuals_zero": [r.is_zero()
                                     for r in rep.classical_residuals],
        "ok": rep.ok,
    }


def _suite_darboux_halphen(order):
    rep = verify_darboux_halphen(order or 40)
    jac = jacobi_residual(rep.order)
    return {
        "suite": "darboux-halphen",
        "order": rep.order,
        "pairs": [list(p) for p in rep.pairs],
        "quadratic_factor": str(rep.quadratic_factor),
        "residuals_zero": [r.is_zero() for r in rep.residuals],
        "displayed_reading_zero": [r.is_zero()
                                   for r in rep.displayed_residuals],
        "jacobi_zero": jac.is_zero(),
        "ok": rep.ok and jac.is_zero(),
    }


def _suite_pushforward():
    v = pushforward_check()
    return {
        "suite": "pushforward",
        "displayed_exact": v.displayed_exact,
        "matches": [list(m) for m in v.matches],
        "normalization": list(v.normalization) if v.normalization else None,
        "ok": v.ok,
    }


def _suite_halphen_specialization():
    t1, t2, t3 = (free_sym(f"t{k}").expr() for k in (1, 2, 3))
    dh = halphen_system(0, 0, 0, 1)
    pw = halphen_pairwise_field()
    display = (t1 * (t2 + t3) - t2 * t3, t2 * (t3 + t1) - t3 * t1,
               t3 * (t1 + t2) - t1 * t2)
    ts = (t1, t2, t3)
    doc = {
        "suite": "halphen-specialization",
        "darboux_halphen_form": all(
            expr_equal(r, d) for r, d in zip(dh.rhs, display)),
        "twice_pairwise": dh.equals(pw.scaled(2)),
        "pairwise_sums": all(
            expr_equal(pw.rhs[i] + pw.rhs[j], ts[i] * ts[j])
            for i, j in ((0, 1), (1, 2), (0, 2))),
        "decoupled_at_ones": all(
            expr_equal(r, t * t)
            for r, t in zip(halphen_system(1, 1, 1, 1).rhs, ts)),
    }
    doc["ok"] = all(v for k, v in doc.items() if k != "suite")
    return doc


def cmd_verify(args):
    if args.suite == "ramanujan":
        doc = _stage("verify", _suite_ramanujan, args.order)
    elif args.suite == "darboux-halphen":
        doc = _stage("verify", _suite_darboux_halphen, args.order)
    elif args.suite == "pushforward":
        doc = _stage("verify", _suite_pushforward)
    else:
        doc = _stage("verify", _suite_halphen_specialization)
    _emit(args, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 2 if args.strict and not doc["ok"] else 0


def cmd_integrate(args):
    if args.family:
        spec = _stage("load", load_family, args.family)
        system = _stage("derive", derive_vector_field, spec.operator(),
                        label=spec.label)
        field = _stage("compile", compile_field, system)
    else:
        classical = {"ramanujan": ramanujan_field,
                     "darboux-halphen": lambda: halphen_system(0, 0, 0, 1),
                     "pairwise": halphen_pairwise_field}
        field = _stage("compile", compile_field, classical[args.system]())
    try:
        state = tuple(float(v) for v in args.state.split(","))
    except ValueError:
        raise StageError("integrate",
                         f"state is not a comma-separated float list: "
                         f"{args.state!r}") from None
    traj = _stage("integrate", integrate_rk4, field, state, args.t_from,
                  args.t_to, args.step)
    _emit(args, traj.to_csv_text())
    return 0


def _preset_report(index, label):
    spec = load_preset(label)
    op = spec.operator()
    entry = {"index": index, "label": label, "n": spec.n, "errors": []}

    def run(stage, fn):
        try:
            entry[stage] = fn()
        except Exception as exc:
            entry[stage] = False
            entry["errors"].append(f"{stage}: {exc}")

    run("selfdual", lambda: all(
        r.is_zero() for r in self_duality_residuals(op, check_odd=False)))
    run("omega_symmetric", lambda: not
        intersection_matrix(op, mode="defer").violations)
    system = {}

    def chart():
        system["sys"] = derive_vector_field(op, label=label)
        return len(system["sys"].rhs) == len(system["sys"].variables)
    run("chart_solved", chart)

    def y_antisym():
        sys3 = system["sys"]
        y = YMatrix(sys3.n, sys3.y_exprs).matrix()
        p = phi_matrix(sys3.n).matrix()
        gap = mat_add(mat_mul(y, p), mat_mul(p, mat_transpose(y)))
        return all(e.is_zero() for row in gap for e in row)
    run("y_antisymmetry", y_antisym)

    run("compatibility", lambda: compatibility_check(op, label=label).ok)

    if label == "X(5)":
        def field_golden():
            want = json.loads(read_golden("X5_field.json"))
            return system["sys"].to_dict() == want
        run("goldens", field_golden)
    else:
        entry["goldens"] = None
    return entry


def cmd_report(args):
    t_start = time.perf_counter()
    if args.golden_dir:
        os.environ[GOLDEN_ENV] = str(args.golden_dir)
    presets = []
    for index, label in enumerate(list_presets(), start=1):
        entry = _preset_report(index, label)
        presets.append(entry)
        print(f"{label}: {'ok' if not entry['errors'] else 'ERRORS'} "
              f"({time.perf_counter() - t_start:.2f}s elapsed)",
              file=sys.stderr)
    series = {}
    for name, computed in _golden_series().items():
        try:
            series[name] = read_golden(name) == format_series(computed)
        except FileNotFoundError as exc:
            series[name] = False
            print(f"goldens: {exc}", file=sys.stderr)
    suites = {
        "ramanujan": _suite_ramanujan(None)["ok"],
        "darboux_halphen": _suite_darboux_halphen(None)["ok"],
        "pushforward": _suite_pushforward()["ok"],
        "halphen_specialization": _suite_halphen_specialization()["ok"],
    }
    flags = [v for e in presets for k, v in e.items()
             if k not in ("index", "label", "n", "errors", "goldens")]
    flags += [e["goldens"] for e in presets if e["goldens"] is not None]
    flags += list(series.values()) + list(suites.values())
    doc = {
        "presets": presets,
        "series_goldens": series,
        "suites": suites,
        "ok": all(flags),
    }
    _emit(args, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"report finished in {time.perf_counter() - t_start:.2f}s",
          file=sys.stderr)
    return 2 if args.strict and not doc["ok"] else 0


# ------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="dhrfield",
        description="Self-dual operator families: derive moduli vector "
                    "fields, verify the classical series identities, "
                    "integrate numerically.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("derive", help="emit the chart vector field of a "
                                      "family")
    d.add_argument("--family", required=True,
                   help="preset name/index, table1:K, or a .toml file")
    d.add_argument("--out", choices=("json", "text"), default="json")
    d.add_argument("--output", help="write here instead of stdout")
    d.set_defaults(fn=cmd_derive)

    s = sub.add_parser("selfdual", help="self-duality residuals of a family")
    s.add_argument("--family", required=True)
    s.add_argument("--strict", action="store_true")
    s.add_argument("--output")
    s.set_defaults(fn=cmd_selfdual)

    i = sub.add_parser("intersection", help="pairing matrix of a family")
    i.add_argument("--family", required=True)
    i.add_argument("--mode", choices=("strict", "defer"), default="defer")
    i.add_argument("--strict", action="store_true")
    i.add_argument("--output")
    i.set_defaults(fn=cmd_intersection)

    v = sub.add_parser("verify", help="series/polynomial identity suites")
    v.add_argument("--suite", required=True,
                   choices=("ramanujan", "darboux-halphen", "pushforward",
                            "halphen-specialization"))
    v.add_argument("--order", type=int, default=None,
                   help="truncation order (defaults: ramanujan 50, "
                        "darboux-halphen 40)")
    v.add_argument("--strict", action="store_true")
    v.add_argument("--output")
    v.set_defaults(fn=cmd_verify)

    g = sub.add_parser("integrate", help="fixed-step RK4 run, CSV out")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--family", help="integrate the family's chart field")
    src.add_argument("--system",
                     choices=("ramanujan", "darboux-halphen", "pairwise"))
    g.add_argument("--from", dest="t_from", type=float, required=True)
    g.add_argument("--to", dest="t_to", type=float, required=True)
    g.add_argument("--step", type=float, required=True)
    g.add_argument("--state", required=True,
                   help="comma-separated initial state")
    g.add_argument("--output", help="CSV path (default stdout)")
    g.set_defaults(fn=cmd_integrate)

    r = sub.add_parser("report", help="full pipeline over all presets")
    r.add_argument("--strict", action="store_true")
    r.add_argument("--golden-dir", help=f"override goldens (also "
                                        f"{GOLDEN_ENV})")
    r.add_argument("--output")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except (FamilyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
