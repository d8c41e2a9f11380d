"""Command line front end: `geo check`, `geo validate`, `geo examples list|run`."""
from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .algebroid import check_algebroid
from .connection import DistinguishedLinearConnection, check_dlc_law, check_nlc_law
from .hamilton import (
    HessianField,
    TorsionPrescription,
    check_homogeneity,
    check_regularity,
    check_torsion_roundtrip,
    induced_metric,
    levi_civita_normal,
    torsion_family,
)
from .jets import ExprArray, sample_points, to_string
from .metric import (
    PseudoMetric,
    check_compatibility,
    classify,
    compare_connections,
    metrizable_berwald,
    metrizable_deformation,
    metrizable_family,
    metrizable_from,
    riemannian_berwald_form,
)
from .report import CheckReport
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .tangent import check_tangent_jacobi

EXAMPLES = (
    "classical-flat",
    "so3-bundle",
    "exp-metric",
    "hamilton-exp",
    "cartan-finsler",
    "chart-change-diag",
    "obata-family",
    "deform-family",
)


# ---------------------------------------------------------------------------
# orchestration


class _Runner:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.current: DistinguishedLinearConnection = sc.dlc0
        self.levi_civita: DistinguishedLinearConnection | None = None

    @property
    def g_v(self):
        if self.sc.function is not None:
            return HessianField(self.sc.function, self.sc.spec.r_rank, self.sc.hessian_half)
        return self.sc.metric.g_v

    @property
    def metric(self) -> PseudoMetric:
        if self.sc.metric is not None:
            return self.sc.metric
        return induced_metric(self.g_v)

    def kw(self, tol: float | None = None) -> dict:
        return {"samples": self.sc.samples, "seed": self.sc.seed, "tol": self.sc.tol if tol is None else tol}

    def compat(self, name: str) -> CheckReport:
        sc = self.sc
        return check_compatibility(sc.spec, sc.conn, self.current, self.metric, name=name, **self.kw())

    def run_check(self, name: str) -> list[CheckReport]:
        sc = self.sc
        spec, conn = sc.spec, sc.conn
        if name == "algebroid-axioms":
            return [check_algebroid(spec, **self.kw())]
        if name == "tangent-jacobi":
            return [check_tangent_jacobi(spec, **self.kw())]
        if name == "nlc-law":
            return [_tag(check_nlc_law(spec, conn, t, **self.kw()), k, len(sc.transitions)) for k, t in enumerate(sc.transitions)]
        if name == "dlc-law":
            return [_tag(check_dlc_law(spec, conn, self.current, t, **self.kw()), k, len(sc.transitions)) for k, t in enumerate(sc.transitions)]
        if name == "compatibility":
            return [self.compat("compatibility")]
        if name == "classify":
            c = classify(spec, self.metric, max(sc.samples, 2), sc.seed)
            notes = (
                f"h_block={c['h_block']} (max|d/dp|={c['h_block_max_dp']:.3e}, max|d/dx|={c['h_block_max_dx']:.3e}, "
                f"signatures={c['h_block_signatures']}); v_block={c['v_block']} (max|d/dp|={c['v_block_max_dp']:.3e}, "
                f"max|d/dx|={c['v_block_max_dx']:.3e}, signatures={c['v_block_signatures']})"
            )
            return [CheckReport("classify", True, 0.0, None, sc.samples, notes, c)]
        if name == "build:metrizable-from":
            self.current = metrizable_from(spec, conn, sc.dlc0, self.metric)
            return [self.compat(name)]
        if name == "build:metrizable-berwald":
            G = self.metric
            self.current = metrizable_berwald(spec, conn, G)
            rep = self.compat(name)
            c = classify(spec, G, max(sc.samples, 2), sc.seed)
            if c["h_block"] == "Riemannian" and c["v_block"] == "Riemannian":
                agree = compare_connections(spec, self.current, riemannian_berwald_form(spec, conn, G), **self.kw(min(sc.tol, 1e-10)))
                rep = _merge(name, [rep, agree], ["compat", "riemannian-form"])
            return [rep]
        if name == "build:obata-family":
            self.current = metrizable_family(spec, conn, self.metric, sc.deformation)
            return [self.compat(name)]
        if name == "build:deformation":
            self.current = metrizable_deformation(spec, conn, sc.dlc0, self.metric)
            return [self.compat(name)]
        if name == "regularity":
            return [check_regularity(sc.function, spec.m, spec.r_rank, sc.samples, sc.seed, sc.regularity_tol, sc.hessian_half)]
        if name == "homogeneity":
            return [check_homogeneity(sc.function, spec.m, spec.r_rank, **self.kw())]
        if name == "build:levi-civita":
            self.current = self.levi_civita = levi_civita_normal(spec, conn, self.g_v, sc.pairing)
            rep = check_compatibility(spec, conn, self.current, induced_metric(self.g_v), name=name, **self.kw())
            free = check_torsion_roundtrip(spec, self.current, _zero_torsion(spec.r_rank), **self.kw(min(sc.tol, 1e-10)))
            return [_merge(name, [rep, free], ["compat", "torsion-free"])]
        if name == "torsion-roundtrip":
            base = self.levi_civita or levi_civita_normal(spec, conn, self.g_v, sc.pairing)
            self.current = torsion_family(spec, base, self.g_v, sc.torsion, sc.pairing)
            rt = check_torsion_roundtrip(spec, self.current, sc.torsion, **self.kw(min(sc.tol, 1e-10)))
            rep = check_compatibility(spec, conn, self.current, induced_metric(self.g_v), **self.kw())
            return [_merge(name, [rt, rep], ["roundtrip", "compat"])]
        raise ValueError(f"unknown check {name!r}")


def _zero_torsion(r: int) -> TorsionPrescription:
    return TorsionPrescription(ExprArray.zeros((r, r, r)), ExprArray.zeros((r, r, r)))


def _tag(rep: CheckReport, k: int, total: int) -> CheckReport:
    if total > 1:
        rep.notes = f"transition {k}: {rep.notes}"
    return rep


def _merge(name: str, reps: list[CheckReport], labels: list[str]) -> CheckReport:
    worst = max(reps, key=lambda r: r.max_residual)
    return CheckReport(
        name=name,
        passed=all(r.passed for r in reps),
        max_residual=max(r.max_residual for r in reps),
        worst_point=worst.worst_point,
        samples_used=min(r.samples_used for r in reps),
        notes=" | ".join(f"{lab}: {r.notes}" for lab, r in zip(labels, reps)),
    )


def run(sc: Scenario) -> tuple[list[CheckReport], _Runner]:
    """Execute the scenario's checks in order; a failing check never aborts the rest."""
    runner = _Runner(sc)
    reports: list[CheckReport] = []
    for name in sc.checks:
        try:
            reports.extend(runner.run_check(name))
        except Exception as err:  # recorded as a failing report
            reports.append(CheckReport(name, False, float("inf"), None, 0, f"error: {type(err).__name__}: {err}"))
    return reports, runner


# ---------------------------------------------------------------------------
# serialization


def _dump(obj, indent: int = 0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_dump(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_dump(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _dump(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        return format(v, ".17g") if v != int(v) or abs(v) >= 1e16 else format(v, ".1f")
    return json.dumps(obj)


def to_json(obj) -> str:
    """JSON with floats at 17 significant digits; non-finite numbers become null."""
    return _dump(obj) + "\n"


def report_document(sc: Scenario, reports: list[CheckReport]) -> dict:
    return {
        "scenario": sc.path,
        "seed": sc.seed,
        "reports": [r.as_dict() for r in reports],
        "all_pass": all(r.passed for r in reports),
    }


def connection_dump(sc: Scenario, dlc: DistinguishedLinearConnection, points: int = 5) -> dict:
    if dlc.exprs is not None:
        names = ("Hh", "Hv", "Vh", "Vv")
        return {n: np.vectorize(to_string, otypes=[object])(a.exprs).tolist() for n, a in zip(names, dlc.exprs)}
    pts = sample_points(sc.spec.m, sc.spec.r_rank, min(points, sc.samples), sc.seed)
    vals = {"Hh": [], "Hv": [], "Vh": [], "Vv": []}
    for pt in pts:
        v = dlc.values(pt)
        for k in vals:
            vals[k].append(getattr(v, k).tolist())
    return {"origin": dlc.origin, "points": [pt.as_dict() for pt in pts], "values": vals}


# ---------------------------------------------------------------------------
# built-in examples


def _example_dir():
    return resources.files("dualgeo") / "examples"


def list_examples() -> list[str]:
    return list(EXAMPLES)


def load_example(name: str) -> Scenario:
    if name not in EXAMPLES:
        raise KeyError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    data = json.loads((_example_dir() / f"{name}.json").read_text())
    return parse_scenario(data, f"examples/{name}.json")


def expected_report(name: str) -> dict:
    return json.loads((_example_dir() / f"{name}.expected.json").read_text())


def run_example(name: str) -> list[CheckReport]:
    return run(load_example(name))[0]


def compare_to_expected(doc: dict, expected: dict, rel: float = 1e-6, abs_tol: float = 1e-12) -> list[str]:
    """Differences that matter for regression: names, verdicts, sample counts, residual magnitudes."""
    diffs = []
    got, want = doc["reports"], expected["reports"]
    if len(got) != len(want):
        return [f"report count {len(got)} != {len(want)}"]
    for g, w in zip(got, want):
        for key in ("name", "pass", "samples_used"):
            if g[key] != w[key]:
                diffs.append(f"{w['name']}: {key} {g[key]!r} != {w[key]!r}")
        a, b = g["max_residual"], w["max_residual"]
        if (a is None) != (b is None) or (a is not None and abs(a - b) > abs_tol + rel * abs(b)):
            diffs.append(f"{w['name']}: max_residual {a!r} != {b!r}")
    return diffs


# ---------------------------------------------------------------------------
# argument handling


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if getattr(args, "samples", None) is not None:
        if args.samples < 1:
            raise ScenarioError("/samples", "expected an integer >= 1")
        sc.samples = args.samples
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    if getattr(args, "tol", None) is not None:
        if not args.tol > 0:
            raise ScenarioError("/tol", "expected a positive number")
        sc.tol = args.tol
    return sc


def _emit(sc: Scenario, reports: list[CheckReport], runner: _Runner, args) -> dict:
    doc = report_document(sc, reports)
    text = to_json(doc)
    if getattr(args, "report", None):
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    if getattr(args, "dump_connection", None):
        Path(args.dump_connection).write_text(to_json(connection_dump(sc, runner.current)))
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  max_residual={r.max_residual:.3e}", file=sys.stderr)
    return doc


def cmd_check(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    reports, runner = run(sc)
    doc = _emit(sc, reports, runner, args)
    return 0 if doc["all_pass"] else 1


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"ok: {sc.name} (m={sc.spec.m}, p_rank={sc.spec.p_rank}, r_rank={sc.spec.r_rank}, checks={len(sc.checks)})")
    return 0


def cmd_examples(args) -> int:
    if args.action == "list":
        for n in list_examples():
            print(n)
        return 0
    if not args.name:
        print("error: examples run needs a name", file=sys.stderr)
        return 2
    try:
        sc = _apply_overrides(load_example(args.name), args)
    except KeyError as err:
        print(f"error: {err.args[0]}", file=sys.stderr)
        return 2
    reports, runner = run(sc)
    doc = _emit(sc, reports, runner, args)
    status = 0 if doc["all_pass"] else 1
    if args.samples is None and args.seed is None and args.tol is None:
        diffs = compare_to_expected(doc, expected_report(args.name))
        if diffs:
            print("regression mismatch:\n  " + "\n  ".join(diffs), file=sys.stderr)
            status = status or 1
        else:
            print("regression: matches expected report", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geo", description="Certify algebroid, connection and metric scenarios at sampled points.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--samples", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--report", help="write the report JSON here instead of stdout")
        p.add_argument("--dump-connection", dest="dump_connection", help="write the last constructed connection here")

    pc = sub.add_parser("check", help="run the checks of a scenario file")
    pc.add_argument("scenario")
    common(pc)
    pc.set_defaults(func=cmd_check)

    pv = sub.add_parser("validate", help="parse and validate a scenario file")
    pv.add_argument("scenario")
    pv.set_defaults(func=cmd_validate)

    pe = sub.add_parser("examples", help="built-in example scenarios")
    pe.add_argument("action", choices=["list", "run"])
    pe.add_argument("name", nargs="?")
    common(pe)
    pe.set_defaults(func=cmd_examples)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as err:
        print(f"scenario error at {err.pointer or '/'}: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
