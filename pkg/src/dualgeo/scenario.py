"""JSON scenario files: schema validation with JSON-pointer error locations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algebroid import AlgebroidSpec
from .connection import ChartTransition, DistinguishedLinearConnection, NonlinearConnection
from .hamilton import PAIRINGS, HamiltonFunction, TorsionPrescription
from .jets import AtomIndexError, ExprArray, ExprSyntaxError, parse_expr
from .metric import DeformationTensors, PseudoMetric

CHECKS = (
    "algebroid-axioms",
    "tangent-jacobi",
    "nlc-law",
    "dlc-law",
    "compatibility",
    "classify",
    "build:metrizable-from",
    "build:metrizable-berwald",
    "build:obata-family",
    "build:deformation",
    "regularity",
    "homogeneity",
    "build:levi-civita",
    "torsion-roundtrip",
)
SQUARE_CHECKS = {"build:levi-civita", "torsion-roundtrip"}
METRIC_CHECKS = {
    "compatibility",
    "classify",
    "build:metrizable-from",
    "build:metrizable-berwald",
    "build:obata-family",
    "build:deformation",
    "build:levi-civita",
    "torsion-roundtrip",
}
FUNCTION_CHECKS = {"regularity", "homogeneity"}

TOP_KEYS = {
    "name", "description", "dims", "algebroid", "connection", "dlc0", "metric", "hamiltonian", "cartan",
    "deformation", "torsion", "transitions", "checks", "samples", "seed", "tol", "hessian_half",
    "levi_civita_pairing", "regularity_tol",
}


class ScenarioError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


@dataclass
class Scenario:
    path: str
    name: str
    spec: AlgebroidSpec
    conn: NonlinearConnection
    dlc0: DistinguishedLinearConnection
    dlc0_is_berwald: bool
    metric: PseudoMetric | None
    function: HamiltonFunction | None
    deformation: DeformationTensors
    torsion: TorsionPrescription
    transitions: list[ChartTransition]
    checks: list[str]
    samples: int
    seed: int
    tol: float
    regularity_tol: float = 1e-10
    hessian_half: bool = False
    pairing: str = "dual"
    raw: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, int]:
        return (self.spec.m, self.spec.r_rank)


def _ptr(base: str, key) -> str:
    return f"{base}/{str(key).replace('~', '~0').replace('/', '~1')}"


class _Reader:
    def __init__(self, dims: tuple[int, int]):
        self.dims = dims

    def expr(self, value, pointer: str):
        if isinstance(value, bool):
            raise ScenarioError(pointer, "expected an expression string or number")
        if isinstance(value, (int, float)):
            value = repr(float(value))
        if not isinstance(value, str):
            raise ScenarioError(pointer, "expected an expression string or number")
        try:
            return parse_expr(value, self.dims)
        except ExprSyntaxError as err:
            raise ScenarioError(pointer, f"syntax error at character {err.position}: {err}") from None
        except AtomIndexError as err:
            raise ScenarioError(pointer, f"index out of range: {err}") from None

    def array(self, value, shape: tuple, pointer: str) -> ExprArray:
        out = np.empty(shape, dtype=object)

        def walk(v, idx: tuple, ptr: str):
            depth = len(idx)
            if depth == len(shape):
                out[idx] = self.expr(v, ptr)
                return
            if not isinstance(v, list) or len(v) != shape[depth]:
                raise ScenarioError(ptr, f"expected a list of length {shape[depth]} (array shape {shape})")
            for k, item in enumerate(v):
                walk(item, idx + (k,), _ptr(ptr, k))

        walk(value, (), pointer)
        return ExprArray(out)

    def optional_array(self, block: dict, key: str, shape: tuple, pointer: str) -> ExprArray:
        if key not in block or block[key] is None:
            return ExprArray.zeros(shape)
        return self.array(block[key], shape, _ptr(pointer, key))


def _obj(value, pointer: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(pointer, "expected an object")
    return value


def _int(value, pointer: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ScenarioError(pointer, f"expected an integer >= {minimum}")
    return value


def _positive(value, pointer: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ScenarioError(pointer, "expected a positive number")
    return float(value)


def _unknown(block: dict, allowed: set, pointer: str) -> None:
    for k in block:
        if k not in allowed:
            raise ScenarioError(_ptr(pointer, k), "unknown key")


def parse_scenario(data, path: str = "<memory>") -> Scenario:
    top = _obj(data, "")
    _unknown(top, TOP_KEYS, "")
    if "dims" not in top:
        raise ScenarioError("/dims", "missing required block")
    dims = _obj(top["dims"], "/dims")
    _unknown(dims, {"m", "p_rank", "r_rank"}, "/dims")
    for k in ("m", "p_rank", "r_rank"):
        if k not in dims:
            raise ScenarioError(_ptr("/dims", k), "missing")
    m = _int(dims["m"], "/dims/m", 1)
    p = _int(dims["p_rank"], "/dims/p_rank", 1)
    r = _int(dims["r_rank"], "/dims/r_rank", 1)
    rd = _Reader((m, r))

    alg = _obj(top.get("algebroid", {}), "/algebroid")
    _unknown(alg, {"rho", "L", "h", "eta"}, "/algebroid")
    if "rho" not in alg:
        raise ScenarioError("/algebroid/rho", "missing required array")
    rho = rd.array(alg["rho"], (p, m), "/algebroid/rho")
    L = rd.optional_array(alg, "L", (p, p, p), "/algebroid")
    maps = {}
    for key in ("h", "eta"):
        v = alg.get(key, "identity")
        if v == "identity" or v is None:
            maps[key] = None
            continue
        arr = rd.array(v, (m,), _ptr("/algebroid", key))
        for k, e in enumerate(arr.exprs):
            if any(kind == "p" for kind, _ in e.atoms()):
                raise ScenarioError(_ptr(_ptr("/algebroid", key), k), "may reference base atoms only")
        maps[key] = tuple(arr.exprs)
    spec = AlgebroidSpec(m, p, r, rho, L, maps["h"], maps["eta"])

    cb = _obj(top.get("connection", {}), "/connection")
    _unknown(cb, {"gamma"}, "/connection")
    conn = NonlinearConnection(rd.optional_array(cb, "gamma", (r, p), "/connection"))

    dlc0_raw = top.get("dlc0", {})
    is_berwald = dlc0_raw == "berwald"
    if is_berwald:
        from .connection import berwald

        dlc0 = berwald(spec, conn)
    else:
        db = _obj(dlc0_raw, "/dlc0")
        _unknown(db, {"Hh", "Hv", "Vh", "Vv"}, "/dlc0")
        dlc0 = DistinguishedLinearConnection.from_exprs(
            rd.optional_array(db, "Hh", (p, p, p), "/dlc0"),
            rd.optional_array(db, "Hv", (r, r, p), "/dlc0"),
            rd.optional_array(db, "Vh", (p, p, r), "/dlc0"),
            rd.optional_array(db, "Vv", (r, r, r), "/dlc0"),
            origin="dlc0",
        )

    present = [k for k in ("metric", "hamiltonian", "cartan") if k in top]
    if len(present) > 1:
        raise ScenarioError("/" + present[1], "metric, hamiltonian and cartan are mutually exclusive")
    metric = None
    function = None
    if "metric" in top:
        mb = _obj(top["metric"], "/metric")
        _unknown(mb, {"g_h", "g_v"}, "/metric")
        for k, shape in (("g_h", (p, p)), ("g_v", (r, r))):
            if k not in mb:
                raise ScenarioError(_ptr("/metric", k), "missing")
        metric = PseudoMetric(rd.array(mb["g_h"], (p, p), "/metric/g_h"), rd.array(mb["g_v"], (r, r), "/metric/g_v"))
    for kind in ("hamiltonian", "cartan"):
        if kind in top:
            fb = _obj(top[kind], "/" + kind)
            _unknown(fb, {"expr"}, "/" + kind)
            if "expr" not in fb:
                raise ScenarioError(f"/{kind}/expr", "missing")
            function = HamiltonFunction(rd.expr(fb["expr"], f"/{kind}/expr"), "hamilton" if kind == "hamiltonian" else "cartan")

    defb = _obj(top.get("deformation", {}), "/deformation")
    _unknown(defb, {"X_h", "X_v", "Y_h", "Y_v"}, "/deformation")
    deformation = DeformationTensors(
        rd.optional_array(defb, "X_h", (p, p, p), "/deformation"),
        rd.optional_array(defb, "X_v", (p, p, r), "/deformation"),
        rd.optional_array(defb, "Y_h", (r, r, p), "/deformation"),
        rd.optional_array(defb, "Y_v", (r, r, r), "/deformation"),
    )
    tb = _obj(top.get("torsion", {}), "/torsion")
    _unknown(tb, {"T", "S"}, "/torsion")
    torsion = TorsionPrescription(rd.optional_array(tb, "T", (r, r, r), "/torsion"), rd.optional_array(tb, "S", (r, r, r), "/torsion"))

    transitions = []
    tl = top.get("transitions", [])
    if not isinstance(tl, list):
        raise ScenarioError("/transitions", "expected a list")
    for k, t in enumerate(tl):
        ptr = _ptr("/transitions", k)
        t = _obj(t, ptr)
        _unknown(t, {"Lambda", "M", "base_jacobian"}, ptr)
        Lam = rd.array(t["Lambda"], (p, p), _ptr(ptr, "Lambda")) if "Lambda" in t else ExprArray.identity(p)
        Mm = rd.array(t["M"], (r, r), _ptr(ptr, "M")) if "M" in t else ExprArray.identity(r)
        J = rd.array(t["base_jacobian"], (m, m), _ptr(ptr, "base_jacobian")) if "base_jacobian" in t else ExprArray.identity(m)
        try:
            transitions.append(ChartTransition(Lam, Mm, J))
        except ValueError as err:
            raise ScenarioError(ptr, str(err)) from None

    checks = top.get("checks", [])
    if not isinstance(checks, list):
        raise ScenarioError("/checks", "expected a list")
    for k, c in enumerate(checks):
        if c not in CHECKS:
            raise ScenarioError(_ptr("/checks", k), f"unknown check {c!r}")
        if c in SQUARE_CHECKS and p != r:
            raise ScenarioError(_ptr("/checks", k), f"{c} requires p_rank == r_rank")
        if c in METRIC_CHECKS and metric is None and function is None:
            raise ScenarioError(_ptr("/checks", k), f"{c} requires one of metric, hamiltonian, cartan")
        if c in FUNCTION_CHECKS and function is None:
            raise ScenarioError(_ptr("/checks", k), f"{c} requires a hamiltonian or cartan block")
        if c == "homogeneity" and function is not None and function.kind != "cartan":
            raise ScenarioError(_ptr("/checks", k), "homogeneity requires a cartan block")
        if c in ("nlc-law", "dlc-law") and not transitions:
            raise ScenarioError(_ptr("/checks", k), f"{c} requires at least one transition")
    samples = _int(top.get("samples", 100), "/samples", 1)
    seed = _int(top.get("seed", 0), "/seed", 0)
    tol = _positive(top.get("tol", 1e-9), "/tol")
    reg_tol = _positive(top.get("regularity_tol", 1e-10), "/regularity_tol")
    half = top.get("hessian_half", False)
    if not isinstance(half, bool):
        raise ScenarioError("/hessian_half", "expected true or false")
    pairing = top.get("levi_civita_pairing", "dual")
    if pairing not in PAIRINGS:
        raise ScenarioError("/levi_civita_pairing", f"expected one of {list(PAIRINGS)}")
    return Scenario(
        path=path,
        name=str(top.get("name", Path(path).stem)),
        spec=spec,
        conn=conn,
        dlc0=dlc0,
        dlc0_is_berwald=is_berwald,
        metric=metric,
        function=function,
        deformation=deformation,
        torsion=torsion,
        transitions=transitions,
        checks=list(checks),
        samples=samples,
        seed=seed,
        tol=tol,
        regularity_tol=reg_tol,
        hessian_half=half,
        pairing=pairing,
        raw=top,
    )


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ScenarioError("", f"invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    return parse_scenario(data, str(path))
