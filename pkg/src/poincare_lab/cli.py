"""Scenario runner and report writer.

A scenario is one JSON file describing a grid, a field, optional measure and
weight, and one check (with an optional parameter sweep or list of grid
depths). A file may also hold ``{"scenarios": [...]}`` to batch several.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema

from . import __version__
from ._parallel import set_threads
from .ineqlab.checks import THEOREMS, CheckReport, ConstraintError, check
from .ineqlab.counterexample import FAMILIES, CounterexampleTable, run_counterexample
from .lattice import Cube, InequalityParams, make_grid, sample_field, sample_measure
from .weights import make_weight

CELL_LIMIT = 2**24
CSV_COLUMNS = ("theorem", "n", "m", "delta", "p", "q", "alpha", "r", "s", "epsilon", "lhs", "rhs_core",
               "empirical_constant", "explicit_constant", "pass_explicit", "runtime_ms")
TABLE_COLUMNS = ("k", "lhs_exact", "lhs_lower", "lhs_unnormalized", "rhs_upper", "ratio")
PARAM_NAMES = tuple(f.name for f in fields(InequalityParams))

_CATALOG = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["grid", "field", "check"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["dim", "m"],
            "additionalProperties": False,
            "properties": {
                "dim": {"enum": [1, 2, 3]},
                "m": {"type": "integer", "minimum": 1, "maximum": 14},
                "cube": {
                    "type": "object",
                    "required": ["corner", "side"],
                    "properties": {"corner": {"type": "array", "items": {"type": "number"}},
                                   "side": {"type": "number", "exclusiveMinimum": 0}},
                },
            },
        },
        "field": {**_CATALOG, "properties": {"kind": {"enum": ["linear", "quadratic", "log_radial",
                  "radial_power", "indicator", "trig", "constant", "tabulated"]}}},
        "measure": {**_CATALOG, "properties": {"kind": {"enum": ["lebesgue", "ball", "power",
                    "single_cell", "random", "tabulated"]}}},
        "weight": {**_CATALOG, "properties": {"kind": {"enum": ["constant", "power", "maximal",
                   "two_valued", "tabulated"]}}},
        "check": {
            "type": "object",
            "required": ["theorem"],
            "additionalProperties": False,
            "properties": {
                "theorem": {"enum": list(THEOREMS)},
                "params": {"type": "object", "additionalProperties": False,
                           "properties": {k: {"type": ["number", "null"]} for k in PARAM_NAMES}},
                "variant": {"enum": ["a", "b"]},
                "maximal_mode": {"enum": ["brute", "shifted"]},
                "cube": {"type": "object", "required": ["corner", "side"]},
            },
        },
        "sweep": {
            "type": "object",
            "required": ["param", "values"],
            "properties": {"param": {"enum": list(PARAM_NAMES) + ["m", "variant"]},
                           "values": {"type": "array", "minItems": 1}},
        },
        "convergence": {"type": "object", "required": ["levels"],
                        "properties": {"levels": {"type": "array", "items": {"type": "integer"}}}},
        "output": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "budget_s": {"type": "number"},
    },
}


class ScenarioError(ValueError):
    """Malformed scenario, violated constraint or exceeded resource guard."""


@dataclass
class ReportBundle:
    reports: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def hard_failures(self) -> list[CheckReport]:
        return [r for r in self.reports if r.hard and not r.pass_explicit]

    def to_dict(self, timing: bool = False) -> dict:
        reps = []
        for r in self.reports:
            d = r.to_dict()
            if not timing:
                d["runtime_ms"] = None
            reps.append(d)
        prov = dict(self.provenance)
        if not timing:
            prov.pop("wall_time_s", None)
        return {"provenance": prov, "reports": reps, "tables": [t.to_dict() for t in self.tables]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReportBundle":
        reps = []
        for r in d.get("reports", []):
            r = dict(r)
            r.pop("empirical_constant", None)
            r["params"] = InequalityParams(**r["params"])
            reps.append(CheckReport(**r))
        tables = []
        for t in d.get("tables", []):
            t = dict(t)
            t.pop("monotone", None)
            tables.append(CounterexampleTable(**t))
        return cls(reps, tables, dict(d.get("provenance", {})))


# -- scenarios ----------------------------------------------------------------------------------


def _load_json(text: str, origin: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{origin}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None


def validate_scenario(sc: dict, origin: str = "scenario") -> None:
    try:
        jsonschema.validate(sc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioError(f"{origin}: field {where}: {e.message}") from None


def load_scenarios(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read {path}: {e}") from None
    data = _load_json(text, str(path))
    items = data["scenarios"] if isinstance(data, dict) and "scenarios" in data else [data]
    for i, sc in enumerate(items):
        validate_scenario(sc, f"{path}[{i}]" if len(items) > 1 else str(path))
    return items


def scenario_hash(sc: dict) -> str:
    return hashlib.sha256(json.dumps(sc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _cube(spec: dict | None, dim: int) -> Cube | None:
    if spec is None:
        return None
    return Cube(dim, tuple(spec["corner"]), float(spec["side"]))


def _seeded(spec: dict | None, seed: int) -> dict | None:
    if spec is None:
        return None
    if spec.get("kind") == "random" and "seed" not in spec:
        spec = {**spec, "seed": seed}
    return spec


def _one_check(sc: dict, m: int, params: InequalityParams, variant: str, seed: int, force: bool) -> CheckReport:
    g = sc["grid"]
    dim = g["dim"]
    if dim * m > 24 and not force:
        raise ScenarioError(f"grid has 2^{dim * m} cells, above the 2^24 guard (use --force)")
    cube = _cube(g.get("cube"), dim) or Cube.unit(dim)
    grid = make_grid(cube, m)
    f = sample_field(sc["field"], grid)
    mu = sample_measure(_seeded(sc["measure"], seed), grid) if "measure" in sc else None
    w = make_weight(_seeded(sc["weight"], seed), grid, mu) if "weight" in sc else None
    chk = sc["check"]
    return check(chk["theorem"], f, mu, w, _cube(chk.get("cube"), dim), params, variant,
                 chk.get("maximal_mode", "brute"), force)


def run_scenario(sc: dict, seed: int | None = None, force: bool = False) -> list[CheckReport]:
    """All reports of one validated scenario, in sweep or level order."""
    seed = int(sc.get("seed", 0)) if seed is None else seed
    chk = sc["check"]
    base = InequalityParams(**{k: v for k, v in chk.get("params", {}).items()})
    variant = chk.get("variant", "a")
    m0 = sc["grid"]["m"]
    jobs = []
    if "sweep" in sc:
        name = sc["sweep"]["param"]
        for v in sc["sweep"]["values"]:
            if name == "m":
                jobs.append((int(v), base, variant))
            elif name == "variant":
                jobs.append((m0, base, str(v)))
            else:
                jobs.append((m0, base.replace(**{name: v}), variant))
    elif "convergence" in sc:
        levels = sc["convergence"]["levels"]
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ScenarioError("convergence levels must be increasing")
        jobs = [(int(m), base, variant) for m in levels]
    else:
        jobs = [(m0, base, variant)]
    try:
        return [_one_check(sc, m, prm, var, seed, force) for m, prm, var in jobs]
    except ConstraintError as e:
        raise ScenarioError(f"constraint violation: {e}") from None
    except (ValueError, KeyError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(f"invalid scenario: {e}") from None


def run_bundle(scenarios: Sequence[dict], seed: int | None = None, force: bool = False) -> ReportBundle:
    t0 = time.perf_counter()
    reports = []
    for sc in scenarios:
        reports.extend(run_scenario(sc, seed, force))
    digest = hashlib.sha256("".join(scenario_hash(s) for s in scenarios).encode()).hexdigest()
    prov = {"scenario_hash": digest, "version": __version__, "scenarios": len(scenarios),
            "wall_time_s": time.perf_counter() - t0}
    return ReportBundle(reports, [], prov)


# -- output -------------------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".17g")


def report_row(r: CheckReport, timing: bool = False) -> list[str]:
    p = r.params
    vals = [r.label, r.n, r.m, p.delta, p.p, p.q, p.alpha, p.r, p.s, p.epsilon, r.lhs, r.rhs_core,
            r.empirical_constant, r.explicit_constant, r.pass_explicit,
            r.runtime_ms if timing else None]
    return [v if isinstance(v, str) else _fmt(v) for v in vals]


def emit_report(bundle: ReportBundle, fmt: str = "csv", timing: bool = False) -> str:
    """The bundle as CSV (check reports, then any tables) or JSON text."""
    if fmt == "json":
        return json.dumps(bundle.to_dict(timing), indent=1, sort_keys=True) + "\n"
    if fmt != "csv":
        raise ValueError("format must be csv or json")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    if bundle.reports or not bundle.tables:
        wr.writerow(CSV_COLUMNS)
        for r in bundle.reports:
            wr.writerow(report_row(r, timing))
    for t in bundle.tables:
        wr.writerow(("family", "engine") + TABLE_COLUMNS + ("monotone",))
        for row in t.rows:
            wr.writerow([t.family, t.engine] + [_fmt(row[c]) for c in TABLE_COLUMNS] + [_fmt(t.monotone)])
    return buf.getvalue()


def load_bundle(text: str) -> ReportBundle:
    return ReportBundle.from_dict(json.loads(text))


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as e:
        raise ScenarioError(f"cannot write {out}: {e}") from None


def corpus_paths() -> list[Path]:
    root = resources.files("poincare_lab") / "corpus"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


# -- entry point ----------------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poincare-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, help="worker threads (default: THREADS or all cores)")
        p.add_argument("--seed", type=int, help="seed for random catalog entries")
        p.add_argument("--force", action="store_true", help="lift the grid-size guards")
        p.add_argument("--timing", action="store_true", help="fill runtime columns (breaks byte-identity)")

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("scenario")
    common(p)
    p = sub.add_parser("suite", help="run the built-in scenario corpus")
    p.add_argument("name", choices=("corpus",))
    common(p)
    p = sub.add_parser("converge", help="run a scenario at several grid depths")
    p.add_argument("scenario")
    p.add_argument("--levels", required=True, help="comma-separated depths, e.g. 6,8,10,12")
    common(p)
    p = sub.add_parser("counterexample", help="blow-up table of the logarithmic family")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--engine", choices=("radial", "grid"), default="radial")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--m", type=int, default=10, help="grid depth for the grid engine")
    p.add_argument("--allow-large-p", action="store_true", help="drop the p < 1/(1-delta) requirement")
    common(p)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        set_threads(args.threads)
    try:
        if args.command == "counterexample":
            if args.k_min > args.k_max:
                raise ScenarioError("--k-min must not exceed --k-max")
            try:
                table = run_counterexample(args.family, range(args.k_min, args.k_max + 1), args.n, args.p,
                                           args.q, args.delta, args.epsilon, args.engine, args.m,
                                           args.allow_large_p)
            except ValueError as e:
                raise ScenarioError(str(e)) from None
            bundle = ReportBundle([], [table], {"version": __version__})
        else:
            if args.command == "suite":
                scenarios = [sc for path in corpus_paths() for sc in load_scenarios(path)]
            else:
                scenarios = load_scenarios(args.scenario)
            if args.command == "converge":
                try:
                    levels = [int(x) for x in args.levels.split(",") if x.strip()]
                except ValueError:
                    raise ScenarioError("--levels must be comma-separated integers") from None
                scenarios = [{k: v for k, v in sc.items() if k != "sweep"} | {"convergence": {"levels": levels}}
                             for sc in scenarios]
            if args.threads is None and any("threads" in sc for sc in scenarios):
                set_threads(max(int(sc.get("threads", 1)) for sc in scenarios))
            bundle = run_bundle(scenarios, args.seed, args.force)
        out = args.out
        if out is None and args.command == "run" and len(scenarios) == 1:
            out = scenarios[0].get("output")
        _write(emit_report(bundle, args.format, args.timing), out)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    finally:
        set_threads(None)
    if bundle.hard_failures():
        for r in bundle.hard_failures():
            print(f"hard check failed: {r.label} n={r.n} m={r.m}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
