"""``crossfit`` command line: solve, continue, sweep, oracle, verify, export, replay.

Every command prints one JSON document containing a ``manifest`` (enough to
replay the run) and a ``result``.  Exit codes: 0 success, 1 input error,
2 no solution / continuation stuck, 3 degeneration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bodies import HomotopyFamily, ImplicitBody, parse_body, ray_intersect
from .configuration import CrossConfig, vertices
from .errors import (
    ContinuationStuckError,
    CrossfitError,
    DegenerationError,
    InputError,
    NonConvergenceError,
)
from .oracle import GridSpec, brute_force_search, refine_candidates
from .solver import (
    Solution,
    SolveOptions,
    continue_homotopy,
    gauss_newton,
    multistart_solve,
    sweep_family,
)
from .verify import check_solution, classify_guarantee

EXIT_OK, EXIT_INPUT, EXIT_NONE, EXIT_DEGENERATE = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with floats written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isinf(x):
            return "1e999" if x > 0 else "-1e999"
        if math.isnan(x):
            return "null"
        return format(x, ".17g")
    if obj is None:
        return "null"
    return json.dumps(obj)


@dataclass
class RunManifest:
    command: str
    documents: dict
    options: dict
    seed: int
    version: str = __version__
    wall_time: float = 0.0

    def to_document(self) -> dict:
        return asdict(self)

    @classmethod
    def from_document(cls, doc: dict) -> "RunManifest":
        return cls(**doc)


@dataclass
class Outcome:
    result: dict
    code: int = EXIT_OK
    text: str | None = None  # non-JSON payload (OBJ export)


# ---------------------------------------------------------------------------
# Input helpers
# ---------------------------------------------------------------------------


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from None


def config_from_document(doc: dict, index: int = 0) -> CrossConfig:
    """Accept a bare configuration, a solution entry, or a whole solve report."""
    if "result" in doc:
        doc = doc["result"]
    if "solutions" in doc:
        sols = doc["solutions"]
        if not 0 <= index < len(sols):
            raise InputError(f"solution index {index} out of range ({len(sols)} solutions)")
        doc = sols[index]
    keys = ("center", "scale", "rotation", "frame")
    return CrossConfig.from_document({k: doc[k] for k in keys if k in doc})


def _options(ns) -> SolveOptions:
    return SolveOptions(
        residual_tol=ns.tol,
        rank_threshold=ns.rank_threshold,
        seed_count=ns.seeds,
        seed=ns.seed,
    )


def _grid(ns) -> GridSpec:
    return GridSpec(
        euler_resolution=ns.grid_euler,
        center_resolution=ns.grid_center,
        scale_resolution=ns.grid_scale,
    )


def _solution_doc(body: ImplicitBody, sol: Solution) -> dict:
    doc = sol.to_document()
    doc["max_surface_defect"] = float(np.abs(body.value(vertices(sol.config))).max())
    return doc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_solve(docs: dict, ns) -> Outcome:
    body = parse_body(docs["body"])
    opts = _options(ns)
    stats: dict = {}
    sols = multistart_solve(body, None, ns.form, opts, stats)
    result = {
        "dim": body.dim,
        "form": ns.form,
        "guarantee": classify_guarantee(body.dim, body),
        "solutions": [_solution_doc(body, s) for s in sols],
        "seed_stats": stats,
    }
    return Outcome(result, EXIT_OK if sols else EXIT_NONE)


def _trace_doc(trace) -> dict:
    return {
        "samples": [{"t": t, **s.to_document()} for t, s in trace.samples],
        "accepted": trace.accepted,
        "rejected": trace.rejected,
        "min_dt": trace.min_dt if trace.samples[1:] else None,
        "max_dt": trace.max_dt,
        "branch_probe": trace.branch_probe,
    }


def cmd_continue(docs: dict, ns) -> Outcome:
    start = parse_body(docs["start"])
    end = parse_body(docs["end"])
    family = HomotopyFamily(start, end)
    opts = _options(ns)
    seeds = multistart_solve(start, None, "levelset", opts)
    if not seeds:
        return Outcome({"status": "no_start_solution"}, EXIT_NONE)
    try:
        trace = continue_homotopy(family, seeds[0], opts)
    except DegenerationError as exc:
        res = {"status": "degenerated", "message": str(exc)}
        if exc.trace is not None:
            res["trace"] = _trace_doc(exc.trace)
        return Outcome(res, EXIT_DEGENERATE)
    except ContinuationStuckError as exc:
        res = {"status": "stuck", "message": str(exc)}
        if exc.trace is not None and exc.trace.samples:
            res["trace"] = _trace_doc(exc.trace)
        return Outcome(res, EXIT_NONE)
    final = trace.final
    return Outcome(
        {
            "status": "reached",
            "guarantee": classify_guarantee(end.dim, end),
            "final": _solution_doc(end, final),
            "verification": check_solution(end, final).to_document(),
            "trace": _trace_doc(trace),
        }
    )


def cmd_sweep(docs: dict, ns) -> Outcome:
    body = parse_body(docs["body"])
    opts = _options(ns)
    if "solution" in docs:
        start = gauss_newton(body, config_from_document(docs["solution"], ns.index), ns.form, opts)
    else:
        found = multistart_solve(body, None, ns.form, opts)
        if not found:
            return Outcome({"solutions": []}, EXIT_NONE)
        start = found[0]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sols = sweep_family(body, start, ns.steps, ns.step_size, opts)
    return Outcome(
        {
            "solutions": [_solution_doc(body, s) for s in sols],
            "truncated": any(issubclass(w.category, RuntimeWarning) for w in caught),
        }
    )


def cmd_oracle(docs: dict, ns) -> Outcome:
    body = parse_body(docs["body"])
    cands = brute_force_search(body, None, _grid(ns))
    refined = refine_candidates(body, cands, _options(ns))
    return Outcome(
        {
            "candidates": [
                {"residual": c.residual, "index": list(c.index), **c.config.to_document()} for c in cands
            ],
            "refined": [_solution_doc(body, s) for s in refined],
        },
        EXIT_OK if refined else EXIT_NONE,
    )


def cmd_verify(docs: dict, ns) -> Outcome:
    body = parse_body(docs["body"])
    config = config_from_document(docs["solution"], ns.index)
    report = check_solution(body, config, ns.tol_verify)
    return Outcome(report.to_document(), EXIT_OK if report.passed else EXIT_NONE)


def icosphere(subdivisions: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere vertices and outward-oriented triangles."""
    phi = (1 + 5**0.5) / 2
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    pts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = pts[i] + pts[j]
                pts.append(m / np.linalg.norm(m))
                cache[key] = len(pts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(pts), np.array(faces)


def octahedron_faces(config: CrossConfig) -> list[tuple[int, int, int]]:
    """One triangle per sign orthant, wound so the normal points outward."""
    V = vertices(config)
    faces = []
    for signs in np.ndindex(2, 2, 2):
        tri = [2 * axis + s for axis, s in enumerate(signs)]
        a, b, c = V[tri]
        if np.cross(b - a, c - a) @ ((a + b + c) / 3 - config.center) < 0:
            tri = [tri[0], tri[2], tri[1]]
        faces.append(tuple(tri))
    return faces


def to_obj(body: ImplicitBody, config: CrossConfig, subdivisions: int = 2) -> str:
    if config.dim != 3 or body.dim != 3:
        raise InputError("OBJ export needs d = 3")
    fmt = lambda p: " ".join(format(float(v), ".17g") for v in p)  # noqa: E731
    lines = ["# crossfit export", "o crosspolytope"]
    lines += [f"v {fmt(v)}" for v in vertices(config)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in octahedron_faces(config)]
    dirs, tris = icosphere(subdivisions)
    p = body.interior_point
    surface = [p + ray_intersect(body, p, u) * u for u in dirs]
    lines.append("o surface")
    lines += [f"v {fmt(v)}" for v in surface]
    lines += [f"f {a + 7} {b + 7} {c + 7}" for a, b, c in tris]
    return "\n".join(lines) + "\n"


def cmd_export(docs: dict, ns) -> Outcome:
    body = parse_body(docs["body"])
    config = config_from_document(docs["solution"], ns.index)
    if body.dim != config.dim:
        raise InputError("solution and body dimensions differ")
    defects = np.abs(body.value(vertices(config)))
    if ns.format == "obj":
        return Outcome({"max_surface_defect": float(defects.max())}, text=to_obj(body, config))
    return Outcome(
        {
            "vertices": vertices(config).tolist(),
            "surface_values": defects.tolist(),
            "max_surface_defect": float(defects.max()),
        }
    )


COMMANDS = {
    "solve": (cmd_solve, ["body"]),
    "continue": (cmd_continue, ["start", "end"]),
    "sweep": (cmd_sweep, ["body"]),
    "oracle": (cmd_oracle, ["body"]),
    "verify": (cmd_verify, ["solution", "body"]),
    "export": (cmd_export, ["solution", "body"]),
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--form", choices=["levelset", "chord"], default="levelset")
    p.add_argument("--seeds", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--rank-threshold", type=float, default=1e-6)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--format", choices=["json", "obj"], default="json")
    p.add_argument("--grid-euler", type=int, default=GridSpec.euler_resolution)
    p.add_argument("--grid-center", type=int, default=GridSpec.center_resolution)
    p.add_argument("--grid-scale", type=int, default=GridSpec.scale_resolution)
    p.add_argument("--index", type=int, default=0, help="which solution of a report to use")
    p.add_argument("--tol-verify", type=float, default=1e-9)
    p.add_argument("-o", "--output", help="write the result here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossfit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "multi-start search on one body",
        "continue": "track a solution from START to END",
        "sweep": "walk along a solution family",
        "oracle": "brute-force grid search (d = 3)",
        "verify": "audit a solution",
        "export": "write vertices as JSON or an OBJ mesh",
    }
    for name, (_, inputs) in COMMANDS.items():
        p = sub.add_parser(name, help=helps[name])
        for inp in inputs:
            p.add_argument(inp, help=f"{inp} JSON file")
        if name == "sweep":
            p.add_argument("--solution", help="start from this solution instead of a fresh solve")
        _common(p)
    rp = sub.add_parser("replay", help="re-run the manifest of an earlier report")
    rp.add_argument("report")
    rp.add_argument("-o", "--output")
    return parser


OPTION_KEYS = (
    "form", "seeds", "seed", "tol", "rank_threshold", "steps", "step_size", "format",
    "grid_euler", "grid_center", "grid_scale", "index", "tol_verify",
)


def run(manifest: RunManifest) -> Outcome:
    handler, _ = COMMANDS[manifest.command]
    ns = argparse.Namespace(**manifest.options)
    return handler(manifest.documents, ns)


def _emit(text: str, output: str | None):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "replay":
            manifest = RunManifest.from_document(_read_json(ns.report)["manifest"])
            output = ns.output
        else:
            _, inputs = COMMANDS[ns.command]
            docs = {inp: _read_json(getattr(ns, inp)) for inp in inputs}
            if getattr(ns, "solution", None) and ns.command == "sweep":
                docs["solution"] = _read_json(ns.solution)
            manifest = RunManifest(
                command=ns.command,
                documents=docs,
                options={k: getattr(ns, k) for k in OPTION_KEYS},
                seed=ns.seed,
            )
            output = ns.output
        started = time.perf_counter()
        outcome = run(manifest)
        manifest.wall_time = time.perf_counter() - started
    except (CrossfitError, KeyError) as exc:
        if isinstance(exc, NonConvergenceError):
            print(f"crossfit: {exc}", file=sys.stderr)
            return EXIT_NONE
        print(f"crossfit: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if outcome.text is not None:
        _emit(outcome.text, output)
    else:
        _emit(dumps({"manifest": manifest.to_document(), "result": outcome.result}) + "\n", output)
    return outcome.code


if __name__ == "__main__":
    sys.exit(main())
