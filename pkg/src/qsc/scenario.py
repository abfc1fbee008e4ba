"""Scenario files: parsing, validation and task execution.

A scenario is a JSON object::

    {
      "name": "hp-demo",
      "seed": 7,
      "output": "out",
      "grid": {"horizon": 1.0, "n_cells": 8, "d": 1, "dim_h": 2, "cap_bits": 22},
      "generator": {"hp": {"W": M, "L": M, "H": M}},
      "tasks": [{"name": "u", "type": "unitarity", "assert": {"unitarity_defect": 0.5}}]
    }

Complex matrices ``M`` are nested lists of ``[re, im]`` pairs, row major.
The generator is exactly one of ``zero``, ``hp``, ``hamiltonian``, ``table``
or ``structure`` (a spatial structure map built from an ``hp`` or ``table``
factor).  Every task writes one CSV file whose header echoes all resolved
parameters, defaults included.
"""
from dataclasses import dataclass, field
import io
import json
import math
import re

import numpy as np

from . import __version__
from .evolution import (chrono_kernel, euler_apply, hamiltonian_exp, hamiltonian_table,
                        ito_formula_check, pseudo_unitary_check, unitarity_defect)
from .flows import (FlowSpec, conjugation_defect, flow_columns, flow_estimate, flow_relative_norm,
                    homomorphism_defect, spatial_structure_map, structure_map_check)
from .fock import CapExceededError, Grid, check_dense_cap, quanta_indices, truncated_columns
from .kernels import (Kernel, WeightTable, epsilon_columns, epsilon_operator_bound,
                      epsilon_relative_norm, multiplicativity_defect)
from .samplers import complex_normal, random_hp_factor, random_point_matrix, random_sparse_kernel
from .triangular import TriangularPointMatrix

PRNG_NAME = "PCG64"

TASK_TYPES = ("evolve", "unitarity", "ito-check", "flow", "converge", "bounds")
GENERATOR_TYPES = ("zero", "hp", "hamiltonian", "table", "structure")
METRICS = ("unitarity", "multiplicativity", "ito", "flow_homomorphism")

_COMMON_DEFAULTS = {"t": None, "max_quanta": 2}
TASK_DEFAULTS = {
    "evolve": {"compare_euler": True},
    "unitarity": {},
    "ito-check": {},
    "flow": {"A": None},
    "converge": {"n_list": [4, 8, 16], "metrics": list(METRICS), "exact_tol": 1e-12,
                 "multiplicativity_scale": 0.5, "A": None},
    "bounds": {"trials": 30, "checks": ["epsilon", "flow"], "n_tables": 6, "scale": 0.5,
               "xi_plus": 4.0, "xi_minus": 0.25},
}
ASSERT_KEYS = {
    "evolve": ("unitarity_defect", "euler_defect"),
    "unitarity": ("unitarity_defect", "local_pseudounitary_defect"),
    "ito-check": ("ito_defect", "three_term_defect"),
    "flow": ("local_homomorphism", "unit_defect", "hermiticity_defect", "homomorphism_defect",
             "conjugation_defect"),
    "converge": ("min_order",),
    "bounds": ("max_violations",),
}
MATRIX_FIELDS = {
    "hp": ("W", "L", "H"),
    "hamiltonian": ("H00", "H0p", "Hmp", "Hm0"),
    "table": ("L00", "L0p", "Lm0", "Lmp"),
}
OPTIONAL_MATRICES = {"Hm0", "L00", "L0p", "Lm0", "Lmp"}


class ScenarioError(Exception):
    """Base class; ``exit_code`` is the process exit status."""

    exit_code = 1


class ParseError(ScenarioError):
    exit_code = 2


class ValidationError(ScenarioError):
    exit_code = 3


# ---------------------------------------------------------------------------
# parsing


def _locate(text, path):
    """Line of the last key of ``path`` found by scanning keys in order."""
    pos, line = 0, None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            break
        pos = m.start()
        line = text.count("\n", 0, pos) + 1
    return line


class _Ctx:
    def __init__(self, text):
        self.text = text

    def fail(self, path, msg):
        name = ".".join(str(p) if not isinstance(p, int) else f"[{p}]" for p in path).replace(".[", "[")
        line = _locate(self.text, path)
        where = f" (line {line})" if line else ""
        raise ValidationError(f"{name}{where}: {msg}")


def parse_text(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None


def parse_matrix(ctx, path, value, shape):
    """Complex matrix of the given shape from ``[[[re, im], ...], ...]``."""
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        ctx.fail(path, "expected a list of rows of [re, im] pairs")
    rows = len(value)
    cols = {len(r) for r in value}
    if len(cols) > 1:
        ctx.fail(path, "rows have different lengths")
    got = (rows, cols.pop() if cols else 0)
    if got != tuple(shape):
        ctx.fail(path, f"matrix has shape {got[0]}x{got[1]}, expected {shape[0]}x{shape[1]}")
    out = np.zeros(shape, dtype=complex)
    for i, r in enumerate(value):
        for j, z in enumerate(r):
            if (not isinstance(z, list) or len(z) != 2
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in z)):
                ctx.fail(path, f"entry ({i}, {j}) is not an [re, im] pair of numbers")
            out[i, j] = complex(z[0], z[1])
    return out


def matrix_to_json(M):
    """Inverse of :func:`parse_matrix` (exact for binary64 values)."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def _number(ctx, path, v, kind=float, positive=False, minimum=None):
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind is int:
        ok = ok and float(v).is_integer()
    if not ok or (isinstance(v, float) and not math.isfinite(v)):
        ctx.fail(path, f"expected {'an integer' if kind is int else 'a number'}, got {v!r}")
    v = kind(v)
    if positive and not v > 0:
        ctx.fail(path, "must be positive")
    if minimum is not None and v < minimum:
        ctx.fail(path, f"must be >= {minimum}")
    return v


def _obj(ctx, path, v, allowed=None, required=()):
    if not isinstance(v, dict):
        ctx.fail(path, "expected an object")
    for k in required:
        if k not in v:
            ctx.fail(path + [k], "is required")
    if allowed is not None:
        for k in v:
            if k not in allowed:
                ctx.fail(path + [k], "unknown field")
    return v


# ---------------------------------------------------------------------------
# scenario model


@dataclass
class Generator:
    """Per-cell factor ``F`` (time homogeneous) and an optional flow structure."""

    kind: str
    factor: TriangularPointMatrix
    spec: dict
    structure: bool = False

    @property
    def L(self):
        return self.factor - TriangularPointMatrix.identity(self.factor.dim_h, self.factor.d_mult)


@dataclass
class Task:
    name: str
    type: str
    index: int
    params: dict
    asserts: dict


@dataclass
class Scenario:
    name: str
    seed: int
    grid: Grid
    generator: Generator
    tasks: list
    output: str = "qsc-out"
    source: str = ""
    overrides: dict = field(default_factory=dict)

    def task_rng(self, task):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, task.index])))


def _parse_factor(ctx, path, kind, body, dh, d):
    b = dh * d
    shapes = {"W": (b, b), "L": (b, dh), "H": (dh, dh),
              "H00": (b, b), "H0p": (b, dh), "Hmp": (dh, dh), "Hm0": (dh, b),
              "L00": (b, b), "L0p": (b, dh), "Lm0": (dh, b), "Lmp": (dh, dh)}
    names = MATRIX_FIELDS[kind]
    req = [k for k in names if k not in OPTIONAL_MATRICES]
    _obj(ctx, path, body, allowed=names, required=req)
    M = {k: parse_matrix(ctx, path + [k], body[k], shapes[k]) for k in names if k in body}
    if kind == "hp":
        W = M["W"]
        if np.max(np.abs(W.conj().T @ W - np.eye(b))) > 1e-10:
            ctx.fail(path + ["W"], "must be unitary")
        if np.max(np.abs(M["H"] - M["H"].conj().T)) > 1e-10:
            ctx.fail(path + ["H"], "must be Hermitian")
        return TriangularPointMatrix.hp(W, M["L"], M["H"])
    if kind == "hamiltonian":
        return hamiltonian_exp(hamiltonian_table(M["H00"], M["H0p"], M["Hmp"], M.get("Hm0")))
    L = TriangularPointMatrix.generator(dh, d, M.get("L00"), M.get("L0p"), M.get("Lm0"), M.get("Lmp"))
    return TriangularPointMatrix.identity(dh, d) + L


def _parse_generator(ctx, v, dh, d):
    path = ["generator"]
    _obj(ctx, path, v)
    if len(v) != 1 or next(iter(v)) not in GENERATOR_TYPES:
        ctx.fail(path, f"exactly one of {', '.join(GENERATOR_TYPES)} is required, got {sorted(v)}")
    kind, body = next(iter(v.items()))
    if kind == "zero":
        _obj(ctx, path + [kind], body, allowed=())
        return Generator(kind, TriangularPointMatrix.identity(dh, d), {})
    if kind == "structure":
        _obj(ctx, path + [kind], body)
        if len(body) != 1 or next(iter(body)) not in ("hp", "table"):
            ctx.fail(path + [kind], "exactly one of hp, table is required")
        sub, sb = next(iter(body.items()))
        F = _parse_factor(ctx, path + [kind, sub], sub, sb, dh, d)
        return Generator(kind, F, body, structure=True)
    F = _parse_factor(ctx, path + [kind], kind, body, dh, d)
    return Generator(kind, F, body)


def _parse_task(ctx, i, v, dh, names):
    path = ["tasks", i]
    _obj(ctx, path, v, required=("name", "type"))
    name, typ = v["name"], v["type"]
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        ctx.fail(path + ["name"], "must be a non-empty string of [A-Za-z0-9_.-]")
    if name in names:
        ctx.fail(path + ["name"], f"duplicate task name {name!r}")
    if typ not in TASK_TYPES:
        ctx.fail(path + ["type"], f"must be one of {', '.join(TASK_TYPES)}")
    defaults = dict(_COMMON_DEFAULTS, **TASK_DEFAULTS[typ])
    allowed = set(defaults) | {"name", "type", "assert"}
    _obj(ctx, path, v, allowed=allowed)
    p = dict(defaults)
    for k in defaults:
        if k in v:
            p[k] = v[k]
    if p["t"] is not None:
        p["t"] = _number(ctx, path + ["t"], p["t"], positive=True)
    p["max_quanta"] = _number(ctx, path + ["max_quanta"], p["max_quanta"], int, minimum=0)
    if "A" in p and p["A"] is not None:
        p["A"] = parse_matrix(ctx, path + ["A"], p["A"], (dh, dh))
    if typ == "evolve" and not isinstance(p["compare_euler"], bool):
        ctx.fail(path + ["compare_euler"], "must be a boolean")
    if typ == "converge":
        nl = p["n_list"]
        if not isinstance(nl, list) or len(nl) < 2:
            ctx.fail(path + ["n_list"], "needs at least two cell counts")
        nl = [_number(ctx, path + ["n_list"], n, int, minimum=1) for n in nl]
        if any(b <= a for a, b in zip(nl, nl[1:])):
            ctx.fail(path + ["n_list"], "must be strictly ascending")
        p["n_list"] = nl
        ms = p["metrics"]
        if not isinstance(ms, list) or not ms or any(m not in METRICS for m in ms):
            ctx.fail(path + ["metrics"], f"must be a non-empty list from {', '.join(METRICS)}")
        p["exact_tol"] = _number(ctx, path + ["exact_tol"], p["exact_tol"], minimum=0.0)
        p["multiplicativity_scale"] = _number(ctx, path + ["multiplicativity_scale"],
                                              p["multiplicativity_scale"], minimum=0.0)
    if typ == "bounds":
        p["trials"] = _number(ctx, path + ["trials"], p["trials"], int, minimum=1)
        p["n_tables"] = _number(ctx, path + ["n_tables"], p["n_tables"], int, minimum=1)
        p["scale"] = _number(ctx, path + ["scale"], p["scale"], minimum=0.0)
        p["xi_plus"] = _number(ctx, path + ["xi_plus"], p["xi_plus"], positive=True)
        p["xi_minus"] = _number(ctx, path + ["xi_minus"], p["xi_minus"], positive=True)
        ch = p["checks"]
        if not isinstance(ch, list) or not ch or any(c not in ("epsilon", "flow") for c in ch):
            ctx.fail(path + ["checks"], "must be a non-empty list from epsilon, flow")
    asserts = v.get("assert", {})
    _obj(ctx, path + ["assert"], asserts, allowed=ASSERT_KEYS[typ])
    asserts = {k: _number(ctx, path + ["assert", k], a) for k, a in asserts.items()}
    return Task(name, typ, i, p, asserts)


def load_scenario(text, seed=None, cap_bits=None, output=None, n_list=None):
    """Parse and validate scenario text; command-line overrides win over the file."""
    ctx = _Ctx(text)
    raw = parse_text(text)
    _obj(ctx, [], raw, allowed=("name", "seed", "output", "grid", "generator", "tasks"),
         required=("grid", "generator", "tasks"))
    name = raw.get("name", "scenario")
    if not isinstance(name, str):
        ctx.fail(["name"], "must be a string")
    sd = _number(ctx, ["seed"], raw.get("seed", 0), int, minimum=0)
    if sd >= 2 ** 64:
        ctx.fail(["seed"], "must fit in 64 bits")
    sd = sd if seed is None else seed
    g = _obj(ctx, ["grid"], raw["grid"], allowed=("horizon", "n_cells", "d", "dim_h", "cap_bits"),
             required=("n_cells",))
    horizon = _number(ctx, ["grid", "horizon"], g.get("horizon", 1.0), positive=True)
    n = _number(ctx, ["grid", "n_cells"], g["n_cells"], int, minimum=1)
    d = _number(ctx, ["grid", "d"], g.get("d", 1), int, minimum=1)
    dh = _number(ctx, ["grid", "dim_h"], g.get("dim_h", 1), int, minimum=1)
    cap = _number(ctx, ["grid", "cap_bits"], g.get("cap_bits", 22), int, minimum=1)
    cap = cap if cap_bits is None else cap_bits
    try:
        grid = Grid(horizon, n, d, dh, cap)
    except CapExceededError as e:
        ctx.fail(["grid", "cap_bits"], str(e))
    gen = _parse_generator(ctx, raw["generator"], dh, d)
    tl = raw["tasks"]
    if not isinstance(tl, list) or not tl:
        ctx.fail(["tasks"], "expected a non-empty list")
    tasks = []
    for i, tv in enumerate(tl):
        tasks.append(_parse_task(ctx, i, tv, dh, {t.name for t in tasks}))
    if n_list is not None:
        for t in tasks:
            if t.type == "converge":
                t.params["n_list"] = list(n_list)
    for t in tasks:
        where = ["tasks", t.index]
        sizes = t.params["n_list"] if t.type == "converge" else [n]
        for m in sizes:
            if dh * (1 + d) ** m > 2 ** cap:
                ctx.fail(where + (["n_list"] if t.type == "converge" else []),
                         f"n_cells={m} exceeds the cap 2^{cap}")
        if t.type == "bounds":
            try:
                check_dense_cap(grid)
            except CapExceededError as e:
                ctx.fail(where + ["type"], f"bounds needs dense matrices: {e}")
    out = raw.get("output", "qsc-out") if output is None else output
    if not isinstance(out, str):
        ctx.fail(["output"], "must be a string")
    return Scenario(name, sd, grid, gen, tasks, out, text,
                    {"seed": seed, "cap_bits": cap_bits, "n_list": n_list})


# ---------------------------------------------------------------------------
# metrics


def _unit_matrix(rng, dh):
    A = complex_normal(rng, dh, dh)
    return A / np.linalg.norm(A, 2)


def evolve_metrics(sc, grid, p):
    F, t = sc.generator.factor, p["t"]
    N = p["max_quanta"]
    L = sc.generator.L
    row = {"unitarity_defect": unitarity_defect(L, None, t, grid, N)}
    if p.get("compare_euler", False):
        idx = quanta_indices(grid, N)
        K = chrono_kernel(F, None, grid.horizon_T if t is None else t, grid)
        Ck = epsilon_columns(K, idx)[idx]
        Ce = truncated_columns(lambda v: euler_apply(L, None, t, grid, v), grid, N)[idx]
        row["euler_defect"] = float(np.linalg.norm(Ck - Ce, 2)) if Ck.size else 0.0
    return row


def flow_spec(sc, grid):
    return FlowSpec(grid, spatial_structure_map(sc.generator.factor, n_cells=grid.n_cells))


def flow_metrics(sc, grid, p, A):
    spec = flow_spec(sc, grid)
    t, N = p["t"], p["max_quanta"]
    dh = grid.dim_h
    idx = quanta_indices(grid, N)
    loc = structure_map_check(spec.structure, [A], n_random=4, rng=np.random.default_rng(0))
    I = np.eye(dh)
    JI = flow_columns(spec, I, idx, t)[idx]
    JA = flow_columns(spec, A, idx, t)[idx]
    JAd = flow_columns(spec, A.conj().T, idx, t)[idx]
    K = chrono_kernel(sc.generator.factor, None, grid.horizon_T if t is None else t, grid)
    nrm = lambda M: float(np.linalg.norm(M, 2)) if M.size else 0.0
    return {
        "local_homomorphism": loc["homomorphism"],
        "unit_defect": nrm(JI - np.eye(JI.shape[0])),
        "hermiticity_defect": nrm(JAd - JA.conj().T),
        "homomorphism_defect": homomorphism_defect(spec, A, t, N),
        "conjugation_defect": conjugation_defect(spec, A, K, t, N),
    }


def observed_order(ns, defects, exact_tol):
    """Least-squares slope of ``-log2(defect)`` against ``log2(n)``.

    Returns ``"exact"`` when every defect is at most ``exact_tol``; defects
    below the tolerance are left out of the fit.
    """
    pts = [(n, e) for n, e in zip(ns, defects) if e > exact_tol]
    if not pts:
        return "exact"
    if len(pts) < 2:
        return float("nan")
    x = np.log2([n for n, _ in pts])
    y = np.log2([e for _, e in pts])
    return float(-np.polyfit(x, y, 1)[0])


def converge_table(sc, p, rng):
    """Rows per ``n`` with each metric's defect and its observed order."""
    g0 = sc.grid
    dh, d = g0.dim_h, g0.d_mult
    metrics = p["metrics"]
    A = p["A"] if p["A"] is not None else _unit_matrix(rng, dh)
    s = p["multiplicativity_scale"]
    fS = random_hp_factor(rng, 1, d, s)
    fT = random_hp_factor(rng, 1, d, s)
    t, N = p["t"], p["max_quanta"]
    cols = {m: [] for m in metrics}
    for n in p["n_list"]:
        g = g0.with_cells(n)
        for m in metrics:
            if m == "unitarity":
                v = unitarity_defect(sc.generator.L, None, t, g, N)
            elif m == "multiplicativity":
                gs = Grid(g.horizon_T, n, d, 1, g.cap_bits)
                v = multiplicativity_defect(Kernel.factorized(gs, None, fS), Kernel.factorized(gs, None, fT),
                                            max_quanta=N)
            elif m == "ito":
                v = ito_formula_check(sc.generator.L, None, t, g, N)["ito_defect"]
            else:
                v = homomorphism_defect(flow_spec(sc, g), A, t, N)
            cols[m].append(v)
    orders = {m: observed_order(p["n_list"], cols[m], p["exact_tol"]) for m in metrics}
    numeric = [o for o in orders.values() if o != "exact"]
    overall = "exact" if not numeric else min(numeric)
    rows = []
    for i, n in enumerate(p["n_list"]):
        row = {"n": n, "dt": g0.horizon_T / n}
        for m in metrics:
            row[f"{m}_defect"] = cols[m][i]
            row[f"{m}_order"] = orders[m]
        row["observed_order"] = overall
        rows.append(row)
    return rows, overall


def bounds_rows(sc, p, rng):
    g = sc.grid
    xp, xm = p["xi_plus"], p["xi_minus"]
    rows = []
    for check in p["checks"]:
        for k in range(p["trials"]):
            if check == "epsilon":
                T = random_sparse_kernel(g, rng, p["n_tables"], p["scale"])
                zeta = WeightTable(g.n_cells, 1.0, 1.0, 1.0, 1.0)
                actual = epsilon_relative_norm(T, xp, xm)
                bound = epsilon_operator_bound(T, zeta, xp, xm)
            else:
                f = random_point_matrix(rng, g.dim_h, g.d_mult, p["scale"], unitary_diag=True)
                spec = FlowSpec(g, spatial_structure_map(f, n_cells=g.n_cells))
                A = _unit_matrix(rng, g.dim_h)
                actual = flow_relative_norm(spec, A, p["t"], xp, xm)
                bound = flow_estimate(spec, p["t"], xp, xm)
            ratio = actual / bound if bound > 0 else (0.0 if actual == 0 else math.inf)
            rows.append({"check": check, "trial": k, "actual": actual, "bound": bound,
                         "ratio": ratio, "pass": int(actual <= bound * (1 + 1e-12))})
    return rows


# ---------------------------------------------------------------------------
# execution and CSV output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _header_value(v):
    if isinstance(v, np.ndarray):
        return json.dumps(matrix_to_json(v))
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v)


@dataclass
class TaskResult:
    task: Task
    columns: list
    rows: list
    failures: list
    header: dict

    def to_csv(self):
        buf = io.StringIO()
        for k, v in self.header.items():
            buf.write(f"# {k}={v}\n")
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join(_fmt(r.get(c)) for c in self.columns) + "\n")
        return buf.getvalue()


def _header(sc, task, p):
    g = sc.grid
    h = {
        "qsc_version": __version__,
        "scenario": sc.name,
        "task": task.name,
        "type": task.type,
        "prng": PRNG_NAME,
        "seed": sc.seed,
        "seed_sequence": json.dumps([sc.seed, task.index]),
        "grid.horizon": repr(float(g.horizon_T)),
        "grid.n_cells": g.n_cells,
        "grid.d": g.d_mult,
        "grid.dim_h": g.dim_h,
        "grid.cap_bits": g.cap_bits,
        "generator": sc.generator.kind + (("." + next(iter(sc.generator.spec))) if sc.generator.structure else ""),
    }
    for k in sorted(p):
        h["param." + k] = _header_value(p[k])
    for k in sorted(task.asserts):
        h["assert." + k] = repr(float(task.asserts[k]))
    return h


def _check_max(task, row, failures, keys=None):
    for k, lim in task.asserts.items():
        if keys is not None and k not in keys:
            continue
        v = row.get(k)
        if v is None or (isinstance(v, float) and math.isnan(v)):
            failures.append(f"{task.name}: {k} not available")
        elif not v <= lim:
            failures.append(f"{task.name}: {k} = {v:.6g} exceeds {lim:.6g}")


def run_task(sc, task):
    p = dict(task.params)
    rng = sc.task_rng(task)
    g = sc.grid
    base = {"n_cells": g.n_cells, "dt": g.dt, "t": g.horizon_T if p["t"] is None else p["t"],
            "max_quanta": p["max_quanta"]}
    failures = []
    if task.type == "evolve":
        row = dict(base, **evolve_metrics(sc, g, p))
        cols = list(base) + ["unitarity_defect"] + (["euler_defect"] if p["compare_euler"] else [])
        rows = [row]
        _check_max(task, row, failures)
    elif task.type == "unitarity":
        row = dict(base, unitarity_defect=unitarity_defect(sc.generator.L, None, p["t"], g, p["max_quanta"]),
                   local_pseudounitary_defect=pseudo_unitary_check(sc.generator.factor).defect)
        cols = list(base) + ["unitarity_defect", "local_pseudounitary_defect"]
        rows = [row]
        _check_max(task, row, failures)
    elif task.type == "ito-check":
        r = ito_formula_check(sc.generator.L, None, p["t"], g, p["max_quanta"])
        row = dict(base, ito_defect=r["ito_defect"], three_term_defect=r["three_term_defect"])
        cols = list(base) + ["ito_defect", "three_term_defect"]
        rows = [row]
        _check_max(task, row, failures)
    elif task.type == "flow":
        A = p["A"] if p["A"] is not None else _unit_matrix(rng, g.dim_h)
        p["A"] = A
        row = dict(base, **flow_metrics(sc, g, p, A))
        cols = list(base) + list(ASSERT_KEYS["flow"])
        rows = [row]
        _check_max(task, row, failures)
    elif task.type == "converge":
        rows, overall = converge_table(sc, p, rng)
        if p["A"] is None and "flow_homomorphism" in p["metrics"]:
            p["A"] = "random"
        cols = list(rows[0])
        lim = task.asserts.get("min_order")
        if lim is not None and overall != "exact" and not (overall >= lim):
            failures.append(f"{task.name}: observed_order = {overall:.4g} below {lim:.4g}")
    else:
        rows = bounds_rows(sc, p, rng)
        cols = ["check", "trial", "actual", "bound", "ratio", "pass"]
        viol = sum(1 - r["pass"] for r in rows)
        lim = task.asserts.get("max_violations")
        if lim is not None and viol > lim:
            failures.append(f"{task.name}: {viol} bound violations (allowed {lim:g})")
    return TaskResult(task, cols, rows, failures, _header(sc, task, p))


def run_scenario(sc, only=None):
    """Run all tasks (or the one named ``only``); returns the results in order."""
    tasks = sc.tasks
    if only is not None:
        tasks = [t for t in tasks if t.name == only]
        if not tasks:
            raise ValidationError(f"tasks: no task named {only!r}")
    return [run_task(sc, t) for t in tasks]
