"""Closed-form snapping of trained edges and the resulting symbolic classifier.

Each edge is replaced by ``c * f(a*x + b) + d`` for the best-scoring ``f`` in
:data:`LIBRARY`; the snapped edges are then composed layer by layer into two
expression trees, one per logit. Trees are plain nested tuples of primitives
(numbers, variables, sums, products, quotients, powers and a few named
functions) so they render to infix text and parse back without loss.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .network import KanNetwork, decide, edge_eval
from .spline import SplineGrid

TREE_VERSION = "kan-symbolic/1"
N_SAMPLES = 201
A_MAGNITUDES = tuple(m * s for m in (0.25, 0.5, 1.0, 2.0, 4.0) for s in (1.0, 1.5))
A_LATTICE = tuple(sorted(A_MAGNITUDES + tuple(-a for a in A_MAGNITUDES)))
B_LATTICE = (-1.0, -0.5, 0.0, 0.5, 1.0)
REFINE_ROUNDS = 2
# a more complex family must beat the incumbent by this much to replace it
R2_TIE = 1e-9


class SymbolicError(ValueError):
    pass


class SymbolicEvaluationError(ArithmeticError):
    pass


def _logistic(u):
    return 1.0 / (1.0 + np.exp(-u))


# name -> (function, singular at u == 0); order runs simple to complex
LIBRARY = {
    "zero": (lambda u: np.zeros_like(u), False),
    "linear": (lambda u: u, False),
    "quadratic": (lambda u: u**2, False),
    "cubic": (lambda u: u**3, False),
    "quartic": (lambda u: u**4, False),
    "reciprocal": (lambda u: 1.0 / u, True),
    "sqrt-abs": (lambda u: np.sqrt(np.abs(u)), False),
    "exponential": (np.exp, False),
    "log-abs": (lambda u: np.log(np.abs(u)), True),
    "absolute": (np.abs, False),
    "sine": (np.sin, False),
    "hyperbolic-tangent": (np.tanh, False),
    "logistic": (_logistic, False),
    "gaussian": (lambda u: np.exp(-(u**2)), False),
    "arctangent": (np.arctan, False),
}
FAMILIES = tuple(LIBRARY)


@dataclass(frozen=True)
class SymbolicTerm:
    family: str
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    r2: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return evaluate_tree(term_tree(self, ("var", "x")), {"x": x})

    def to_dict(self) -> dict:
        return {"family": self.family, "a": self.a, "b": self.b, "c": self.c, "d": self.d, "r2": self.r2}


def _r2(y: np.ndarray, pred: np.ndarray) -> float:
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    scale = max(1.0, float(np.sum(y**2)))
    if ss_tot <= 1e-24 * scale:
        return 1.0 if ss_res <= 1e-20 * scale else 0.0
    return 1.0 - ss_res / ss_tot


def _affine_fit(feats: np.ndarray, y: np.ndarray):
    """Least-squares ``c, d`` for every row of ``feats`` against ``y``; returns (c, d, r2)."""
    fm = feats.mean(axis=-1, keepdims=True)
    ym = y.mean()
    fc = feats - fm
    var = np.sum(fc * fc, axis=-1)
    cov = fc @ (y - ym)
    ok = var > 1e-24
    c = np.where(ok, cov / np.where(ok, var, 1.0), 0.0)
    d = ym - c * fm[..., 0]
    pred = c[..., None] * feats + d[..., None]
    ss_res = np.sum((y - pred) ** 2, axis=-1)
    ss_tot = float(np.sum((y - ym) ** 2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(y**2))):
        r2 = np.where(ss_res <= 1e-20, 1.0, 0.0)
    else:
        r2 = 1.0 - ss_res / ss_tot
    return c, d, np.where(np.isfinite(r2), r2, -np.inf)


def _candidates(family: str, xs: np.ndarray, a: np.ndarray, b: np.ndarray, guard=None):
    """Feature rows ``f(a*x + b)`` for paired ``a, b``; infeasible rows are NaN.

    Singular families are infeasible when the pole lies in ``guard`` (default:
    the sampled span).
    """
    f, singular = LIBRARY[family]
    u = a[:, None] * xs[None, :] + b[:, None]
    if singular:
        # a pole inside the domain rules the inner map out
        lo, hi = guard if guard is not None else (xs[0], xs[-1])
        root = -b / a
        bad = (root >= lo) & (root <= hi)
        u = np.where(bad[:, None], np.nan, u)
    with np.errstate(all="ignore"):
        feats = f(u)
    feats[~np.isfinite(feats).all(axis=1)] = np.nan
    return feats


def _search_family(family: str, xs: np.ndarray, ys: np.ndarray, guard=None) -> SymbolicTerm:
    if family == "zero":
        return SymbolicTerm("zero", 1.0, 0.0, 0.0, float(ys.mean()), _r2(ys, np.full_like(ys, ys.mean())))
    if family == "linear":
        c, d, r2 = _affine_fit(xs[None, :], ys)
        return SymbolicTerm("linear", 1.0, 0.0, float(c[0]), float(d[0]), float(r2[0]))

    def score(a, b):
        feats = _candidates(family, xs, a, b, guard)
        good = np.isfinite(feats).all(axis=1)
        c, d, r2 = _affine_fit(np.where(good[:, None], feats, 0.0), ys)
        return c, d, np.where(good, r2, -np.inf)

    a = np.repeat(np.array(A_LATTICE), len(B_LATTICE))
    b = np.tile(np.array(B_LATTICE), len(A_LATTICE))
    c, d, r2 = score(a, b)
    best = int(np.argmax(r2))
    ba, bb, bc, bd, br = a[best], b[best], c[best], d[best], r2[best]
    # local halving around the winning lattice cell
    da, db = 0.25 * abs(ba), 0.25
    for _ in range(REFINE_ROUNDS):
        offs = np.array([-1.0, 0.0, 1.0])
        na = (ba + da * offs)[:, None].repeat(3, axis=1).ravel()
        nb = (bb + db * offs)[None, :].repeat(3, axis=0).ravel()
        keep = na != 0
        na, nb = na[keep], nb[keep]
        c, d, r2 = score(na, nb)
        i = int(np.argmax(r2))
        if r2[i] > br:
            ba, bb, bc, bd, br = na[i], nb[i], c[i], d[i], r2[i]
        da, db = da / 2, db / 2
    if not np.isfinite(br):
        return SymbolicTerm(family, 1.0, 0.0, 0.0, 0.0, -math.inf)
    return SymbolicTerm(family, float(ba), float(bb), float(bc), float(bd), float(br))


def snap_samples(xs, ys, families=FAMILIES, guard=None) -> SymbolicTerm:
    """Best library term for samples ``ys`` at sorted abscissae ``xs``.

    ``guard`` is the (lo, hi) interval that must stay free of poles; it
    defaults to the sampled span.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    best = None
    for family in families:
        term = _search_family(family, xs, ys, guard)
        if best is None or term.r2 > best.r2 + R2_TIE:
            best = term
    return best


def snap_edge(edge, grid: SplineGrid, domain=None, families=FAMILIES) -> SymbolicTerm:
    """Snap one edge activation, sampled at 201 points across ``domain``
    (the grid range unless given). Singular candidates must be pole-free on
    both the sampled span and the grid range."""
    lo, hi = domain if domain is not None else (grid.lo, grid.hi)
    xs = np.linspace(lo, hi, N_SAMPLES)
    guard = (min(lo, grid.lo), max(hi, grid.hi))
    return snap_samples(xs, edge_eval(edge, grid, xs), families, guard)


def snap_network(net: KanNetwork, domains=None, workers: int = 1) -> list:
    """Snap every edge. ``domains[l]`` optionally gives a (lo, hi) per input of layer ``l``."""
    jobs = []
    for li, layer in enumerate(net.layers):
        for j in range(layer.out_dim):
            for i in range(layer.in_dim):
                dom = domains[li][i] if domains is not None and domains[li] is not None else None
                jobs.append((li, j, i, dom))

    def run(job):
        li, j, i, dom = job
        layer = net.layers[li]
        return snap_edge(layer.edge(j, i), layer.grid, dom)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            terms = list(pool.map(run, jobs))
    else:
        terms = [run(job) for job in jobs]
    snaps = [[[None] * layer.in_dim for _ in range(layer.out_dim)] for layer in net.layers]
    for (li, j, i, _), term in zip(jobs, terms):
        snaps[li][j][i] = term
    return snaps


def layer_input_domains(net: KanNetwork, u: np.ndarray) -> list:
    """Observed (lo, hi) per input of every layer for standardised inputs ``u``.

    Layer-0 spans are intersected with the grid range; a constant input gets a
    unit-wide span around its value.
    """
    domains = []
    h = np.asarray(u, dtype=float)
    for li, layer in enumerate(net.layers):
        lo, hi = h.min(axis=0), h.max(axis=0)
        if li == 0:
            lo, hi = np.maximum(lo, layer.grid.lo), np.minimum(hi, layer.grid.hi)
        domains.append([(float(a), float(b)) if b > a else (float(a) - 0.5, float(a) + 0.5)
                        for a, b in zip(lo, hi)])
        if li < len(net.layers) - 1:
            h = layer.forward(h)
    return domains


# ---------------------------------------------------------------- affine refinement

def _dlogistic(u):
    s = _logistic(u)
    return s * (1.0 - s)


def _dsqrt_abs(u):
    r = np.sqrt(np.abs(u))
    return np.where(r > 0, np.sign(u) / (2.0 * np.where(r > 0, r, 1.0)), 0.0)


DERIVATIVES = {
    "zero": lambda u: np.zeros_like(u),
    "linear": lambda u: np.ones_like(u),
    "quadratic": lambda u: 2.0 * u,
    "cubic": lambda u: 3.0 * u**2,
    "quartic": lambda u: 4.0 * u**3,
    "reciprocal": lambda u: -1.0 / u**2,
    "sqrt-abs": _dsqrt_abs,
    "exponential": np.exp,
    "log-abs": lambda u: 1.0 / u,
    "absolute": np.sign,
    "sine": np.cos,
    "hyperbolic-tangent": lambda u: 1.0 - np.tanh(u) ** 2,
    "logistic": _dlogistic,
    "gaussian": lambda u: -2.0 * u * np.exp(-(u**2)),
    "arctangent": lambda u: 1.0 / (1.0 + u**2),
}
# inner map stays fixed: pole placement for the singular ones, redundancy for the others
_FIXED_INNER = {"zero", "linear", "reciprocal", "log-abs"}


class _TermStack:
    """Layered evaluator over snapped terms with gradients for (a, b, c, d)."""

    def __init__(self, snaps: list):
        self.families = [[[t.family for t in row] for row in layer] for layer in snaps]
        self.params = [np.array([[[t.a, t.b, t.c, t.d] for t in row] for row in layer]) for layer in snaps]
        self.free = [np.array([[f not in _FIXED_INNER for f in row] for row in layer]) for layer in self.families]

    def forward(self, x: np.ndarray, caches=None) -> np.ndarray:
        for fams, p in zip(self.families, self.params):
            u = p[None, :, :, 0] * x[:, None, :] + p[None, :, :, 1]
            f = np.empty_like(u)
            df = np.empty_like(u) if caches is not None else None
            with np.errstate(all="ignore"):
                for j, row in enumerate(fams):
                    for i, fam in enumerate(row):
                        f[:, j, i] = LIBRARY[fam][0](u[:, j, i])
                        if df is not None:
                            df[:, j, i] = DERIVATIVES[fam](u[:, j, i])
            if caches is not None:
                caches.append((x, f, df))
            x = (p[None, :, :, 2] * f).sum(axis=-1) + p[:, :, 3].sum(axis=-1)
        return x

    def backward(self, caches: list, dy: np.ndarray) -> list:
        grads = [None] * len(self.params)
        for li in reversed(range(len(self.params))):
            x, f, df = caches[li]
            p = self.params[li]
            g = np.zeros_like(p)
            g[..., 2] = np.einsum("no,noi->oi", dy, f)
            g[..., 3] = dy.sum(axis=0)[:, None]
            t = dy[:, :, None] * p[None, :, :, 2] * df
            g[..., 0] = np.einsum("noi,ni->oi", t, x) * self.free[li]
            g[..., 1] = t.sum(axis=0) * self.free[li]
            grads[li] = g
            dy = np.einsum("noi,oi->ni", t, p[..., 0])
        return grads


def refine_terms(net: KanNetwork, snaps: list, u: np.ndarray, epochs: int = 20,
                 learning_rate: float = 1e-3, batch_size: int = 256, seed: int = 0) -> list:
    """Jointly tune every term's affine parameters so the symbolic logits
    reproduce the network's class probabilities on ``u`` (soft-target
    cross-entropy). Families stay fixed; reciprocal/log-abs inner maps are
    frozen so their poles cannot drift into the domain."""
    from .training import Adam

    u = np.asarray(u, dtype=float)
    stack = _TermStack(snaps)
    target = net.forward(u)
    target = np.exp(target - target.max(axis=1, keepdims=True))
    target /= target.sum(axis=1, keepdims=True)
    opt = Adam(stack.params, lr=learning_rate)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(u))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            caches: list = []
            z = stack.forward(u[idx], caches)
            q = np.exp(z - z.max(axis=1, keepdims=True))
            q /= q.sum(axis=1, keepdims=True)
            grads = stack.backward(caches, (q - target[idx]) / len(idx))
            if not all(np.isfinite(g).all() for g in grads):
                break
            opt.step(grads)
    domains = layer_input_domains(net, u)
    out = []
    for li, (layer, fams, p) in enumerate(zip(net.layers, stack.families, stack.params)):
        rows = []
        for j in range(layer.out_dim):
            row = []
            for i in range(layer.in_dim):
                a, b, c, d = (float(v) for v in p[j, i])
                xs = np.linspace(*domains[li][i], N_SAMPLES)
                with np.errstate(all="ignore"):
                    pred = c * LIBRARY[fams[j][i]][0](a * xs + b) + d
                ys = edge_eval(layer.edge(j, i), layer.grid, xs)
                r2 = _r2(ys, pred) if np.all(np.isfinite(pred)) else -math.inf
                row.append(SymbolicTerm(fams[j][i], a, b, c, d, r2))
            rows.append(row)
        out.append(rows)
    return out


# ---------------------------------------------------------------- expression trees

def _num(v: float):
    return ("num", float(v))


def _is_num(node, value=None) -> bool:
    return node[0] == "num" and (value is None or node[1] == value)


def _add(*terms):
    terms = [t for t in terms if not _is_num(t, 0.0)]
    nums = [t[1] for t in terms if _is_num(t)]
    rest = [t for t in terms if not _is_num(t)]
    if nums:
        total = math.fsum(nums)
        if total != 0.0 or not rest:
            rest.append(_num(total))
    if not rest:
        return _num(0.0)
    if len(rest) == 1:
        return rest[0]
    return ("add", tuple(rest))


def _mul(k: float, node):
    if k == 0.0 or _is_num(node, 0.0):
        return _num(0.0)
    if _is_num(node):
        return _num(k * node[1])
    if k == 1.0:
        return node
    return ("mul", (_num(k), node))


def term_tree(term: SymbolicTerm, arg):
    """Tree for ``c * f(a*arg + b) + d`` with constants folded."""
    if term.family == "zero" or term.c == 0.0:
        return _num(term.d)
    u = _add(_mul(term.a, arg), _num(term.b))
    fam = term.family
    if fam == "linear":
        inner = u
    elif fam in ("quadratic", "cubic", "quartic"):
        inner = ("pow", (u, _num({"quadratic": 2, "cubic": 3, "quartic": 4}[fam])))
    elif fam == "reciprocal":
        inner = ("div", (_num(1.0), u))
    elif fam == "sqrt-abs":
        inner = ("call", "sqrt", ("call", "abs", u))
    elif fam == "exponential":
        inner = ("call", "exp", u)
    elif fam == "log-abs":
        inner = ("call", "log", ("call", "abs", u))
    elif fam == "absolute":
        inner = ("call", "abs", u)
    elif fam == "sine":
        inner = ("call", "sin", u)
    elif fam == "hyperbolic-tangent":
        inner = ("call", "tanh", u)
    elif fam == "logistic":
        inner = ("div", (_num(1.0), ("add", (_num(1.0), ("call", "exp", ("neg", u))))))
    elif fam == "gaussian":
        inner = ("call", "exp", ("neg", ("pow", (u, _num(2)))))
    elif fam == "arctangent":
        inner = ("call", "atan", u)
    else:
        raise SymbolicError(f"unknown family {fam!r}")
    if _is_num(inner):
        return _num(term.c * inner[1] + term.d)
    return _add(_mul(term.c, inner), _num(term.d))


_FUNCS = {"sqrt": np.sqrt, "abs": np.abs, "exp": np.exp, "log": np.log, "sin": np.sin, "tanh": np.tanh,
          "atan": np.arctan}


def evaluate_tree(node, env: dict):
    """Vectorised evaluation; raises on division by zero, log(0) or overflow."""
    op = node[0]
    if op == "num":
        return node[1]
    if op == "var":
        return env[node[1]]
    if op == "add":
        acc = evaluate_tree(node[1][0], env)
        for child in node[1][1:]:
            acc = acc + evaluate_tree(child, env)
        return acc
    if op == "mul":
        acc = evaluate_tree(node[1][0], env)
        for child in node[1][1:]:
            acc = acc * evaluate_tree(child, env)
        return acc
    if op == "neg":
        return -evaluate_tree(node[1], env)
    if op == "pow":
        return evaluate_tree(node[1][0], env) ** evaluate_tree(node[1][1], env)
    if op == "div":
        num, den = (evaluate_tree(c, env) for c in node[1])
        if np.any(np.asarray(den) == 0):
            raise SymbolicEvaluationError("division by zero in symbolic formula")
        return num / den
    if op == "call":
        arg = evaluate_tree(node[2], env)
        if node[1] == "log" and np.any(np.asarray(arg) == 0):
            raise SymbolicEvaluationError("log of zero in symbolic formula")
        with np.errstate(over="ignore", invalid="ignore"):
            out = _FUNCS[node[1]](arg)
        if not np.all(np.isfinite(out)):
            raise SymbolicEvaluationError(f"non-finite {node[1]}() in symbolic formula")
        return out
    raise SymbolicError(f"unknown node {op!r}")


_PREC = {"add": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _fmt_num(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def render(node, parent: int = 0) -> str:
    """Infix text for a tree; Python expression syntax with ``**`` for powers."""
    op = node[0]
    if op == "num":
        s = _fmt_num(node[1])
        return f"({s})" if s.startswith("-") else s
    if op == "var":
        return node[1]
    if op == "call":
        return f"{node[1]}({render(node[2])})"
    prec = _PREC[op]
    if op == "add":
        s = " + ".join(render(c, prec) for c in node[1])
    elif op == "mul":
        s = "*".join(render(c, prec) for c in node[1])
    elif op == "div":
        s = f"{render(node[1][0], prec)}/{render(node[1][1], prec + 1)}"
    elif op == "neg":
        s = f"-{render(node[1], prec)}"
    else:
        s = f"{render(node[1][0], prec + 1)}**{render(node[1][1], prec)}"
    return f"({s})" if prec <= parent else s


def parse(text: str):
    """Inverse of :func:`render` (accepts the subset of Python syntax it emits)."""

    def conv(n):
        if isinstance(n, ast.Expression):
            return conv(n.body)
        if isinstance(n, ast.Constant) and isinstance(n.value, (int, float)):
            return _num(n.value)
        if isinstance(n, ast.Name):
            return ("var", n.id)
        if isinstance(n, ast.UnaryOp) and isinstance(n.op, ast.USub):
            inner = conv(n.operand)
            return _num(-inner[1]) if _is_num(inner) else ("neg", inner)
        if isinstance(n, ast.BinOp):
            left, right = conv(n.left), conv(n.right)
            if isinstance(n.op, ast.Add):
                if left[0] == "add":
                    return ("add", left[1] + (right,))
                return ("add", (left, right))
            if isinstance(n.op, ast.Sub):
                neg = _num(-right[1]) if _is_num(right) else ("neg", right)
                return ("add", (left, neg))
            if isinstance(n.op, ast.Mult):
                return ("mul", (left, right))
            if isinstance(n.op, ast.Div):
                return ("div", (left, right))
            if isinstance(n.op, ast.Pow):
                return ("pow", (left, right))
        if isinstance(n, ast.Call) and isinstance(n.func, ast.Name) and n.func.id in _FUNCS and len(n.args) == 1:
            return ("call", n.func.id, conv(n.args[0]))
        raise SymbolicError(f"unsupported syntax in formula: {ast.dump(n)[:80]}")

    return conv(ast.parse(text.strip(), mode="eval"))


def tree_to_json(node):
    if node[0] == "num":
        return {"num": node[1]}
    if node[0] == "var":
        return {"var": node[1]}
    if node[0] == "call":
        return {"call": node[1], "arg": tree_to_json(node[2])}
    if node[0] == "neg":
        return {"neg": tree_to_json(node[1])}
    return {node[0]: [tree_to_json(c) for c in node[1]]}


def tree_from_json(obj):
    if "num" in obj:
        return _num(obj["num"])
    if "var" in obj:
        return ("var", obj["var"])
    if "call" in obj:
        return ("call", obj["call"], tree_from_json(obj["arg"]))
    if "neg" in obj:
        return ("neg", tree_from_json(obj["neg"]))
    (op, children), = obj.items()
    return (op, tuple(tree_from_json(c) for c in children))


# ---------------------------------------------------------------- symbolic model

def input_names(n: int) -> list:
    return [f"x{i + 1}" for i in range(n)]


@dataclass
class SymbolicModel:
    terms: list
    trees: tuple
    n_inputs: int
    fingerprint: str = ""
    standardizer: dict = field(default_factory=dict)
    # per-edge r2 straight out of snapping, before affine refinement
    snap_r2: list = field(default_factory=list)

    def logits(self, u) -> np.ndarray:
        """Both logits for standardised inputs ``u`` of shape ``(N, n_inputs)`` or ``(n_inputs,)``."""
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        u2 = np.atleast_2d(u)
        env = {name: u2[:, k] for k, name in enumerate(input_names(self.n_inputs))}
        cols = []
        for tree in self.trees:
            v = np.broadcast_to(np.asarray(evaluate_tree(tree, env), dtype=float), (len(u2),))
            if not np.all(np.isfinite(v)):
                raise SymbolicEvaluationError("symbolic logit is not finite")
            cols.append(v)
        out = np.column_stack(cols)
        return out[0] if single else out

    def predict(self, u) -> np.ndarray:
        if len(self.trees) != 2:
            raise SymbolicError(f"the decision rule needs 2 logits, model has {len(self.trees)}")
        z = np.atleast_2d(self.logits(u))
        return decide(z[:, 0], z[:, 1])

    def render(self) -> str:
        lines = [f"L{k + 1} = {render(t)}" for k, t in enumerate(self.trees)]
        if len(self.trees) == 2:
            lines.append("predict = 1 if L2 > L1 else 0")
        return "\n".join(lines) + "\n"

    def to_document(self) -> dict:
        return {
            "format": TREE_VERSION,
            "inputs": input_names(self.n_inputs),
            "source_fingerprint": self.fingerprint,
            "standardizer": self.standardizer,
            "decision": "predict = 1 if L2 > L1 else 0",
            "logits": {f"L{k + 1}": tree_to_json(t) for k, t in enumerate(self.trees)},
            "edges": [[[t.to_dict() for t in row] for row in layer] for layer in self.terms],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "SymbolicModel":
        if doc.get("format") != TREE_VERSION:
            raise SymbolicError(f"unsupported tree document version {doc.get('format')!r}")
        names = sorted(doc["logits"], key=lambda k: int(k[1:]))
        trees = tuple(tree_from_json(doc["logits"][k]) for k in names)
        terms = [[[SymbolicTerm(**t) for t in row] for row in layer] for layer in doc.get("edges", [])]
        return cls(terms, trees, len(doc["inputs"]), doc.get("source_fingerprint", ""), doc.get("standardizer", {}))


def parse_formulas(text: str, n_inputs: int = 4) -> SymbolicModel:
    """Rebuild a model from the exported ``L1 = ...`` / ``L2 = ...`` text."""
    found = {}
    for line in text.splitlines():
        name, sep, expr = line.partition("=")
        if sep and name.strip() in ("L1", "L2"):
            found[name.strip()] = parse(expr)
    if set(found) != {"L1", "L2"}:
        raise SymbolicError("formula text must define L1 and L2")
    return SymbolicModel([], (found["L1"], found["L2"]), n_inputs)


def network_fingerprint(net: KanNetwork) -> str:
    h = hashlib.sha256()
    for p in net.params():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()


def compose_formulas(net: KanNetwork, snaps: list) -> SymbolicModel:
    if len(snaps) != len(net.layers):
        raise SymbolicError("snap matrix does not match the network's layer count")
    nodes = [("var", name) for name in input_names(net.widths[0])]
    for layer, layer_snaps in zip(net.layers, snaps):
        if len(layer_snaps) != layer.out_dim or any(len(row) != layer.in_dim for row in layer_snaps):
            raise SymbolicError("snap matrix shape does not match the network")
        nodes = [_add(*(term_tree(layer_snaps[j][i], nodes[i]) for i in range(layer.in_dim)))
                 for j in range(layer.out_dim)]
    return SymbolicModel(snaps, tuple(nodes), net.widths[0], network_fingerprint(net),
                         net.metadata.get("standardizer", {}))


def symbolic_predict(sm: SymbolicModel, x) -> int:
    """Label for one standardised input row."""
    return int(sm.predict(np.asarray(x, dtype=float))[0])


# ---------------------------------------------------------------- fidelity

# figures from the published reference run on real testbed data, kept for comparison
REFERENCE_FULL_TEST_BALANCED_ACCURACY = 0.89
REFERENCE_SYMBOLIC_TEST_ACCURACY = 0.8728
REFERENCE_SYMBOLIC_TRAIN_ACCURACY = 0.8768
OVERFIT_GAP = 0.05


def _split_scores(labels, full_pred, sym_pred) -> dict:
    from .training import metrics_from_predictions

    full = metrics_from_predictions(labels, full_pred)
    sym = metrics_from_predictions(labels, sym_pred)
    return {
        "full_accuracy": full.accuracy,
        "symbolic_accuracy": sym.accuracy,
        "full_balanced_accuracy": full.balanced_accuracy,
        "symbolic_balanced_accuracy": sym.balanced_accuracy,
        "agreement": float(np.mean(np.asarray(full_pred) == np.asarray(sym_pred))),
    }


def fidelity_report(net: KanNetwork, sm: SymbolicModel, train, test) -> dict:
    from .training import standardizer_of

    std = standardizer_of(net)
    out = {}
    for name, ds in (("train", train), ("test", test)):
        if len(ds) == 0:
            raise SymbolicError(f"{name} split is empty")
        u = std.transform(ds.features) if std is not None else ds.features
        logits = net.forward(u)
        out[name] = _split_scores(ds.labels, decide(logits[:, 0], logits[:, 1]), sm.predict(u))
    gap = abs(out["train"]["symbolic_accuracy"] - out["test"]["symbolic_accuracy"])
    r2 = [t.r2 for layer in sm.terms for row in layer for t in row]
    out["symbolic_train_test_gap"] = gap
    out["full_minus_symbolic_test_accuracy"] = out["test"]["full_accuracy"] - out["test"]["symbolic_accuracy"]
    out["overfitting_warning"] = gap > OVERFIT_GAP
    summary = lambda v: {"min": min(v), "median": float(np.median(v)), "max": max(v)} if v else {}  # noqa: E731
    out["edge_r2"] = summary(r2)
    out["edge_r2_at_snap"] = summary(sm.snap_r2)
    out["families"] = {f: sum(t.family == f for layer in sm.terms for row in layer for t in row)
                       for f in FAMILIES if any(t.family == f for layer in sm.terms for row in layer for t in row)}
    return out


def extract(net: KanNetwork, train_u: np.ndarray, refine_epochs: int = 20, workers: int = 1) -> SymbolicModel:
    """Snap every edge over the span its inputs occupy on ``train_u``, refine
    the affine parameters, and compose the two logit formulas."""
    snaps = snap_network(net, layer_input_domains(net, train_u), workers)
    snap_r2 = [t.r2 for layer in snaps for row in layer for t in row]
    if refine_epochs > 0:
        snaps = refine_terms(net, snaps, train_u, epochs=refine_epochs)
    sm = compose_formulas(net, snaps)
    sm.snap_r2 = snap_r2
    return sm


def dumps_document(sm: SymbolicModel) -> str:
    return json.dumps(sm.to_document(), indent=1, sort_keys=True) + "\n"
