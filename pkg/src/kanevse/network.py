"""Kolmogorov-Arnold network layers with spline edge activations.

Each edge carries ``phi(x) = w_base * silu(x) + w_spline * sum_i c_i B_i(clamp(x))``
and each node sums its incoming edges; there are no node biases. Parameters of a
layer are stored as dense arrays (``coeffs`` is ``out x in x num_basis``) so the
batched forward/backward passes are plain ``einsum`` calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spline import SplineGrid, basis_derivative, basis_eval, make_grid

FORMAT_VERSION = "kan-model/1"
INIT_COEFF_STD = 0.1


class NetworkError(ValueError):
    pass


class DimensionMismatch(NetworkError):
    pass


class ModelFormatError(NetworkError):
    pass


def silu(x):
    x = np.asarray(x, dtype=float)
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    x = np.asarray(x, dtype=float)
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


@dataclass
class EdgeActivation:
    coeffs: np.ndarray
    w_spline: float
    w_base: float
    grid_ref: int = 0


def edge_eval(edge: EdgeActivation, grid: SplineGrid, x):
    spline = basis_eval(grid, x) @ np.asarray(edge.coeffs, dtype=float)
    return edge.w_base * silu(x) + edge.w_spline * spline


@dataclass
class KanLayer:
    grid: SplineGrid
    coeffs: np.ndarray
    w_spline: np.ndarray
    w_base: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.w_spline = np.asarray(self.w_spline, dtype=float)
        self.w_base = np.asarray(self.w_base, dtype=float)
        out_dim, in_dim = self.w_spline.shape
        if self.w_base.shape != (out_dim, in_dim):
            raise DimensionMismatch(f"w_base shape {self.w_base.shape} != {(out_dim, in_dim)}")
        if self.coeffs.shape != (out_dim, in_dim, self.grid.num_basis):
            raise DimensionMismatch(
                f"coeffs shape {self.coeffs.shape} != {(out_dim, in_dim, self.grid.num_basis)}"
            )

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, grid: SplineGrid) -> "KanLayer":
        return cls(
            grid,
            np.zeros((out_dim, in_dim, grid.num_basis)),
            np.zeros((out_dim, in_dim)),
            np.zeros((out_dim, in_dim)),
        )

    @property
    def in_dim(self) -> int:
        return self.w_spline.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_spline.shape[0]

    def edge(self, j: int, i: int) -> EdgeActivation:
        """Edge from input ``i`` to output ``j`` (a copy, not a view)."""
        return EdgeActivation(self.coeffs[j, i].copy(), float(self.w_spline[j, i]), float(self.w_base[j, i]))

    def set_edge(self, j: int, i: int, edge: EdgeActivation) -> None:
        coeffs = np.asarray(edge.coeffs, dtype=float)
        if coeffs.shape != (self.grid.num_basis,):
            raise DimensionMismatch(f"edge has {coeffs.size} coefficients, grid needs {self.grid.num_basis}")
        self.coeffs[j, i] = coeffs
        self.w_spline[j, i] = edge.w_spline
        self.w_base[j, i] = edge.w_base

    def params(self):
        return [self.coeffs, self.w_spline, self.w_base]

    def copy(self) -> "KanLayer":
        return KanLayer(self.grid, self.coeffs.copy(), self.w_spline.copy(), self.w_base.copy())

    def forward(self, x: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
        """Batched forward: ``x`` is ``(N, in_dim)``, returns ``(N, out_dim)``."""
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionMismatch(f"layer expects (N, {self.in_dim}) input, got {x.shape}")
        base = silu(x)
        bases = basis_eval(self.grid, x)
        spline = np.einsum("nib,oib->noi", bases, self.coeffs)
        y = base @ self.w_base.T + np.einsum("noi,oi->no", spline, self.w_spline)
        if cache is not None:
            cache.update(x=x, base=base, bases=bases, spline=spline)
        return y

    def backward(self, cache: dict, dy: np.ndarray):
        """Returns ``(dx, [d_coeffs, d_w_spline, d_w_base])`` for upstream ``dy``."""
        x, bases, spline = cache["x"], cache["bases"], cache["spline"]
        d_w_base = dy.T @ cache["base"]
        d_w_spline = np.einsum("no,noi->oi", dy, spline)
        d_coeffs = np.einsum("no,nib->oib", dy, bases) * self.w_spline[..., None]

        inside = (x >= self.grid.lo) & (x <= self.grid.hi)
        if self.grid.degree >= 1:
            dbases = basis_derivative(self.grid, x) * inside[..., None]
            dspline = np.einsum("nib,oib->noi", dbases, self.coeffs)
        else:
            dspline = np.zeros_like(spline)
        dx = silu_grad(x) * (dy @ self.w_base)
        dx = dx + np.einsum("no,oi,noi->ni", dy, self.w_spline, dspline)
        return dx, [d_coeffs, d_w_spline, d_w_base]


@dataclass
class KanNetwork:
    layers: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise NetworkError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def widths(self) -> list:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params()]

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "KanNetwork":
        return KanNetwork([layer.copy() for layer in self.layers], json.loads(json.dumps(self.metadata)))

    def forward(self, x: np.ndarray, caches: Optional[list] = None) -> np.ndarray:
        """Batched forward over ``(N, widths[0])`` inputs."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise DimensionMismatch(f"network expects (N, {self.widths[0]}) input, got {x.shape}")
        for layer in self.layers:
            cache = {} if caches is not None else None
            x = layer.forward(x, cache)
            if caches is not None:
                caches.append(cache)
        return x

    def backward(self, caches: list, upstream: np.ndarray) -> list:
        """Gradients (same layout as :meth:`params`) of ``sum(upstream * logits)``."""
        grads = []
        dy = np.asarray(upstream, dtype=float)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(cache, dy)
            grads = g + grads
        return grads


def layer_forward(layer: KanLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (layer.in_dim,):
        raise DimensionMismatch(f"expected {layer.in_dim} inputs, got shape {x.shape}")
    return layer.forward(x[None, :])[0]


def network_forward(net: KanNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.widths[0],):
        raise DimensionMismatch(f"expected {net.widths[0]} inputs, got shape {x.shape}")
    return net.forward(x[None, :])[0]


def decide(logit_normal, logit_attack):
    """Attack (1) strictly when the second logit exceeds the first; ties are normal."""
    return (np.asarray(logit_attack) > np.asarray(logit_normal)).astype(np.int64)


def classify(net: KanNetwork, x) -> int:
    logits = network_forward(net, x)
    return int(decide(logits[0], logits[1]))


def classify_batch(net: KanNetwork, x) -> np.ndarray:
    logits = net.forward(np.asarray(x, dtype=float))
    return decide(logits[:, 0], logits[:, 1])


def backward(net: KanNetwork, x, upstream) -> list:
    """Single-sample gradient set: one ``[d_coeffs, d_w_spline, d_w_base]`` triple per layer."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.widths[0],):
        raise DimensionMismatch(f"expected {net.widths[0]} inputs, got shape {x.shape}")
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (net.widths[-1],):
        raise DimensionMismatch(f"upstream must have {net.widths[-1]} entries")
    caches: list = []
    net.forward(x[None, :], caches)
    flat = net.backward(caches, upstream[None, :])
    return [flat[i : i + 3] for i in range(0, len(flat), 3)]


def init_network(
    widths,
    degree: int = 3,
    num_intervals: int = 3,
    seed: int = 0,
    lo: float = -1.0,
    hi: float = 1.0,
    base_weight: float = 1.0,
) -> KanNetwork:
    """Seeded network: coefficients ~ N(0, 0.1), unit spline scale, ``base_weight`` residual scale."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise NetworkError(f"invalid widths {widths}")
    grid = make_grid(degree, num_intervals, lo, hi)
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(widths, widths[1:]):
        layers.append(
            KanLayer(
                grid,
                rng.normal(0.0, INIT_COEFF_STD, size=(n_out, n_in, grid.num_basis)),
                np.ones((n_out, n_in)),
                np.full((n_out, n_in), float(base_weight)),
            )
        )
    meta = {"seed": int(seed), "degree": grid.degree, "num_intervals": grid.num_intervals,
            "grid_range": [grid.lo, grid.hi]}
    return KanNetwork(layers, meta)


def save_model(net: KanNetwork) -> bytes:
    """Serialise to the ``.kan`` text container.

    JSON with a version tag; edge parameters are listed per layer in row-major
    order (output index, then input index). Floats use Python's shortest
    round-trip repr, so a load reproduces every bit.
    """
    grid = net.layers[0].grid
    doc = {
        "format": FORMAT_VERSION,
        "widths": net.widths,
        "grid": {"degree": grid.degree, "num_intervals": grid.num_intervals, "lo": grid.lo, "hi": grid.hi},
        "metadata": net.metadata,
        "layers": [
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "edges": [
                    {
                        "coeffs": layer.coeffs[j, i].tolist(),
                        "w_spline": float(layer.w_spline[j, i]),
                        "w_base": float(layer.w_base[j, i]),
                    }
                    for j in range(layer.out_dim)
                    for i in range(layer.in_dim)
                ],
            }
            for layer in net.layers
        ],
    }
    return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode("utf-8")


def load_model(data: bytes) -> KanNetwork:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model stream: {exc}") from None
    if not isinstance(doc, dict) or "format" not in doc:
        raise ModelFormatError("corrupt model stream: missing format tag")
    if doc["format"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc['format']!r}, expected {FORMAT_VERSION!r}")
    try:
        g = doc["grid"]
        grid = make_grid(g["degree"], g["num_intervals"], g["lo"], g["hi"])
        widths = [int(w) for w in doc["widths"]]
        layers = []
        for spec, n_in, n_out in zip(doc["layers"], widths, widths[1:]):
            if (spec["in_dim"], spec["out_dim"]) != (n_in, n_out) or len(spec["edges"]) != n_in * n_out:
                raise DimensionMismatch("layer dimensions disagree with widths")
            layer = KanLayer.zeros(n_in, n_out, grid)
            for idx, e in enumerate(spec["edges"]):
                j, i = divmod(idx, n_in)
                layer.set_edge(j, i, EdgeActivation(np.array(e["coeffs"], dtype=float), e["w_spline"], e["w_base"]))
            layers.append(layer)
        if len(layers) != len(widths) - 1:
            raise DimensionMismatch("layer count disagrees with widths")
        return KanNetwork(layers, doc.get("metadata", {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, NetworkError):
            raise
        raise ModelFormatError(f"corrupt model stream: {exc}") from None
