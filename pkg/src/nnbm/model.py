"""NNBM models, datasets and their sample moments, plus file I/O.

Vertices are 0-based in memory and 1-based in every file format.
"""

from dataclasses import dataclass, field
import json
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DomainError

PRNG_NAME = "numpy.random.PCG64"


@dataclass(frozen=True)
class Topology:
    n: int
    edges: tuple  # tuple of (i, j) with i < j, 0-based

    def __post_init__(self):
        if int(self.n) < 1:
            raise DomainError("topology needs n >= 1")
        norm = []
        seen = set()
        for e in self.edges:
            i, j = (int(e[0]), int(e[1]))
            if i == j:
                raise DomainError(f"self-loop at vertex {i + 1}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise DomainError(f"edge ({i + 1}, {j + 1}) out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DomainError(f"duplicate edge ({key[0] + 1}, {key[1] + 1})")
            seen.add(key)
            norm.append(key)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "edges", tuple(norm))

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def edge_array(self):
        if not self.edges:
            return np.zeros((0, 2), dtype=int)
        return np.asarray(self.edges, dtype=int)

    def neighbors(self, i):
        """The adjacency set of vertex ``i``."""
        return self._adjacency[i]

    @property
    def _adjacency(self):
        adj = self.__dict__.get("_adj")
        if adj is None:
            adj = [[] for _ in range(self.n)]
            for i, j in self.edges:
                adj[i].append(j)
                adj[j].append(i)
            adj = tuple(tuple(sorted(a)) for a in adj)
            object.__setattr__(self, "_adj", adj)
        return adj

    def edge_index(self):
        """Map from ordered pair (i, j) with i < j to its position in ``edges``."""
        return {e: k for k, e in enumerate(self.edges)}


@dataclass(frozen=True, eq=False)
class NnbmModel:
    topology: Topology
    b: np.ndarray
    w_diag: np.ndarray
    w_edge: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.topology.n
        b = np.array(self.b, dtype=float).reshape(-1)
        wd = np.array(self.w_diag, dtype=float).reshape(-1)
        we = np.array(self.w_edge, dtype=float).reshape(-1)
        if b.shape != (n,) or wd.shape != (n,):
            raise DomainError("b and w_diag must have length n")
        if we.shape != (self.topology.n_edges,):
            raise DomainError("w_edge must have one value per edge")
        for arr in (b, wd, we):
            arr.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w_diag", wd)
        object.__setattr__(self, "w_edge", we)

    @property
    def n(self):
        return self.topology.n

    def cached(self, key, factory):
        """Memoise derived structures; safe because models are immutable."""
        cache = self.__dict__.setdefault("_cache", {})
        if key not in cache:
            cache[key] = factory()
        return cache[key]

    def coupling_matrix(self):
        """Dense symmetric off-diagonal coupling matrix (zero diagonal)."""
        w = np.zeros((self.n, self.n))
        ea = self.topology.edge_array
        if len(ea):
            w[ea[:, 0], ea[:, 1]] = self.w_edge
            w[ea[:, 1], ea[:, 0]] = self.w_edge
        return w

    def full_matrix(self):
        return self.coupling_matrix() + np.diag(self.w_diag)

    def sparse_couplings(self):
        """CSR off-diagonal couplings; nnz is exactly twice the edge count."""
        ea = self.topology.edge_array
        rows = np.concatenate([ea[:, 0], ea[:, 1]]) if len(ea) else np.zeros(0, int)
        cols = np.concatenate([ea[:, 1], ea[:, 0]]) if len(ea) else np.zeros(0, int)
        vals = np.concatenate([self.w_edge, self.w_edge])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def with_params(self, b=None, w_diag=None, w_edge=None, meta=None):
        return NnbmModel(
            self.topology,
            self.b if b is None else b,
            self.w_diag if w_diag is None else w_diag,
            self.w_edge if w_edge is None else w_edge,
            dict(self.meta) if meta is None else meta,
        )

    def permuted(self, perm):
        """Relabel vertices: new vertex ``k`` is old vertex ``perm[k]``."""
        perm = np.asarray(perm, dtype=int)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        edges = [(inv[i], inv[j]) for i, j in self.topology.edges]
        topo = Topology(self.n, edges)
        idx = topo.edge_index()
        w_edge = np.empty(topo.n_edges)
        for (i, j), w in zip(edges, self.w_edge):
            w_edge[idx[(min(i, j), max(i, j))]] = w
        return NnbmModel(topo, self.b[perm], self.w_diag[perm], w_edge, dict(self.meta))


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DomainError("dataset must be an N x n matrix with N >= 1")
        if not np.all(np.isfinite(x)) or np.any(x < 0):
            raise DomainError("dataset entries must be finite and nonnegative")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def width(self):
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class MomentStats:
    mean1: np.ndarray
    mean2_diag: np.ndarray
    mean2_edge: np.ndarray

    def edge_dict(self, topology):
        """Per-edge cross moments keyed by 1-based vertex pairs."""
        return {(i + 1, j + 1): float(v) for (i, j), v in zip(topology.edges, self.mean2_edge)}


# --------------------------------------------------------------------------
# Operations


def energy(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise DomainError(f"x must have length {model.n}")
    if np.any(x < 0):
        raise DomainError("x must be nonnegative")
    e = -model.b @ x + 0.5 * model.w_diag @ (x * x)
    ea = model.topology.edge_array
    if len(ea):
        e += np.sum(model.w_edge * x[ea[:, 0]] * x[ea[:, 1]])
    return float(e)


@dataclass
class Finding:
    level: str  # "error" or "warning"
    message: str


PSD_FLOOR = -1e-10


def validate(model):
    """Check a model and return a list of findings (never raises).

    Co-positivity is only probed through two sufficient conditions; a model
    failing both gets a warning, not an error.
    """
    out = []
    if not np.all(np.isfinite(model.b)) or not np.all(np.isfinite(model.w_edge)):
        out.append(Finding("error", "non-finite parameters"))
    bad = np.flatnonzero(~(model.w_diag > 0))
    for i in bad:
        out.append(Finding("error", f"w_diag[{i + 1}] = {model.w_diag[i]} is not > 0"))
    if out:
        return out
    w = model.full_matrix()
    nonneg = bool(np.all(w >= 0))
    psd = bool(np.linalg.eigvalsh(w).min() >= PSD_FLOOR)
    if not (nonneg or psd):
        out.append(
            Finding(
                "warning",
                "couplings are neither entrywise nonnegative nor positive "
                "semidefinite; co-positivity not established",
            )
        )
    return out


def hard_failures(findings):
    return [f for f in findings if f.level == "error"]


def grid_topology(rows, cols):
    if rows < 1 or cols < 1:
        raise DomainError("rows and cols must be >= 1")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return Topology(rows * cols, edges)


def build_square_grid(rows, cols, b_low, b_high, w_diag, w_edge, seed):
    """Open-boundary grid with uniform random biases on ``[b_low, b_high)``."""
    if b_low > b_high:
        raise DomainError("b_low must not exceed b_high")
    topo = grid_topology(rows, cols)
    rng = np.random.Generator(np.random.PCG64(seed))
    b = rng.uniform(b_low, b_high, size=topo.n)
    meta = {
        "generator": "square-grid",
        "rows": rows,
        "cols": cols,
        "b_low": b_low,
        "b_high": b_high,
        "w_diag": w_diag,
        "w_edge": w_edge,
        "seed": seed,
        "prng": PRNG_NAME,
    }
    return NnbmModel(
        topo,
        b,
        np.full(topo.n, float(w_diag)),
        np.full(topo.n_edges, float(w_edge)),
        meta,
    )


def build_orientation_tuning(n, beta=10.0, eps=2.0, circular_distance=False):
    """Complete-graph ring model with cosine couplings.

    ``w_ij = beta * (delta_ij + 1/n - (eps/n) cos(2 pi |i-j| / n))``.  The
    cosine is periodic in ``|i-j|`` with period ``n``, so the circular
    distance option yields identical couplings; it is kept for explicitness.
    """
    if n < 2:
        raise DomainError("orientation model needs n >= 2")
    idx = np.arange(n)
    d = np.abs(idx[:, None] - idx[None, :])
    if circular_distance:
        d = np.minimum(d, n - d)
    w = beta * (np.eye(n) + 1.0 / n - (eps / n) * np.cos(2.0 * np.pi * d / n))
    if np.any(np.diag(w) <= 0):
        raise DomainError("orientation parameters give nonpositive w_ii")
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    topo = Topology(n, edges)
    w_edge = np.array([w[i, j] for i, j in edges])
    meta = {
        "generator": "orientation-tuning",
        "n": n,
        "beta": beta,
        "eps": eps,
        "circular_distance": bool(circular_distance),
    }
    return NnbmModel(topo, np.full(n, float(beta)), np.diag(w).copy(), w_edge, meta)


def sample_moments(data, topology):
    x = data.samples
    if x.shape[1] != topology.n:
        raise DomainError(f"dataset width {x.shape[1]} != n = {topology.n}")
    mean1 = x.mean(axis=0)
    mean2 = (x * x).mean(axis=0)
    ea = topology.edge_array
    if len(ea):
        cross = (x[:, ea[:, 0]] * x[:, ea[:, 1]]).mean(axis=0)
    else:
        cross = np.zeros(0)
    return MomentStats(mean1, mean2, cross)


# --------------------------------------------------------------------------
# Serialization


def model_to_dict(model):
    return {
        "n": model.n,
        "edges": [[i + 1, j + 1] for i, j in model.topology.edges],
        "b": [float(x) for x in model.b],
        "w_diag": [float(x) for x in model.w_diag],
        "w_edge": [float(x) for x in model.w_edge],
        "meta": model.meta,
    }


def model_from_dict(d):
    try:
        topo = Topology(int(d["n"]), [(int(i) - 1, int(j) - 1) for i, j in d["edges"]])
        return NnbmModel(topo, d["b"], d["w_diag"], d["w_edge"], dict(d.get("meta", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"malformed model document: {exc}") from exc


def save_model(model, path):
    # repr-precision floats keep the round trip bit-exact.
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


def topology_from_model_file(path):
    return load_model(path).topology


def _sidecar(path):
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_dataset(data, path):
    """Write the samples as TSV (full repr precision) plus a JSON sidecar."""
    lines = ["\t".join(repr(float(v)) for v in row) for row in data.samples]
    Path(path).write_text("\n".join(lines) + "\n")
    _sidecar(path).write_text(json.dumps(data.provenance, indent=2, sort_keys=True) + "\n")


def load_dataset(path):
    try:
        x = np.loadtxt(path, delimiter="\t", ndmin=2)
    except ValueError as exc:
        raise DomainError(f"malformed dataset file {path}: {exc}") from exc
    side = _sidecar(path)
    prov = json.loads(side.read_text()) if side.exists() else {"source": str(path)}
    return Dataset(x, prov)
