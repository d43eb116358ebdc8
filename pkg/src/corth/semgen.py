"""Random structural equation models with mixed linear / tanh edges.

A DAG is drawn by picking a random topological order and adding each
forward edge independently with probability ``sparsity``. Every edge is
nonlinear with probability ``nonlinear_prob``, and its kind is fixed for
the whole graph. Nodes are then sampled in order:

    X' = eps + sum_{linear parents} theta * X + sum_{nonlinear parents} alpha * tanh(beta * X)

with ``eps ~ N(0, noise_var)``. The response is the last node in the
topological order, so it has no descendants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from corth._seeding import rng_for
from corth.orthosearch import Dataset

EdgeKind = Literal["linear", "nonlinear"]

_STRUCTURE_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: EdgeKind
    weight: float


@dataclass(frozen=True)
class DagSpec:
    d: int
    order: tuple[int, ...]
    edges: tuple[Edge, ...]
    target: int

    def __post_init__(self):
        if sorted(self.order) != list(range(self.d)):
            raise ValueError("order must be a permutation of range(d)")
        pos = {v: k for k, v in enumerate(self.order)}
        for e in self.edges:
            if not pos[e.src] < pos[e.dst]:
                raise ValueError(f"edge {e.src}->{e.dst} runs against the topological order")
        if not 0 <= self.target < self.d:
            raise ValueError(f"target {self.target} out of range")

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.d, self.d), dtype=bool)
        for e in self.edges:
            A[e.src, e.dst] = True
        return A

    def parents(self, node: int) -> list[Edge]:
        return [e for e in self.edges if e.dst == node]

    @property
    def covariate_nodes(self) -> list[int]:
        return [v for v in range(self.d) if v != self.target]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "order": list(self.order),
            "target": self.target,
            "edges": [
                {"src": e.src, "dst": e.dst, "kind": e.kind, "weight": e.weight} for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DagSpec":
        edges = tuple(Edge(int(e["src"]), int(e["dst"]), e["kind"], float(e["weight"])) for e in obj["edges"])
        return cls(int(obj["d"]), tuple(int(v) for v in obj["order"]), edges, int(obj["target"]))


@dataclass(frozen=True)
class GenConfig:
    """Simulation settings; ``theta_gen=None`` means 2 for d <= 10, else 0.5."""

    d: int
    sparsity: float
    nonlinear_prob: float
    noise_var: float
    n_obs: int
    alpha: float = 0.5
    beta: float = 1.5
    theta_gen: float | None = None
    seed: int = 0
    target: int | None = None
    force_linear_target: bool = False

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"need at least 2 nodes, got {self.d}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must be in [0, 1], got {self.sparsity}")
        if not 0.0 <= self.nonlinear_prob <= 1.0:
            raise ValueError(f"nonlinear_prob must be in [0, 1], got {self.nonlinear_prob}")
        if not self.noise_var > 0:
            raise ValueError(f"noise_var must be positive, got {self.noise_var}")
        if self.n_obs < 1:
            raise ValueError(f"n_obs must be positive, got {self.n_obs}")
        if self.target is not None and not 0 <= self.target < self.d:
            raise ValueError(f"target {self.target} out of range")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def theta(self) -> float:
        if self.theta_gen is not None:
            return self.theta_gen
        return 2.0 if self.d <= 10 else 0.5


@dataclass(frozen=True)
class SimulatedDataset:
    dataset: Dataset
    dag: DagSpec
    true_parents: np.ndarray

    @property
    def parent_names(self) -> list[str]:
        return [n for n, t in zip(self.dataset.column_names, self.true_parents) if t]


def sample_dag(cfg: GenConfig) -> DagSpec:
    rng = rng_for(cfg.seed, _STRUCTURE_STREAM)
    d = cfg.d
    order = rng.permutation(d)
    # one uniform per ordered position pair, drawn for the whole matrix so the
    # stream layout does not depend on the parameters
    u_edge = rng.random((d, d))
    u_kind = rng.random((d, d))
    target = int(order[-1]) if cfg.target is None else cfg.target
    edges = []
    for a in range(d):
        for b in range(a + 1, d):
            if u_edge[a, b] < cfg.sparsity:
                src, dst = int(order[a]), int(order[b])
                nonlinear = u_kind[a, b] < cfg.nonlinear_prob
                if cfg.force_linear_target and dst == target:
                    nonlinear = False
                if nonlinear:
                    edges.append(Edge(src, dst, "nonlinear", cfg.alpha))
                else:
                    edges.append(Edge(src, dst, "linear", cfg.theta))
    return DagSpec(d, tuple(int(v) for v in order), tuple(edges), target)


def true_parents(dag: DagSpec) -> np.ndarray:
    """Boolean mask over covariate nodes (node order, target removed)."""
    direct = {e.src for e in dag.edges if e.dst == dag.target}
    return np.array([v in direct for v in dag.covariate_nodes], dtype=bool)


def node_name(v: int) -> str:
    return f"X{v}"


def sample_data(dag: DagSpec, cfg: GenConfig) -> SimulatedDataset:
    if dag.d != cfg.d:
        raise ValueError(f"dag has {dag.d} nodes, config says {cfg.d}")
    n = cfg.n_obs
    sd = float(np.sqrt(cfg.noise_var))
    values = np.zeros((n, dag.d))
    incoming: dict[int, list[Edge]] = {v: [] for v in range(dag.d)}
    for e in dag.edges:
        incoming[e.dst].append(e)
    for v in dag.order:
        x = sd * rng_for(cfg.seed, _NOISE_STREAM, v).standard_normal(n)
        for e in incoming[v]:
            if e.kind == "linear":
                x += e.weight * values[:, e.src]
            else:
                x += e.weight * np.tanh(cfg.beta * values[:, e.src])
        values[:, v] = x
    cols = dag.covariate_nodes
    data = Dataset(values[:, cols], values[:, dag.target], tuple(node_name(v) for v in cols), "Y")
    return SimulatedDataset(data, dag, true_parents(dag))


def simulate(cfg: GenConfig) -> SimulatedDataset:
    return sample_data(sample_dag(cfg), cfg)
