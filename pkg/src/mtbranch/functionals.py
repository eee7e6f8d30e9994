"""Closed registry of path functionals evaluated identically on both simulators.

A functional sees the population up to ``t`` and one distinguished lineage:
an individual ``x`` alive at ``t`` on the forward side, the trunk on the
biased side.  Names and parameters parse from ``name[:p1[,p2]]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BranchingModel

# name -> (parameter count, needs the whole biased tree, not just the trunk)
REGISTRY = {
    "constant_one": (0, False),
    "terminal_type": (1, False),
    "flip_count_le": (1, False),
    "occupation_ge": (2, False),
    "population_size": (0, True),
}


@dataclass(frozen=True)
class LineageView:
    """What the functionals may read about lineages alive at ``t``.

    Arrays are indexed by lineage; ``size`` is the population size at ``t``.
    """

    types: np.ndarray
    flips: np.ndarray
    occupation: np.ndarray
    size: int


@dataclass(frozen=True)
class PathFunctional:
    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in REGISTRY:
            raise ValueError(f"unknown functional {self.name!r}; known: {', '.join(REGISTRY)}")
        if len(self.params) != REGISTRY[self.name][0]:
            raise ValueError(f"{self.name} takes {REGISTRY[self.name][0]} parameter(s), got {len(self.params)}")

    @property
    def needs_tree(self) -> bool:
        return REGISTRY[self.name][1]

    @property
    def label(self) -> str:
        return self.name + (":" + ",".join(str(p) for p in self.params) if self.params else "")

    def describe(self, names=None) -> str:
        """Label with type parameters shown by name."""
        if names is None or not self.params:
            return self.label
        params = list(self.params)
        if self.name in ("terminal_type", "occupation_ge"):
            params[0] = names[params[0]]
        return self.name + ":" + ",".join(str(p) for p in params)

    def __call__(self, view: LineageView) -> np.ndarray:
        """Value for each lineage in ``view``."""
        n = len(view.types)
        if self.name == "constant_one":
            return np.ones(n)
        if self.name == "terminal_type":
            return (view.types == self.params[0]).astype(float)
        if self.name == "flip_count_le":
            return (view.flips <= self.params[0]).astype(float)
        if self.name == "occupation_ge":
            j, theta = self.params
            return (view.occupation[:, j] >= theta).astype(float)
        return np.full(n, float(view.size))


def parse_functional(text: str, model: BranchingModel | None = None) -> PathFunctional:
    """Parse ``name[:params]``; type parameters are names or 0-based indices.

    >>> parse_functional("occupation_ge:0,0.5")
    PathFunctional(name='occupation_ge', params=(0, 0.5))
    """
    name, _, rest = text.strip().partition(":")
    raw = [p.strip() for p in rest.split(",")] if rest else []
    resolve = model.type_index if model is not None else int
    if name == "terminal_type" and raw:
        params = (resolve(raw[0]),)
    elif name == "flip_count_le" and raw:
        params = (int(raw[0]),)
    elif name == "occupation_ge" and len(raw) == 2:
        params = (resolve(raw[0]), float(raw[1]))
    else:
        params = tuple(raw)
    return PathFunctional(name, params)


def forward_view(tree, t) -> LineageView:
    """Lineages of ``X(t)`` in a forward or biased tree."""
    pop = tree.population_at(t)
    types = tree.types[pop]
    if t > 0:
        occ = tree.occupations(pop, t)
    else:
        occ = np.eye(tree.num_types)[types]
    return LineageView(types=types, flips=tree.flip_counts(pop), occupation=occ, size=len(pop))


def trunk_view(path, size=0) -> LineageView:
    """The single trunk lineage of ``path`` (already restricted to ``[0, t]``)."""
    S = path.num_types
    occ = path.occupation() if path.total > 0 else np.eye(S)[path.terminal_type()]
    return LineageView(types=np.array([path.terminal_type()]), flips=np.array([path.flips()]),
                       occupation=occ[None, :], size=int(size))
