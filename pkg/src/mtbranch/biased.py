"""Size-biased tree with trunk, and direct simulation of Markov type chains.

A trunk individual of type ``i`` lives an exponential time with rate
``a_i (M g)_i / g_i`` and has offspring ``k`` with probability
``<k, g> p_i(k) / (M g)_i`` for a positive weight vector ``g``; its successor
is a child of type ``j`` picked with weight ``g_j``.  ``g = h`` gives the
h-biased tree (rate ``a_i + lam``), ``g = 1`` the uniform-selection variant
(rate ``a_i m_i``).  Off-trunk children grow ordinary unbiased trees.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .forward import (BOUNDARY, DEFAULT_CAP, SPLIT, FamilyTree, OffspringTable, _assemble, _grow,
                      _Records)
from .model import BranchingModel, check_model
from .rng import Draws
from .spectral import SpectralData, weighted_law

VARIANTS = ("h", "uniform")


@dataclass(frozen=True)
class TrunkPath:
    """Piecewise-constant type path: ``types[k]`` held for ``sojourns[k]``.

    Trunk paths keep one segment per trunk individual, so neighbouring
    segments may share a type; :meth:`coalesce` merges them.
    """

    types: tuple
    sojourns: tuple
    total: float
    num_types: int

    def __len__(self):
        return len(self.types)

    def coalesce(self) -> "TrunkPath":
        types, soj = [], []
        for ty, s in zip(self.types, self.sojourns):
            if types and types[-1] == ty:
                soj[-1] += s
            else:
                types.append(ty)
                soj.append(s)
        return TrunkPath(tuple(types), tuple(soj), self.total, self.num_types)

    def upto(self, t: float) -> "TrunkPath":
        """Restriction to ``[0, t]``."""
        if t > self.total + 1e-12:
            raise ValueError(f"path only extends to {self.total}")
        types, soj = [], []
        start = 0.0
        for ty, s in zip(self.types, self.sojourns):
            if start >= t and types:
                break
            types.append(ty)
            soj.append(min(s, t - start))
            start += s
        return TrunkPath(tuple(types), tuple(soj), float(t), self.num_types)

    def occupation(self) -> np.ndarray:
        if self.total <= 0:
            raise ValueError("occupation of a zero-length path")
        occ = np.zeros(self.num_types)
        np.add.at(occ, np.asarray(self.types, dtype=np.int64), np.asarray(self.sojourns))
        return occ / self.total

    def flips(self) -> int:
        return sum(1 for a, b in zip(self.types, self.types[1:]) if a != b)

    def terminal_type(self) -> int:
        return int(self.types[-1])

    def segment_statistics(self, censor_last=True):
        """Per-type holding time, completed segments and jump counts.

        The final segment is cut by the horizon, so it adds holding time but
        no completed segment or jump.
        """
        S = self.num_types
        holding = np.zeros(S)
        exits = np.zeros(S)
        trans = np.zeros((S, S))
        n = len(self.types)
        for k, (ty, s) in enumerate(zip(self.types, self.sojourns)):
            holding[ty] += s
            if k < n - 1 or not censor_last:
                exits[ty] += 1
            if k < n - 1:
                trans[ty, self.types[k + 1]] += 1
        return holding, exits, trans


def trunk_occupation(path: TrunkPath) -> np.ndarray:
    """Fraction of time the path spends in each type."""
    return path.occupation()


def trunk_weights(spec: SpectralData, variant="h", weights=None) -> np.ndarray:
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("trunk weights must be positive")
        return w
    if variant == "h":
        return np.asarray(spec.h, dtype=float)
    if variant == "uniform":
        return np.ones(len(spec.h))
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


class TrunkLaw:
    """Trunk lifetimes, biased offspring laws and successor weights for weights ``g``."""

    def __init__(self, model: BranchingModel, spec: SpectralData, variant="h", weights=None):
        check_model(model)
        g = trunk_weights(spec, variant, weights)
        M = spec.means.M
        Mg = M @ g
        self.weights = g
        self.rates = model.split_rates * Mg / g
        self.laws = tuple(weighted_law(law, g, Mg[i]) for i, law in enumerate(model.offspring))
        self.table = OffspringTable(self.laws, self.rates)
        self.num_types = model.num_types
        self._rates = self.rates.tolist()
        self._g = g.tolist()
        self._counts = [c.tolist() for c in self.table.counts]

    def split(self, ty, draws: Draws):
        """Offspring vector and the successor ``(type, index among that type)``."""
        cum = self.table.cum_lists[ty]
        atom = min(bisect_right(cum, draws.uniform()), len(cum) - 1)
        kappa = self._counts[ty][atom]
        wts = [k * g for k, g in zip(kappa, self._g)]
        target = draws.uniform() * sum(wts)
        acc = 0.0
        succ = None
        for j, w in enumerate(wts):
            if w <= 0:
                continue
            acc += w
            succ = j
            if target < acc:
                break
        # the biased law carries no atom with zero weighted size
        assert succ is not None and kappa[succ] > 0, "successor drawn from an empty offspring class"
        ell = min(int(draws.uniform() * kappa[succ]), kappa[succ] - 1)
        return kappa, succ, ell


def trunk_law(model: BranchingModel, spec: SpectralData, variant="h", weights=None) -> TrunkLaw:
    """:class:`TrunkLaw` for a named variant, cached on the model."""
    if weights is not None:
        return TrunkLaw(model, spec, variant, weights)
    cache = getattr(model, "_trunk_laws", None)
    if cache is None:
        cache = {}
        object.__setattr__(model, "_trunk_laws", cache)
    if variant not in cache:
        cache[variant] = TrunkLaw(model, spec, variant)
    return cache[variant]


def simulate_trunk(model: BranchingModel, spec: SpectralData, root_type: int, horizon: float,
                   rng: np.random.Generator, variant="h", weights=None) -> TrunkPath:
    """Trunk of the size-biased tree, without the bushes.

    Each trunk split realizes a biased offspring vector and selects the
    successor among the children, exactly as in the full construction.
    """
    law = trunk_law(model, spec, variant, weights)
    return _trunk_path(law, int(root_type), float(horizon), Draws(rng))


def _trunk_path(law: TrunkLaw, root_type, horizon, draws):
    types, soj = [], []
    t = 0.0
    ty = root_type
    if horizon <= 0:
        return TrunkPath((), (), 0.0, law.num_types)
    rates = law._rates
    while True:
        tau = draws.exponential() / rates[ty]
        if t + tau > horizon:
            types.append(ty)
            soj.append(horizon - t)
            break
        _, succ, _ = law.split(ty, draws)
        types.append(ty)
        soj.append(tau)
        t += tau
        ty = succ
    return TrunkPath(tuple(types), tuple(soj), horizon, law.num_types)


@dataclass(frozen=True)
class BiasedTree:
    tree: FamilyTree
    trunk_ids: np.ndarray
    variant: str

    def trunk_path(self) -> TrunkPath:
        tr = self.tree
        ids = self.trunk_ids
        return TrunkPath(tuple(int(x) for x in tr.types[ids]),
                         tuple(float(x) for x in tr.end[ids] - tr.birth[ids]),
                         float(tr.end[ids[-1]]) if len(ids) else 0.0, tr.num_types)

    def trunk_at(self, t) -> int:
        """Id of the trunk individual alive at ``t``."""
        tr = self.tree
        ids = self.trunk_ids
        k = int(np.searchsorted(tr.birth[ids], t, side="right")) - 1
        return int(ids[max(k, 0)])


def simulate_biased_tree(model: BranchingModel, spec: SpectralData, variant="h", root_type=0,
                         horizon=1.0, cap=DEFAULT_CAP, rng=None, weights=None) -> BiasedTree:
    """Size-biased tree with trunk up to ``horizon``.

    Trunk individuals use the biased lifetimes and offspring laws; every other
    child starts an unbiased bush simulated as in :func:`forward.simulate`.
    Bushes share the cap with the trunk.
    """
    rng = np.random.default_rng() if rng is None else rng
    law = trunk_law(model, spec, variant, weights)
    draws = Draws(rng)
    rec = _Records()
    trunk = []
    bush = {k: [] for k in ("ids", "parent", "types", "birth", "gen")}
    cur, ty, t, gen, parent = 0, int(root_type), 0.0, 0, -1
    next_id = 1
    while True:
        trunk.append(cur)
        tau = draws.exponential() / law._rates[ty] if horizon > 0 else np.inf
        if t + tau > horizon:
            rec.add(ids=[cur], parent=[parent], types=[ty], birth=[t], end=[horizon], fate=[BOUNDARY], gen=[gen])
            break
        end = t + tau
        kappa, succ, ell = law.split(ty, draws)
        rec.add(ids=[cur], parent=[parent], types=[ty], birth=[t], end=[end], fate=[SPLIT], gen=[gen])
        nxt = None
        for j, kj in enumerate(kappa):
            for l in range(kj):
                if j == succ and l == ell:
                    nxt = next_id
                else:
                    for key, val in zip(("ids", "parent", "types", "birth", "gen"), (next_id, cur, j, end, gen + 1)):
                        bush[key].append(val)
                next_id += 1
        parent, cur, ty, t, gen = cur, nxt, succ, end, gen + 1
    frontier = {k: np.array(v, dtype=float if k == "birth" else np.int64) for k, v in bush.items()}
    breach, _ = _grow(OffspringTable.forward(model), frontier, horizon, cap, rng, next_id, rec)
    tree, trunk_ids = _assemble(rec, model.num_types, root_type, horizon, breach, trunk=trunk)
    return BiasedTree(tree=tree, trunk_ids=trunk_ids, variant=variant if weights is None else "custom")


def simulate_mutation_chain(G, start: int, horizon: float, rng: np.random.Generator) -> TrunkPath:
    """Continuous-time Markov chain with generator ``G`` on ``[0, horizon]``.

    Exit rate ``-g_ii``, jump law ``g_ij / -g_ii`` over ``j != i``.  A state
    with exit rate zero is held to the horizon.
    """
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    exit_rates = (-np.diag(G)).tolist()
    cums = []
    for i in range(n):
        row = np.where(np.arange(n) == i, 0.0, np.maximum(G[i], 0.0))
        tot = row.sum()
        cums.append((np.cumsum(row) / tot).tolist() if tot > 0 else None)
    draws = Draws(rng)
    types, soj = [], []
    t, i = 0.0, int(start)
    if horizon <= 0:
        return TrunkPath((), (), 0.0, n)
    while True:
        rate = exit_rates[i]
        tau = draws.exponential() / rate if rate > 0 else np.inf
        if t + tau > horizon:
            types.append(i)
            soj.append(horizon - t)
            break
        types.append(i)
        soj.append(tau)
        t += tau
        i = min(bisect_right(cums[i], draws.uniform()), n - 1)
    return TrunkPath(tuple(types), tuple(soj), float(horizon), n)
