"""Forward family tree simulation and lineage/population queries.

Trees are stored as an arena of flat numpy arrays.  Individuals are grown a
generation at a time; ids are then reassigned by birth time, so ids are dense
and every child id exceeds its parent's.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model import BranchingModel, OffspringLaw, check_model

SPLIT, BOUNDARY, DEAD = 0, 1, 2
FATE_CODES = {SPLIT: "S", BOUNDARY: "B", DEAD: "D"}
DEFAULT_CAP = 10**6


class ExtinctionError(ValueError):
    """A population average was requested on an empty population."""


class CappedTreeError(ValueError):
    pass


def tv_distance(p, q) -> np.ndarray:
    """Total variation distance ``0.5 * sum |p - q|`` along the last axis."""
    return 0.5 * np.sum(np.abs(np.asarray(p) - np.asarray(q)), axis=-1)


class OffspringTable:
    """Vectorized sampler for one offspring law per type."""

    def __init__(self, laws, rates):
        self.rates = np.asarray(rates, dtype=float)
        self.num_types = len(self.rates)
        self.cum = []
        self.counts = []
        for law in laws:
            cum = np.cumsum(law.probs)
            cum[-1] = 1.0
            self.cum.append(cum)
            self.counts.append(np.asarray(law.counts, dtype=np.int64))
        # list copies for the scalar path
        self.cum_lists = [c.tolist() for c in self.cum]
        self.child_lists = [[[j for j in range(self.num_types) for _ in range(row[j])] for row in c.tolist()]
                            for c in self.counts]
        self.max_children = max(int(c.sum(axis=1).max()) for c in self.counts)

    @classmethod
    def forward(cls, model: BranchingModel) -> "OffspringTable":
        table = getattr(model, "_forward_table", None)
        if table is None:
            table = cls(model.offspring, model.split_rates)
            object.__setattr__(model, "_forward_table", table)
        return table

    def draw(self, types, rng):
        """Lifetimes and offspring count vectors for a batch of individuals."""
        k = len(types)
        life = rng.standard_exponential(k) / self.rates[types]
        u = rng.random(k)
        counts = np.zeros((k, self.num_types), dtype=np.int64)
        for i in range(self.num_types):
            mask = types == i
            if not mask.any():
                continue
            idx = np.searchsorted(self.cum[i], u[mask], side="right")
            idx = np.minimum(idx, len(self.cum[i]) - 1)
            counts[mask] = self.counts[i][idx]
        return life, counts


def _children(ids, ends, counts, num_types):
    nchild = counts.sum(axis=1)
    ctypes = np.repeat(np.tile(np.arange(num_types), len(ids)), counts.ravel())
    cparent = np.repeat(ids, nchild)
    cbirth = np.repeat(ends, nchild)
    return ctypes, cparent, cbirth


@dataclass
class _Records:
    ids: list = field(default_factory=list)
    parent: list = field(default_factory=list)
    types: list = field(default_factory=list)
    birth: list = field(default_factory=list)
    end: list = field(default_factory=list)
    fate: list = field(default_factory=list)
    gen: list = field(default_factory=list)

    def add(self, **arrays):
        for key, val in arrays.items():
            getattr(self, key).append(np.asarray(val))

    def arrays(self):
        return {k: np.concatenate(getattr(self, k)) if getattr(self, k) else np.zeros(0)
                for k in ("ids", "parent", "types", "birth", "end", "fate", "gen")}


SMALL_GENERATION = 256


def _grow_small(table, frontier, horizon, cap, rng, next_id, records, prior):
    """Scalar version of :func:`_grow` for small generations.

    Consumes the generator exactly as the vectorized path does (one batch of
    exponentials, then one batch of uniforms per generation), so both paths
    build identical trees.  Stops, returning the remaining frontier, once a
    generation is too large or the cap comes within reach.
    """
    ids, parent, types, birth, gen = (list(frontier[k]) for k in ("ids", "parent", "types", "birth", "gen"))
    total = prior + len(ids)
    rates = table.rates.tolist()
    cums, kids = table.cum_lists, table.child_lists
    out = {k: [] for k in ("ids", "parent", "types", "birth", "end", "fate", "gen")}
    while ids and len(ids) <= SMALL_GENERATION and total + len(ids) * table.max_children <= cap:
        k = len(ids)
        expo = rng.standard_exponential(k).tolist()
        unif = rng.random(k).tolist()
        nids, npar, ntyp, nbir, ngen = [], [], [], [], []
        for n in range(k):
            ty = types[n]
            end = birth[n] + expo[n] / rates[ty]
            if end > horizon:
                fate, end_rec = BOUNDARY, horizon
            else:
                end_rec = end
                cum = cums[ty]
                atom = min(bisect_right(cum, unif[n]), len(cum) - 1)
                children = kids[ty][atom]
                fate = SPLIT if children else DEAD
                for ct in children:
                    nids.append(next_id)
                    next_id += 1
                    npar.append(ids[n])
                    ntyp.append(ct)
                    nbir.append(end)
                    ngen.append(gen[n] + 1)
            out["end"].append(end_rec)
            out["fate"].append(fate)
        for key, vals in (("ids", ids), ("parent", parent), ("types", types), ("birth", birth), ("gen", gen)):
            out[key].extend(vals)
        total += len(nids)
        ids, parent, types, birth, gen = nids, npar, ntyp, nbir, ngen
    if out["ids"]:
        records.add(**{k: np.array(v, dtype=float if k in ("birth", "end") else np.int64) for k, v in out.items()})
    rest = dict(ids=np.array(ids, dtype=np.int64), parent=np.array(parent, dtype=np.int64),
                types=np.array(types, dtype=np.int64), birth=np.array(birth, dtype=float),
                gen=np.array(gen, dtype=np.int64))
    return rest, next_id


def _grow(table, frontier, horizon, cap, rng, next_id, records):
    """Grow unbiased descendant trees from ``frontier`` up to ``horizon``.

    ``frontier`` holds arrays ``ids, parent, types, birth, gen`` of
    individuals whose lifetimes have not been drawn.  Returns the cap-breach
    time (``None`` if the cap was never exceeded) and the next free id.
    """
    S = table.num_types
    prior = sum(len(b) for b in records.birth)
    frontier, next_id = _grow_small(table, frontier, horizon, cap, rng, next_id, records, prior)
    births_seen = [np.asarray(b, dtype=float) for b in records.birth] + [np.asarray(frontier["birth"], dtype=float)]
    total = sum(len(b) for b in births_seen)
    breach = None
    ids, parent, types, birth, gen = (frontier[k] for k in ("ids", "parent", "types", "birth", "gen"))
    while len(ids):
        life, counts = table.draw(types, rng)
        ends = birth + life
        at_boundary = ends > horizon
        nchild = np.where(at_boundary, 0, counts.sum(axis=1))
        fate = np.where(at_boundary, BOUNDARY, np.where(nchild > 0, SPLIT, DEAD))
        records.add(ids=ids, parent=parent, types=types, birth=birth,
                    end=np.where(at_boundary, horizon, ends), fate=fate, gen=gen)
        sp = fate == SPLIT
        ctypes, cparent, cbirth = _children(ids[sp], ends[sp], counts[sp], S)
        cgen = np.repeat(gen[sp] + 1, nchild[sp])
        cids = np.arange(next_id, next_id + len(ctypes))
        next_id += len(ctypes)
        if breach is not None:
            keep = cbirth < breach
            ctypes, cparent, cbirth, cgen, cids = (x[keep] for x in (ctypes, cparent, cbirth, cgen, cids))
        total += len(ctypes)
        births_seen.append(cbirth)
        if total > cap:
            allb = np.concatenate(births_seen)
            breach = float(np.partition(allb, cap)[cap])
            births_seen = [allb[allb < breach], allb[allb == breach][:1]]
            total = sum(len(b) for b in births_seen)
            keep = cbirth < breach
            ctypes, cparent, cbirth, cgen, cids = (x[keep] for x in (ctypes, cparent, cbirth, cgen, cids))
        ids, parent, types, birth, gen = cids, cparent, ctypes, cbirth, cgen
    return breach, next_id


@dataclass(frozen=True)
class FamilyTree:
    """Arena of individuals of a simulated family tree.

    Attributes
    ----------
    parent, types, birth, end, fate, generation : ndarray
        Per-individual data; ``parent`` is -1 for the root.  Boundary
        individuals (alive at the horizon) have ``end == horizon``.
    capped : bool
        The arena would have exceeded ``cap``; only times before
        ``cap_time`` are represented.
    """

    parent: np.ndarray
    types: np.ndarray
    birth: np.ndarray
    end: np.ndarray
    fate: np.ndarray
    generation: np.ndarray
    num_types: int
    root_type: int
    horizon: float
    extinct_at: float | None = None
    capped: bool = False
    cap_time: float | None = None

    def __len__(self):
        return len(self.parent)

    @property
    def size(self):
        return len(self.parent)

    # -- structure --------------------------------------------------------

    @cached_property
    def first_child(self) -> np.ndarray:
        fc = np.full(len(self), -1, dtype=np.int64)
        kids = np.flatnonzero(self.parent >= 0)
        par, first = np.unique(self.parent[kids], return_index=True)
        fc[par] = kids[first]
        return fc

    @cached_property
    def num_children(self) -> np.ndarray:
        nc = np.bincount(self.parent[self.parent >= 0], minlength=len(self))
        return nc.astype(np.int64)

    def children(self, x) -> np.ndarray:
        f = self.first_child[x]
        if f < 0:
            return np.zeros(0, dtype=np.int64)
        return np.arange(f, f + self.num_children[x])

    @cached_property
    def _by_generation(self):
        order = np.argsort(self.generation, kind="stable")
        bounds = np.searchsorted(self.generation[order], np.arange(self.generation.max() + 2))
        return [order[bounds[g]:bounds[g + 1]] for g in range(len(bounds) - 1)]

    @cached_property
    def occupation_at_birth(self) -> np.ndarray:
        """Time spent in each type along the ancestry, up to each birth."""
        occ = np.zeros((len(self), self.num_types))
        for idx in self._by_generation[1:]:
            p = self.parent[idx]
            occ[idx] = occ[p]
            occ[idx, self.types[p]] += self.end[p] - self.birth[p]
        return occ

    @cached_property
    def flips_at_birth(self) -> np.ndarray:
        """Number of type changes along the ancestry, up to each birth."""
        flips = np.zeros(len(self), dtype=np.int64)
        for idx in self._by_generation[1:]:
            p = self.parent[idx]
            flips[idx] = flips[p] + (self.types[idx] != self.types[p])
        return flips

    # -- population queries -------------------------------------------------

    def _check_time(self, t):
        if not 0 <= t <= self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")

    def alive_mask(self, t) -> np.ndarray:
        self._check_time(t)
        if self.capped and t >= self.cap_time:
            return np.zeros(len(self), dtype=bool)
        return (self.birth <= t) & ((t < self.end) | (self.fate == BOUNDARY))

    def population_at(self, t) -> np.ndarray:
        """Ids whose lifetime ``[birth, end)`` contains ``t``."""
        return np.flatnonzero(self.alive_mask(t))

    def type_counts(self, t) -> np.ndarray:
        return np.bincount(self.types[self.population_at(t)], minlength=self.num_types)

    def ancestor_at(self, x, s) -> int:
        """The unique ancestor of ``x`` alive at time ``s``."""
        x = int(x)
        if not 0 <= x < len(self):
            raise ValueError(f"no individual {x}")
        if s < 0 or s > self.end[x] or (s == self.end[x] and self.fate[x] != BOUNDARY):
            raise ValueError(f"time {s} is not before the end of individual {x}")
        while self.birth[x] > s:
            x = int(self.parent[x])
        return x

    def ancestors_at(self, xs, s) -> np.ndarray:
        """Vectorized :meth:`ancestor_at`."""
        cur = np.asarray(xs, dtype=np.int64).copy()
        if np.any(s > self.end[cur]):
            raise ValueError(f"time {s} is after the end of some individual")
        while True:
            late = self.birth[cur] > s
            if not late.any():
                return cur
            cur[late] = self.parent[cur[late]]

    def _population(self, t):
        pop = self.population_at(t)
        if len(pop) == 0:
            raise ExtinctionError(f"population is empty at time {t}; average undefined on extinction")
        return pop

    def ancestral_average(self, t, u) -> np.ndarray:
        """Type histogram of the time-``(t-u)`` ancestors of ``X(t)``, normalized."""
        if not 0 < u < t:
            raise ValueError("require 0 < u < t")
        pop = self._population(t)
        anc = self.ancestors_at(pop, t - u)
        return np.bincount(self.types[anc], minlength=self.num_types) / len(pop)

    def occupations(self, xs, t) -> np.ndarray:
        """Rows ``L^x(t)`` for each ``x`` in ``xs`` (all alive at ``t``)."""
        xs = np.asarray(xs, dtype=np.int64)
        if t <= 0:
            raise ValueError("occupation needs t > 0")
        occ = self.occupation_at_birth[xs].copy()
        occ[np.arange(len(xs)), self.types[xs]] += t - self.birth[xs]
        return occ / t

    def lineage_occupation(self, x, t) -> np.ndarray:
        if not self.alive_mask(t)[x]:
            raise ValueError(f"individual {x} is not alive at {t}")
        return self.occupations([x], t)[0]

    def flip_counts(self, xs) -> np.ndarray:
        return self.flips_at_birth[np.asarray(xs, dtype=np.int64)]

    def martingale_W(self, spec, t) -> float:
        """``<Z(t), h> exp(-lam t)``."""
        self._usable()
        pop = self.population_at(t)
        return float(np.sum(spec.h[self.types[pop]])) * math.exp(-spec.lam * t)

    def martingale_Wtilde(self, r, t) -> float:
        """``sum_x exp(-t <L^x(t), r>)`` over ``X(t)``."""
        self._usable()
        pop = self.population_at(t)
        if len(pop) == 0:
            return 0.0
        if t == 0:
            return float(len(pop))
        occ = self.occupations(pop, t)
        return float(np.sum(np.exp(-t * occ @ np.asarray(r, dtype=float))))

    def _usable(self):
        if self.capped:
            raise CappedTreeError("tree exceeded its cap; unusable for estimators")

    def lineage_segments(self, x, t):
        """``[(type, sojourn), ...]`` along the lineage of ``x`` on ``[0, t]``."""
        chain = []
        y = int(x)
        while y >= 0:
            chain.append(y)
            y = int(self.parent[y])
        chain.reverse()
        segs = [(int(self.types[y]), float(self.end[y] - self.birth[y])) for y in chain[:-1]]
        segs.append((int(self.types[x]), float(t - self.birth[x])))
        return segs

    def descendant_counts(self, t) -> np.ndarray:
        """Number of time-``t`` survivors descending from each individual."""
        desc = self.alive_mask(t).astype(np.int64)
        for idx in reversed(self._by_generation[1:]):
            np.add.at(desc, self.parent[idx], desc[idx])
        return desc

    def lineage_statistics(self, t) -> "LineageStatistics":
        """Holding times, completed lifetimes and type transitions along all lineages of ``X(t)``."""
        pop = self._population(t)
        desc = self.descendant_counts(t)
        S = self.num_types
        alive = np.zeros(len(self), dtype=bool)
        alive[pop] = True
        on_lineage = (desc > 0) & ~alive & (self.birth <= t)
        anc = np.flatnonzero(on_lineage)
        # bincount of an empty selection comes back integer even with weights
        holding = np.bincount(self.types[anc], weights=desc[anc] * (self.end[anc] - self.birth[anc]),
                              minlength=S).astype(float)
        holding += np.bincount(self.types[pop], weights=t - self.birth[pop], minlength=S)
        exits = np.bincount(self.types[anc], weights=desc[anc], minlength=S).astype(float)
        kids = np.flatnonzero((desc > 0) & (self.parent >= 0) & (self.birth <= t))
        trans = np.zeros((S, S))
        np.add.at(trans, (self.types[self.parent[kids]], self.types[kids]), desc[kids])
        return LineageStatistics(holding=holding, exits=exits, transitions=trans, lineages=len(pop))

    def empirical_L_distribution(self, t, reference, epsilon) -> float:
        """Fraction of ``x`` in ``X(t)`` with ``||L^x(t) - reference||_TV >= epsilon``."""
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        pop = self._population(t)
        reference = np.asarray(reference, dtype=float)
        if reference.shape != (self.num_types,):
            return 1.0
        d = tv_distance(self.occupations(pop, t), reference)
        return float(np.mean(d >= epsilon))

    def subtree_functional_average(self, j, s, u, f="population") -> float:
        """Average of ``f`` over the descendant subtrees of type-``j`` individuals alive at ``s``.

        ``f`` is ``"population"`` (descendants alive at ``s + u``),
        ``"count:k"`` (type-k descendants alive at ``s + u``) or ``"survives"``.
        """
        if s + u > self.horizon:
            raise ValueError("s + u exceeds the horizon")
        roots = self.population_at(s)
        roots = roots[self.types[roots] == j]
        if len(roots) == 0:
            raise ExtinctionError(f"no type-{j} individuals at time {s}")
        later = self.population_at(s + u)
        anc = self.ancestors_at(later, s)
        if f == "population":
            vals = np.bincount(anc, minlength=len(self))[roots]
        elif f == "survives":
            vals = np.bincount(anc, minlength=len(self))[roots] > 0
        elif isinstance(f, str) and f.startswith("count:"):
            k = int(f.split(":", 1)[1])
            vals = np.bincount(anc[self.types[later] == k], minlength=len(self))[roots]
        else:
            raise ValueError(f"unknown subtree functional {f!r}")
        return float(np.mean(vals))

    def subtree_type_counts(self, j, s, u) -> np.ndarray:
        """``C_{j,u}(s)``: mean type counts at ``s + u`` of subtrees of type-``j`` individuals at ``s``."""
        return np.array([self.subtree_functional_average(j, s, u, f"count:{k}")
                         for k in range(self.num_types)])


@dataclass(frozen=True)
class LineageStatistics:
    """Lineage summaries over ``X(t)``, each lineage weighted one.

    ``exits[i]`` counts completed type-i lifetimes, ``transitions[i, j]``
    parent/child type pairs along lineages (including ``i == j``).
    """

    holding: np.ndarray
    exits: np.ndarray
    transitions: np.ndarray
    lineages: int

    def mean_sojourn(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.exits > 0, self.holding / self.exits, np.nan)

    def jump_frequencies(self):
        tot = self.transitions.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tot > 0, self.transitions / tot, np.nan)

    def type_change_frequencies(self):
        off = self.transitions - np.diag(np.diag(self.transitions))
        tot = off.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tot > 0, off / tot, np.nan)

    def type_change_rates(self):
        off = self.transitions.sum(axis=1) - np.diag(self.transitions)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.holding > 0, off / self.holding, np.nan)


def _assemble(rec: _Records, num_types, root_type, horizon, cap_time, trunk=None):
    a = rec.arrays()
    ids = a["ids"].astype(np.int64)
    parent = a["parent"].astype(np.int64)
    types = a["types"].astype(np.int64)
    birth = a["birth"].astype(float)
    end = a["end"].astype(float)
    fate = a["fate"].astype(np.int8)
    gen = a["gen"].astype(np.int64)
    capped = cap_time is not None
    if capped:
        keep = birth < cap_time
        ids, parent, types, birth, end, fate, gen = (x[keep] for x in (ids, parent, types, birth, end, fate, gen))
        late = end >= cap_time
        end[late] = cap_time
        fate[late] = BOUNDARY
    order = np.lexsort((ids, birth))
    newid = np.full(int(ids.max()) + 1 if len(ids) else 0, -1, dtype=np.int64)
    newid[ids[order]] = np.arange(len(order))
    par = parent[order]
    par = np.where(par >= 0, newid[np.maximum(par, 0)], -1)
    tree_kw = dict(parent=par, types=types[order], birth=birth[order], end=end[order],
                   fate=fate[order], generation=gen[order])
    extinct_at = None
    if not capped and not np.any(tree_kw["fate"] == BOUNDARY):
        extinct_at = float(tree_kw["end"].max())
    for v in tree_kw.values():
        v.setflags(write=False)
    tree = FamilyTree(num_types=num_types, root_type=int(root_type), horizon=float(horizon),
                      extinct_at=extinct_at, capped=capped, cap_time=cap_time, **tree_kw)
    if trunk is not None:
        mapped = newid[np.asarray(trunk, dtype=np.int64)]
        return tree, mapped[mapped >= 0]
    return tree


def simulate(model: BranchingModel, root_type: int, horizon: float, cap: int = DEFAULT_CAP,
             rng: np.random.Generator | None = None) -> FamilyTree:
    """Simulate the family tree of one root up to ``horizon``.

    Lifetimes are exponential with the type's split rate, offspring vectors
    are drawn from the type's law, and individuals alive at ``horizon`` are
    cut there (boundary fate).  If the arena would hold more than ``cap``
    individuals the tree is truncated at the breach time and marked capped.
    """
    check_model(model)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if cap < 1:
        raise ValueError("cap must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    table = OffspringTable.forward(model)
    rec = _Records()
    frontier = dict(ids=np.array([0]), parent=np.array([-1]), types=np.array([int(root_type)]),
                    birth=np.array([0.0]), gen=np.array([0]))
    if horizon == 0:
        rec.add(ids=[0], parent=[-1], types=[root_type], birth=[0.0], end=[0.0], fate=[BOUNDARY], gen=[0])
        return _assemble(rec, model.num_types, root_type, horizon, None)
    breach, _ = _grow(table, frontier, horizon, cap, rng, 1, rec)
    return _assemble(rec, model.num_types, root_type, horizon, breach)


# -- streaming population summaries -------------------------------------------

@dataclass
class PopulationSummary:
    """Population-level statistics at the horizon, collected without storing the tree."""

    type_counts: np.ndarray
    far_counts: np.ndarray
    ancestor_counts: np.ndarray
    holding: np.ndarray
    exits: np.ndarray
    transitions: np.ndarray
    wtilde: float
    individuals: int

    @property
    def size(self) -> int:
        return int(self.type_counts.sum())

    @property
    def extinct(self) -> bool:
        return self.size == 0

    def lineage_statistics(self) -> LineageStatistics:
        return LineageStatistics(self.holding, self.exits, self.transitions, self.size)


def population_summary(model: BranchingModel, root_type: int, horizon: float,
                       rng: np.random.Generator, references=(), lags=(), r=None,
                       lineages=False, chunk: int = 2**15) -> PopulationSummary:
    """Stream the tree to ``horizon`` and summarize the population alive there.

    Individuals are processed in batches of at most ``chunk``, depth first,
    so memory stays bounded however large the population grows.

    Parameters
    ----------
    references : sequence of (probability vector, epsilon)
        For each pair, count survivors ``x`` with ``||L^x - ref||_TV >= epsilon``.
    lags : sequence of float
        For each lag ``u`` count survivors by the type of their ancestor at ``horizon - u``.
    r : array_like, optional
        Reproduction rates; accumulates ``sum_x exp(-horizon <L^x, r>)``.
    lineages : bool
        Accumulate holding times, completed lifetimes and transitions along lineages.
    """
    check_model(model)
    S = model.num_types
    table = OffspringTable.forward(model)
    refs = [(np.asarray(ref, dtype=float), float(eps)) for ref, eps in references]
    lag_times = [horizon - float(u) for u in lags]
    U = len(lag_times)
    rvec = None if r is None else np.asarray(r, dtype=float)

    type_counts = np.zeros(S, dtype=np.int64)
    far = np.zeros(len(refs), dtype=np.int64)
    anc_counts = np.zeros((U, S), dtype=np.int64)
    holding = np.zeros(S)
    exits = np.zeros(S)
    trans = np.zeros((S, S))
    wtilde = 0.0
    individuals = 0

    def batch(types, births, occ, anc, ex, tr):
        return dict(types=types, births=births, occ=occ, anc=anc, ex=ex, tr=tr)

    stack = [batch(np.array([int(root_type)]), np.zeros(1), np.zeros((1, S)),
                   np.full((1, U), -1, dtype=np.int64),
                   np.zeros((1, S)) if lineages else None,
                   np.zeros((1, S, S)) if lineages else None)]
    eye = np.eye(S)
    while stack:
        b = stack.pop()
        k = len(b["types"])
        if k > chunk:
            rest = {key: (None if v is None else v[chunk:]) for key, v in b.items()}
            b = {key: (None if v is None else v[:chunk]) for key, v in b.items()}
            stack.append(rest)
            k = chunk
        individuals += k
        types, births, occ = b["types"], b["births"], b["occ"]
        life, counts = table.draw(types, rng)
        ends = births + life
        fin = ends > horizon
        anc = b["anc"]
        for col, s in enumerate(lag_times):
            hit = (anc[:, col] < 0) & (births <= s) & (s < ends)
            anc[hit, col] = types[hit]
        seg = np.where(fin, horizon - births, life)
        occ = occ + eye[types] * seg[:, None]
        if fin.any():
            ft = types[fin]
            type_counts += np.bincount(ft, minlength=S)
            L = occ[fin] / horizon if horizon > 0 else eye[ft]
            for n_ref, (ref, eps) in enumerate(refs):
                far[n_ref] += int(np.count_nonzero(tv_distance(L, ref) >= eps))
            for col in range(U):
                anc_counts[col] += np.bincount(anc[fin, col], minlength=S)
            if rvec is not None:
                wtilde += float(np.sum(np.exp(-occ[fin] @ rvec)))
            if lineages:
                holding += occ[fin].sum(axis=0)
                exits += b["ex"][fin].sum(axis=0)
                trans += b["tr"][fin].sum(axis=0)
        sp = ~fin & (counts.sum(axis=1) > 0)
        if not sp.any():
            continue
        nchild = counts[sp].sum(axis=1)
        ctypes, _, cbirth = _children(np.flatnonzero(sp), ends[sp], counts[sp], S)
        rep = lambda arr: np.repeat(arr[sp], nchild, axis=0)
        cex = ctr = None
        if lineages:
            cex = rep(b["ex"] + eye[types])
            ctr = rep(b["tr"])
            ctr[np.arange(len(ctypes)), np.repeat(types[sp], nchild), ctypes] += 1
        stack.append(batch(ctypes, cbirth, rep(occ), rep(anc), cex, ctr))
    return PopulationSummary(type_counts=type_counts, far_counts=far, ancestor_counts=anc_counts,
                             holding=holding, exits=exits, transitions=trans, wtilde=wtilde,
                             individuals=individuals)
