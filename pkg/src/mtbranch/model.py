"""Branching model definition, validation and first-moment data.

A model is a finite type set, an exponential split rate per type and a
finite-support offspring law per type.  Finite support makes every moment
exact and the ``E N log N < inf`` condition automatic.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

PROB_TOL = 1e-12
MIN_ATOM_PROB = 1e-15


class ModelError(ValueError):
    """Raised when a model is used although it fails validation."""


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support law on offspring count vectors.

    ``counts[k]`` is the k-th atom (number of children of each type) and
    ``probs[k]`` its probability.
    """

    counts: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        counts = np.atleast_2d(np.asarray(self.counts, dtype=np.int64))
        probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
        counts.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[Sequence[int], float]]) -> "OffspringLaw":
        counts = [list(c) for c, _ in atoms]
        probs = [p for _, p in atoms]
        return cls(np.array(counts, dtype=np.int64), np.array(probs, dtype=float))

    @property
    def num_atoms(self) -> int:
        return len(self.probs)

    def mean(self) -> np.ndarray:
        """Expected number of children of each type."""
        return np.array(
            [math.fsum(self.probs * self.counts[:, j]) for j in range(self.counts.shape[1])]
        )

    def atoms(self):
        return [(tuple(int(c) for c in row), float(p)) for row, p in zip(self.counts, self.probs)]


@dataclass(frozen=True)
class BranchingModel:
    """Continuous-time multitype Markov branching model.

    Parameters
    ----------
    split_rates : array_like
        Exponential lifetime parameter ``a_i`` of each type.
    offspring : sequence of OffspringLaw
        Offspring law of each type; count vectors have one entry per type.
    names : sequence of str, optional
        Type names, defaulting to ``"0", "1", ...``.
    """

    split_rates: np.ndarray
    offspring: tuple
    names: tuple = ()
    label: str = ""

    def __post_init__(self):
        rates = np.atleast_1d(np.asarray(self.split_rates, dtype=float))
        rates.setflags(write=False)
        object.__setattr__(self, "split_rates", rates)
        object.__setattr__(self, "offspring", tuple(self.offspring))
        if not self.names:
            object.__setattr__(self, "names", tuple(str(i) for i in range(len(rates))))
        else:
            object.__setattr__(self, "names", tuple(str(n) for n in self.names))

    @property
    def num_types(self) -> int:
        return len(self.split_rates)

    def type_index(self, key) -> int:
        """Resolve a type given by name or by 0-based index."""
        if isinstance(key, str):
            if key in self.names:
                return self.names.index(key)
            key = int(key)
        key = int(key)
        if not 0 <= key < self.num_types:
            raise ValueError(f"type index {key} out of range for {self.num_types} types")
        return key


@dataclass(frozen=True)
class MeanData:
    M: np.ndarray
    row_means: np.ndarray
    A: np.ndarray
    r: np.ndarray


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "ok" if self.ok else "; ".join(self.violations)


def support_graph(model: BranchingModel) -> np.ndarray:
    """Boolean adjacency ``i -> j`` iff an i-parent has a j-child with positive probability."""
    n = model.num_types
    adj = np.zeros((n, n), dtype=bool)
    for i, law in enumerate(model.offspring):
        if law.counts.ndim != 2 or law.counts.shape[1] != n:
            continue
        positive = law.probs > 0
        adj[i] = np.any(law.counts[positive] > 0, axis=0)
    return adj


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    todo = [start]
    while todo:
        i = todo.pop()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            todo.append(int(j))
    return seen


def is_irreducible(adj: np.ndarray) -> bool:
    """Strong connectivity: every type reaches type 0 and is reached from it."""
    adj = np.asarray(adj, dtype=bool)
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def validate_model(model: BranchingModel) -> ValidationReport:
    """Check every model invariant; violations are returned, not raised."""
    report = ValidationReport()
    n = model.num_types
    v = report.violations
    if n < 1:
        v.append("model has no types")
        return report
    if len(model.offspring) != n:
        v.append(f"{len(model.offspring)} offspring laws for {n} types")
        return report
    if len(model.names) != n or len(set(model.names)) != n:
        v.append("type names must be distinct, one per type")
    for i, a in enumerate(model.split_rates):
        if not (np.isfinite(a) and a > 0):
            v.append(f"type {model.names[i]}: split rate {a} is not positive")
    shape_ok = True
    for i, law in enumerate(model.offspring):
        name = model.names[i]
        if law.counts.ndim != 2 or law.counts.shape[1] != n or law.counts.shape[0] != len(law.probs):
            v.append(f"type {name}: count vectors must have length {n}, one per atom")
            shape_ok = False
            continue
        if len(law.probs) == 0:
            v.append(f"type {name}: offspring law has no atoms")
            shape_ok = False
            continue
        if np.any(law.counts < 0):
            v.append(f"type {name}: negative offspring count")
        if np.any(~np.isfinite(law.probs)) or np.any(law.probs < MIN_ATOM_PROB) or np.any(law.probs > 1):
            v.append(f"type {name}: atom probabilities must lie in [{MIN_ATOM_PROB:g}, 1]")
        total = math.fsum(law.probs)
        if abs(total - 1.0) > PROB_TOL:
            v.append(f"type {name}: probabilities sum to {total:.12g}")
        if len({tuple(row) for row in law.counts.tolist()}) != len(law.probs):
            v.append(f"type {name}: duplicate count vectors")
    if shape_ok and not is_irreducible(support_graph(model)):
        v.append("M reducible")
    return report


def check_model(model: BranchingModel) -> None:
    if getattr(model, "_valid", False):
        return
    report = validate_model(model)
    if not report.ok:
        raise ModelError(f"invalid model: {report}")
    # models are immutable, so one successful validation suffices
    object.__setattr__(model, "_valid", True)


def mean_data(model: BranchingModel) -> MeanData:
    """Mean offspring matrix ``M``, row sums ``m``, generator ``A`` and rates ``r``.

    ``A = diag(a) (M - I)`` and ``r_i = a_i (m_i - 1)``, the row sums of ``A``.
    """
    check_model(model)
    M = np.array([law.mean() for law in model.offspring])
    m = np.array([math.fsum(row) for row in M])
    a = model.split_rates
    A = a[:, None] * (M - np.eye(model.num_types))
    r = a * (m - 1.0)
    for arr in (M, m, A, r):
        arr.setflags(write=False)
    return MeanData(M=M, row_means=m, A=A, r=r)


def zlogz_holds(model: BranchingModel) -> bool:
    """``E(N_ij log N_ij) < inf``; always true for finite support."""
    return all(np.all(np.isfinite(law.counts)) for law in model.offspring)


def extinction_probabilities(model: BranchingModel, tol: float = 1e-14, maxiter: int = 100000) -> np.ndarray:
    """Smallest fixed point ``q = f(q)`` of the offspring generating functions."""
    check_model(model)
    q = np.zeros(model.num_types)
    for _ in range(maxiter):
        new = np.array(
            [math.fsum(law.probs * np.prod(q ** law.counts, axis=1)) for law in model.offspring]
        )
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    return q


# -- model files ------------------------------------------------------------

def parse_model(text: str, label: str = "") -> BranchingModel:
    """Build a model from TOML text.

    Layout::

        types = ["1", "2"]

        [type.1]
        rate = 1.0
        atom = [ {counts = [2, 0], prob = 0.5}, {counts = [0, 1], prob = 0.5} ]
    """
    data = tomllib.loads(text)
    if "types" not in data:
        raise ModelError("model file lacks 'types'")
    names = [str(n) for n in data["types"]]
    tables = data.get("type", {})
    rates, laws = [], []
    for name in names:
        if name not in tables:
            raise ModelError(f"model file lacks a [type.{name}] table")
        entry = tables[name]
        if "rate" not in entry:
            raise ModelError(f"type {name}: missing 'rate'")
        atoms = entry.get("atom", [])
        if isinstance(atoms, dict):
            atoms = [atoms]
        try:
            laws.append(OffspringLaw.from_atoms([(a["counts"], float(a["prob"])) for a in atoms]))
        except (KeyError, TypeError) as exc:
            raise ModelError(f"type {name}: malformed atom ({exc})") from None
        rates.append(float(entry["rate"]))
    return BranchingModel(np.array(rates), tuple(laws), tuple(names), label=label or data.get("name", ""))


def load_model(path) -> BranchingModel:
    path = Path(path)
    return parse_model(path.read_text(), label=path.stem)


def dump_model(model: BranchingModel) -> str:
    lines = []
    if model.label:
        lines.append(f'name = "{model.label}"')
    lines.append("types = [" + ", ".join(f'"{n}"' for n in model.names) + "]")
    for name, a, law in zip(model.names, model.split_rates, model.offspring):
        lines.append("")
        lines.append(f'[type."{name}"]')
        lines.append(f"rate = {float(a)!r}")
        atoms = ", ".join(
            "{counts = [" + ", ".join(str(c) for c in counts) + f"], prob = {p!r}" + "}"
            for counts, p in law.atoms()
        )
        lines.append(f"atom = [{atoms}]")
    return "\n".join(lines) + "\n"


def model_hash(model: BranchingModel) -> str:
    return hashlib.sha256(dump_model(model).encode()).hexdigest()


# -- reference models ---------------------------------------------------------

def yule_model() -> BranchingModel:
    """One type, rate 1, always two children (M1)."""
    return BranchingModel([1.0], (OffspringLaw.from_atoms([((2,), 1.0)]),), ("1",), label="M1")


def two_type_model() -> BranchingModel:
    """Two types, rates 1; type 1 -> (2,0) or (0,1) w.p. 1/2, type 2 -> (1,1) (M2)."""
    return BranchingModel(
        [1.0, 1.0],
        (
            OffspringLaw.from_atoms([((2, 0), 0.5), ((0, 1), 0.5)]),
            OffspringLaw.from_atoms([((1, 1), 1.0)]),
        ),
        ("1", "2"),
        label="M2",
    )


def binary_death_model() -> BranchingModel:
    """One type, rate 1; no children w.p. 1/4, two children w.p. 3/4 (M3)."""
    return BranchingModel(
        [1.0], (OffspringLaw.from_atoms([((0,), 0.25), ((2,), 0.75)]),), ("1",), label="M3"
    )


REFERENCE_MODELS = {"M1": yule_model, "M2": two_type_model, "M3": binary_death_model}
