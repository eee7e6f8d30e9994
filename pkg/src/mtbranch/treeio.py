"""Line-oriented text dump of family trees.

One individual per line, ``id parent type birth end fate``, where ``fate``
is ``S:<child ids>``, ``B`` (alive at the horizon) or ``D`` (died without
children) and the root's parent is ``-``.  Header lines start with ``#``;
a biased tree adds a ``T:<trunk ids>`` line.  Times are written with
``repr`` so a dump reads back bit for bit.
"""

from __future__ import annotations

import numpy as np

from .biased import BiasedTree
from .forward import BOUNDARY, DEAD, SPLIT, FamilyTree


def _opt(x):
    return "none" if x is None else repr(float(x))


def _ids(xs):
    return ",".join(str(int(x)) for x in xs)


def dump_tree(tree) -> str:
    """Text dump of a :class:`FamilyTree` or :class:`BiasedTree`."""
    trunk = None
    variant = None
    if isinstance(tree, BiasedTree):
        trunk, variant = tree.trunk_ids, tree.variant
        tree = tree.tree
    lines = [
        f"# horizon {tree.horizon!r}",
        f"# root_type {tree.root_type}",
        f"# num_types {tree.num_types}",
        f"# capped {int(tree.capped)}",
        f"# cap_time {_opt(tree.cap_time)}",
        f"# extinct_at {_opt(tree.extinct_at)}",
    ]
    if trunk is not None:
        lines.append(f"# variant {variant}")
        lines.append("T:" + _ids(trunk))
    fc, nc = tree.first_child, tree.num_children
    for x in range(len(tree)):
        code = tree.fate[x]
        if code == SPLIT:
            fate = "S:" + _ids(range(fc[x], fc[x] + nc[x]))
        elif code == BOUNDARY:
            fate = "B"
        else:
            fate = "D"
        par = "-" if tree.parent[x] < 0 else str(int(tree.parent[x]))
        lines.append(f"{x} {par} {int(tree.types[x])} {float(tree.birth[x])!r} {float(tree.end[x])!r} {fate}")
    return "\n".join(lines) + "\n"


def load_tree(text: str):
    """Inverse of :func:`dump_tree`."""
    meta = {}
    trunk = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            meta[key] = value.strip()
        elif line.startswith("T:"):
            trunk = np.array([int(x) for x in line[2:].split(",") if x], dtype=np.int64)
        else:
            rows.append(line.split())
    n = len(rows)
    parent = np.empty(n, dtype=np.int64)
    types = np.empty(n, dtype=np.int64)
    birth = np.empty(n)
    end = np.empty(n)
    fate = np.empty(n, dtype=np.int8)
    for k, (x, par, ty, b, e, f) in enumerate(rows):
        if int(x) != k:
            raise ValueError(f"ids must be dense and ordered; line {k} has id {x}")
        parent[k] = -1 if par == "-" else int(par)
        types[k] = int(ty)
        birth[k] = float(b)
        end[k] = float(e)
        fate[k] = SPLIT if f.startswith("S:") else BOUNDARY if f == "B" else DEAD
    generation = np.zeros(n, dtype=np.int64)
    for k in range(n):
        if parent[k] >= 0:
            generation[k] = generation[parent[k]] + 1
    opt = lambda v: None if v in (None, "none") else float(v)
    for arr in (parent, types, birth, end, fate, generation):
        arr.setflags(write=False)
    tree = FamilyTree(parent=parent, types=types, birth=birth, end=end, fate=fate, generation=generation,
                      num_types=int(meta["num_types"]), root_type=int(meta["root_type"]),
                      horizon=float(meta["horizon"]), extinct_at=opt(meta.get("extinct_at")),
                      capped=bool(int(meta.get("capped", "0"))), cap_time=opt(meta.get("cap_time")))
    if trunk is not None:
        return BiasedTree(tree=tree, trunk_ids=trunk, variant=meta.get("variant", "h"))
    return tree
