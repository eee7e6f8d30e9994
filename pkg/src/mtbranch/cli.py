"""Command-line front end: ``mtbranch <subcommand> --model FILE ...``.

Every run writes ``results.csv`` and ``manifest.json`` into ``--out``.
Exit status is 0 when no check fails, 1 when one does, and 2 for usage or
model errors.  ``mtbranch --replay manifest.json`` reruns a recorded run.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import estimators as est
from .biased import VARIANTS, simulate_biased_tree, trunk_law
from .forward import DEFAULT_CAP, simulate
from .functionals import REGISTRY, parse_functional
from .model import REFERENCE_MODELS, ModelError, load_model, model_hash, parse_model
from .parallel import map_blocks
from .rng import BIASED_TREE, DEFAULT_SEED, FORWARD, substream
from .spectral import (ConvergenceError, biased_laws, derived_generators, matrix_exponential,
                       retrospective_generator, spectral_data)
from .treeio import dump_tree

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_model(source: str):
    """Load a model file, or a bundled reference model by name (``M1``, ``M2``, ``M3``)."""
    path = Path(source)
    if path.is_file():
        return load_model(path)
    if source.upper() in REFERENCE_MODELS:
        text = resources.files("mtbranch").joinpath("data", f"{source.lower()}.toml").read_text()
        return parse_model(text, label=source.upper())
    raise ModelError(f"cannot read model file {source!r}")


def _nonneg(x):
    v = float(x)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {x}")
    return v


def _positive(x):
    v = float(x)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {x}")
    return v


def _count(x):
    v = int(x)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {x}")
    return v


def _seed(x):
    v = int(x)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _vector(x):
    try:
        return [float(p) for p in x.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {x}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtbranch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mtbranch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True, help="model file, or M1/M2/M3 for a bundled model")
        p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
        p.add_argument("--out", default=None, help="output directory (default mtbranch_out/<command>)")
        p.add_argument("--root", default=None, help="root type, by name or 0-based index (default first type)")
        return p

    command("spectral", "Perron data, generators, biased laws")

    p = command("simulate-forward", "simulate forward family trees")
    p.add_argument("--t", type=_nonneg, default=5.0)
    p.add_argument("--n", type=_count, default=1)
    p.add_argument("--cap", type=_count, default=DEFAULT_CAP)
    p.add_argument("--dump", type=int, default=1, help="number of trees to dump (default 1)")

    p = command("simulate-biased", "simulate size-biased trees with trunk")
    p.add_argument("--t", type=_nonneg, default=5.0)
    p.add_argument("--n", type=_count, default=1)
    p.add_argument("--cap", type=_count, default=DEFAULT_CAP)
    p.add_argument("--variant", choices=VARIANTS, default="h")
    p.add_argument("--dump", type=int, default=1)

    p = command("verify", "forward side against trunk side of the size-bias identity")
    p.add_argument("--F", action="append", default=None, metavar="NAME[:PARAMS]",
                   help=f"functional, repeatable; one of {', '.join(REGISTRY)}")
    p.add_argument("--t", type=_nonneg, nargs="+", default=[1.0, 2.0, 3.0])
    p.add_argument("--n", type=_count, default=10**4)
    p.add_argument("--cap", type=_count, default=DEFAULT_CAP)

    p = command("fk", "Feynman-Kac representation of the mean matrix")
    p.add_argument("--t", type=_nonneg, default=1.0)
    p.add_argument("--n", type=_count, default=10**4)
    p.add_argument("--j", default=None, help="target type (default all types)")

    p = command("ldp", "large-deviation rate of lineage occupations via the trunk")
    p.add_argument("--nu", type=_vector, required=True, help="comma-separated probability vector")
    p.add_argument("--eps", type=_positive, default=0.02)
    p.add_argument("--t", type=_positive, default=30.0)
    p.add_argument("--n", type=_count, default=10**5)

    p = command("limits", "limit-theorem checks at a finite horizon")
    p.add_argument("--t", type=_positive, default=15.0)
    p.add_argument("--n", type=_count, default=500)
    p.add_argument("--u", type=_positive, default=None, help="ancestral lag (default t/2)")
    p.add_argument("--eps", type=_positive, default=0.1)
    return parser


# -- subcommands -------------------------------------------------------------------

def _fmt_vec(v):
    return "(" + ", ".join(f"{x:.6f}" for x in np.asarray(v).ravel()) + ")"


def _fmt_mat(m):
    return "[" + ", ".join(_fmt_vec(row) for row in np.asarray(m)) + "]"


def _write_table(path: Path, header, rows):
    lines = [",".join(header)] + [",".join(est._fmt(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def cmd_spectral(args, model, root, out: Path):
    spec = spectral_data(model)
    chain = retrospective_generator(model, spec)
    derived = derived_generators(model, spec)
    laws = biased_laws(model, spec)
    names = model.names
    print(f"model {model.label or args.model}: {model.num_types} types {list(names)}")
    print(f"lambda = {spec.lam:.10g}")
    for key, vec in (("pi", spec.pi), ("h", spec.h), ("alpha", spec.alpha), ("r", spec.means.r), ("c", laws.c)):
        print(f"{key:<6}= {_fmt_vec(vec)}")
    for key, mat in (("G", chain.G), ("G_rev", derived.G_rev), ("G_tilde", derived.G_tilde)):
        print(f"{key:<8}= {_fmt_mat(mat)}")
    for key, group in (("p_hat", laws.p_hat), ("p_tilde", laws.p_tilde)):
        for name, law in zip(names, group):
            atoms = ", ".join(f"{list(c)}: {p:.6f}" for c, p in law.atoms())
            print(f"{key}[{name}] = {{{atoms}}}")

    vectors = {"pi": spec.pi, "h": spec.h, "alpha": spec.alpha, "r": spec.means.r, "c": laws.c}
    _write_table(out / "lambda.csv", ["lambda"], [[spec.lam]])
    for key, vec in vectors.items():
        _write_table(out / f"{key}.csv", ["type", key], [[n, float(v)] for n, v in zip(names, vec)])
    for key, mat in (("G", chain.G), ("G_rev", derived.G_rev), ("G_tilde", derived.G_tilde)):
        _write_table(out / f"{key}.csv", ["from", *names], [[n, *map(float, row)] for n, row in zip(names, mat)])
    for key, group in (("p_hat", laws.p_hat), ("p_tilde", laws.p_tilde)):
        rows = [[n, " ".join(map(str, c)), p] for n, law in zip(names, group) for c, p in law.atoms()]
        _write_table(out / f"{key}.csv", ["type", "counts", "prob"], rows)

    A = spec.A
    res = max(np.max(np.abs(spec.pi @ A - spec.lam * spec.pi)), np.max(np.abs(A @ spec.h - spec.lam * spec.h)))
    stat = float(np.max(np.abs(spec.alpha @ chain.G)))
    label = model.label or "model"
    return [
        est.CheckRow("perron_residual", label, "", float(res), 0.0, 0.0, 1e-10, 1, 0, "pass" if res < 1e-10 else "fail"),
        est.CheckRow("alpha_stationary", label, "", stat, 0.0, 0.0, 1e-10, 1, 0, "pass" if stat < 1e-10 else "fail"),
    ]


def _forward_sizes(model, root, t, cap, seed, lo, hi):
    out = []
    for rep in range(lo, hi):
        tree = simulate(model, root, t, cap, substream(seed, FORWARD, 0, rep))
        out.append((len(tree.population_at(t)) if not tree.capped else -1))
    return np.array(out, dtype=np.int64)


def cmd_simulate_forward(args, model, root, out: Path):
    spec = spectral_data(model)
    sizes = np.concatenate(map_blocks(_forward_sizes, (model, root, args.t, args.cap, args.seed), args.n))
    for rep in range(min(args.dump, args.n)):
        tree = simulate(model, root, args.t, args.cap, substream(args.seed, FORWARD, 0, rep))
        (out / f"tree_{rep}.txt").write_text(dump_tree(tree))
    usable = sizes[sizes >= 0]
    estimate = est.MCEstimate.from_values(usable, len(sizes) - len(usable))
    target = float(matrix_exponential(spec.A, args.t)[root].sum())
    tol = est.SIGMAS * estimate.stderr + 1e-12 * target
    verdict = "pass" if abs(estimate.mean - target) <= tol else "fail"
    extinct = int(np.count_nonzero(usable == 0))
    print(f"{args.n} trees to t={args.t}: mean population {estimate.mean:.6g} "
          f"(expected {target:.6g}), {extinct} extinct, {estimate.discarded} capped")
    return [est.CheckRow("mean_population", model.label or "model", est._params(t=args.t, root=model.names[root]),
                         estimate.mean, estimate.stderr, target, tol, estimate.n, estimate.discarded, verdict)]


def _biased_sojourns(model, spec, variant, root, t, cap, seed, lo, hi):
    holding, exits = np.zeros(model.num_types), np.zeros(model.num_types)
    capped = 0
    for rep in range(lo, hi):
        bt = simulate_biased_tree(model, spec, variant, root, t, cap, substream(seed, BIASED_TREE, 0, rep))
        if bt.tree.capped:
            capped += 1
            continue
        hold, ex, _ = bt.trunk_path().segment_statistics()
        holding += hold
        exits += ex
    return holding, exits, capped


def cmd_simulate_biased(args, model, root, out: Path):
    spec = spectral_data(model)
    parts = map_blocks(_biased_sojourns, (model, spec, args.variant, root, args.t, args.cap, args.seed), args.n)
    holding = sum(p[0] for p in parts)
    exits = sum(p[1] for p in parts)
    capped = sum(p[2] for p in parts)
    for rep in range(min(args.dump, args.n)):
        bt = simulate_biased_tree(model, spec, args.variant, root, args.t, args.cap,
                                  substream(args.seed, BIASED_TREE, 0, rep))
        (out / f"biased_tree_{rep}.txt").write_text(dump_tree(bt))
    rates = trunk_law(model, spec, args.variant).rates
    rows = []
    label = model.label or "model"
    for i, name in enumerate(model.names):
        target = 1.0 / rates[i]
        params = est._params(variant=args.variant, type=name, t=args.t)
        k = int(exits[i])
        if k == 0:
            rows.append(est.CheckRow("trunk_sojourn", label, params, math.nan, math.nan, target, math.nan, 0,
                                     int(capped), "inconclusive"))
            continue
        # time on the trunk over completed lifetimes; the horizon censors the last one
        mean = holding[i] / k
        se = mean / math.sqrt(k)
        tol = est.SIGMAS * se
        rows.append(est.CheckRow("trunk_sojourn", label, params, mean, se, target, tol, k, int(capped),
                                 "pass" if abs(mean - target) <= tol else "fail"))
        print(f"trunk lifetime of type {name}: mean {mean:.6g} over {k} (expected {target:.6g})")
    return rows


def cmd_verify(args, model, root, out: Path):
    spec = spectral_data(model)
    names = args.F or list(est.SIZE_BIAS_FUNCTIONALS)
    functionals = [parse_functional(f, model) for f in names]
    results = est.verify_size_bias(model, spec, functionals, args.t, args.n, root, args.seed, args.cap)
    for r in results:
        print(f"{r.functional.describe(model.names):<22} t={r.t:<5g} forward {r.forward.mean:.5f} ± {r.forward.stderr:.5f}  "
              f"trunk {r.trunk.mean:.5f} ± {r.trunk.stderr:.5f}  z={r.z:+.2f}  {r.verdict}")
    return [r.row(model, root) for r in results]


def cmd_fk(args, model, root, out: Path):
    spec = spectral_data(model)
    results = est.feynman_kac_check(model, spec, args.j, args.t, args.n, root, args.seed)
    for r in results:
        print(f"E Z_{model.names[r.j]}({args.t:g}) from {model.names[root]}: trunk {r.estimate.mean:.6f} ± "
              f"{r.estimate.stderr:.6f}, exact {r.target:.6f}, ESS {r.ess:.0f}  {r.verdict}")
    return est.feynman_kac_rows(model, results, args.t, root)


def cmd_ldp(args, model, root, out: Path):
    spec = spectral_data(model)
    res = est.ldp_rate_estimate(model, spec, args.nu, args.eps, args.t, args.n, root, args.seed)
    print(f"rate estimate {res.estimate:.5f} (band [{min(res.band):.5f}, {max(res.band):.5f}], "
          f"lam - I_G(nu) = {res.point:.5f}, {res.hits} hits)  {res.verdict}")
    return [est.ldp_row(model, res, args.nu, args.eps, args.t, root)]


def cmd_limits(args, model, root, out: Path):
    spec = spectral_data(model)
    rows = est.limit_checks(model, spec, args.t, args.n, args.u, args.eps, root=root, seed=args.seed)
    for r in rows:
        print(f"{r.check:<26} {r.params:<40.40} {r.estimate:<12.6g} target {r.target:<10.6g} {r.verdict}")
    return rows


COMMANDS = {
    "spectral": cmd_spectral,
    "simulate-forward": cmd_simulate_forward,
    "simulate-biased": cmd_simulate_biased,
    "verify": cmd_verify,
    "fk": cmd_fk,
    "ldp": cmd_ldp,
    "limits": cmd_limits,
}


def _manifest(argv, args, model):
    params = {k: v for k, v in vars(args).items() if k not in ("command",)}
    return {
        "toolkit": "mtbranch",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "model": {"source": args.model, "hash": model_hash(model)},
        "seed": args.seed,
        "parameters": params,
    }


def _replay_argv(argv):
    """Rebuild the argument list recorded in a manifest, keeping a new ``--out`` if given."""
    rest = list(argv)
    k = rest.index("--replay")
    if k + 1 >= len(rest):
        raise UsageError("--replay needs a manifest path")
    path = Path(rest[k + 1])
    del rest[k:k + 2]
    try:
        manifest = json.loads(path.read_text())
        recorded = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from None
    if rest[:1] == ["--out"] and len(rest) == 2:
        if "--out" in recorded:
            i = recorded.index("--out")
            recorded[i + 1] = rest[1]
        else:
            recorded += rest
    elif rest:
        raise UsageError("--replay only combines with --out DIR")
    return recorded, manifest


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        expected_hash = None
        if "--replay" in argv:
            argv, manifest = _replay_argv(argv)
            expected_hash = manifest.get("model", {}).get("hash")
        args = build_parser().parse_args(argv)
        model = resolve_model(args.model)
        if expected_hash and model_hash(model) != expected_hash:
            raise ModelError(f"model {args.model} changed since the manifest was written")
        root = model.type_index(args.root) if args.root is not None else 0
        if args.command == "ldp" and len(args.nu) != model.num_types:
            raise UsageError(f"--nu needs {model.num_types} entries")
        if args.command == "verify":
            for f in args.F or []:
                parse_functional(f, model)
        out = Path(args.out) if args.out else Path("mtbranch_out") / args.command
        out.mkdir(parents=True, exist_ok=True)
        rows = COMMANDS[args.command](args, model, root, out)
    except UsageError as exc:
        print(f"mtbranch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, ValueError, OSError, ConvergenceError) as exc:
        print(f"mtbranch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    (out / "results.csv").write_text(est.rows_to_csv(rows))
    (out / "manifest.json").write_text(json.dumps(_manifest(argv, args, model), indent=2, sort_keys=True) + "\n")
    failed = [r for r in rows if r.verdict == "fail"]
    print(f"{len(rows)} checks, {len(failed)} failed; results in {out}")
    return EXIT_FAIL if failed else EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
