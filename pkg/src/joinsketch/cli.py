"""Command-line workbench: ``joinsketch {sample,count,exact,gen,verify,bench}``.

Every command prints a single JSON document on stdout. Exit status is 0 on
success, 1 on usage errors and 2 on data errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .access import OpCounters, make_rng
from .engine import SHAPES, build_engine
from .generators import FAMILIES, Generated, GeneratorSpec, generate
from .io import emit, ingest, load_query_spec
from .model import Instance, JoinSketchError, QuerySpec, classify_query
from .oracle import accuracy_trials, exact_eval, scaling_probe, uniformity_test

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("JOINSKETCH_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"JOINSKETCH_SEED must be an integer, got {env!r}") from None


def _params(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for p in pairs or ():
        key, sep, value = p.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects k=v, got {p!r}")
        out[key.strip()] = value.strip()
    return out


def _load(args) -> tuple[Instance, QuerySpec]:
    """Dataset from --query/--data, or the first instance of a generated family."""
    if args.data is not None:
        spec = load_query_spec(args.query) if args.query else load_query_spec(Path(args.data) / "query.json")
        return ingest(args.data, spec, dedup=getattr(args, "dedup", False)), spec
    family = getattr(args, "family", None)
    if family is None:
        raise UsageError("either --data (with --query) or --family is required")
    g = generate(GeneratorSpec(family, _params(args.param), _seed(args)))[0]
    return g.instance, g.spec


def _decode(inst: Instance, t: Sequence[int]) -> list[str]:
    return [inst.label(int(v)) for v in t]


def _check_eps_delta(args) -> None:
    for name in ("epsilon", "delta"):
        v = getattr(args, name, None)
        if v is not None and not 0 < v < 1:
            raise UsageError(f"--{name} must lie in (0, 1)")


# ----------------------------------------------------------------- commands


def cmd_sample(args) -> dict[str, Any]:
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    inst, spec = _load(args)
    seed = _seed(args)
    eng = build_engine(inst, spec, args.shape, args.strategy, args.epsilon, args.delta)
    rng, ctr = make_rng(seed), OpCounters()
    samples, empty = [], False
    for _ in range(args.n):
        t = eng.sample(rng, ctr)
        if t is None:
            empty = True
            break
        samples.append(_decode(inst, t))
    return {"command": "sample", "shape": eng.shape, "strategy": eng.strategy, "seed": seed,
            "output": list(spec.output), "samples": samples, "empty": empty,
            "runtime_ops": ctr.ops, "trials": ctr.trials}


def cmd_count(args) -> dict[str, Any]:
    inst, spec = _load(args)
    seed = _seed(args)
    eng = build_engine(inst, spec, args.shape, "H", args.epsilon, args.delta)
    ctr = OpCounters()
    est = eng.count(args.epsilon, args.delta, make_rng(seed), ctr)
    return {"command": "count", "shape": eng.shape, "seed": seed, "epsilon": args.epsilon,
            "delta": args.delta, "estimate": est, "runtime_ops": ctr.ops}


def cmd_exact(args) -> dict[str, Any]:
    inst, spec = _load(args)
    rep = exact_eval(inst, spec)
    degrees = sorted((_decode(inst, t), d) for t, d in rep.deg_map.items())
    doc: dict[str, Any] = {"command": "exact", "shape": str(classify_query(spec)), "n": inst.n_total,
                           "out": rep.out, "out_join": rep.out_join, "output": list(spec.output),
                           "degrees": [{"tuple": t, "deg": d} for t, d in degrees]}
    if rep.per_start_reach is not None:
        doc["per_start_reach"] = {inst.label(u): r for u, r in sorted(rep.per_start_reach.items())}
    return doc


def cmd_gen(args) -> dict[str, Any]:
    gs = GeneratorSpec(args.family, _params(args.param), _seed(args))
    made = generate(gs)
    out = Path(args.out) if args.out else None
    docs = []
    for g in made:
        m = dict(g.manifest)
        if out is not None:
            target = out / m["distribution"] if len(made) > 1 else out
            emit(g.instance, g.spec, target)
            (target / "manifest.json").write_text(json.dumps(_jsonable(m), indent=2, sort_keys=True) + "\n")
            m["path"] = str(target)
        docs.append(m)
    return {"command": "gen", "family": args.family, "seed": gs.seed, "instances": docs}


def _verify_uniformity(args, inst, spec, seed) -> dict[str, Any]:
    rep = exact_eval(inst, spec)
    if rep.out == 0:
        return {"suite": "uniformity", "out": 0, "passed": None, "note": "empty result"}
    eng = build_engine(inst, spec, args.shape, args.strategy, args.epsilon, args.delta)
    rng, ctr = make_rng(seed), OpCounters()
    v = uniformity_test(lambda: eng.sample(rng, ctr), rep.result_set, args.n, args.quantile)
    return {"suite": "uniformity", "shape": eng.shape, "out": rep.out, "n_samples": v.n_samples,
            "chi_square": v.chi_square, "dof": v.dof, "threshold": v.threshold_quantile,
            "max_abs_dev": v.max_abs_dev, "empty_verdicts": v.empty_verdicts, "passed": v.passed}


def _verify_accuracy(args, inst, spec, seed) -> dict[str, Any]:
    rep = exact_eval(inst, spec)
    eng = build_engine(inst, spec, args.shape, "H", args.epsilon, args.delta)
    rng, ctr = make_rng(seed), OpCounters()
    estimates: list[float] = []

    def run() -> float:
        estimates.append(eng.count(args.epsilon, args.delta, rng, ctr))
        return estimates[-1]

    frac = accuracy_trials(run, rep.out, args.epsilon, args.runs)
    return {"suite": "accuracy", "shape": eng.shape, "out": rep.out, "runs": args.runs,
            "epsilon": args.epsilon, "delta": args.delta, "fraction_within": frac,
            "estimates": estimates, "passed": frac >= 1 - args.delta,
            "mean_ops": ctr.ops / args.runs}


def _int_list(text: str | None, default: list[int]) -> list[int]:
    if text is None:
        return default
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def _sample_ops(shape: str, strategy: str, eps: float, delta: float):
    def run(g: Generated, rng) -> int:
        eng = build_engine(g.instance, g.spec, shape, strategy, eps, delta)
        ctr = OpCounters()
        eng.sample(rng, ctr)
        return ctr.ops
    return run


def _probe_rows(args, shape: str, strategy: str, sizes: list[int], outs: list[int], reps: int,
                rng) -> list[dict[str, Any]]:
    family = []
    for n in sizes:
        for out in outs:
            g = generate(GeneratorSpec("matrix-cartesian", {"n": n, "out": out}, 0))[0]
            family.append((f"n={n},out={out}", g, n, out))
    rows = scaling_probe(_sample_ops(shape, strategy, args.epsilon, args.delta), family, reps, rng)
    return [{"engine": shape if shape != "matrix" else f"matrix-{strategy.lower()}",
             "n": r.n, "out": r.out, "mean_ops": r.mean_ops} for r in rows]


def _verify_scaling(args, seed) -> dict[str, Any]:
    p = _params(args.param)
    n = int(p.get("n", 4096))
    q = int(p.get("q", 16))
    rows = _probe_rows(args, "matrix", args.strategy, [n], [q, 4 * q], args.runs, make_rng(seed))
    ratio = rows[0]["mean_ops"] / rows[1]["mean_ops"] if rows[1]["mean_ops"] else math.inf
    return {"suite": "scaling", "rows": rows, "ratio": ratio, "passed": 1.4 <= ratio <= 2.9}


def cmd_verify(args) -> dict[str, Any]:
    seed = _seed(args)
    if args.runs is None:
        args.runs = 1000 if args.suite == "scaling" else 20
    if args.suite == "scaling":
        doc = _verify_scaling(args, seed)
    else:
        inst, spec = _load(args)
        doc = (_verify_uniformity if args.suite == "uniformity" else _verify_accuracy)(args, inst, spec, seed)
    doc.update(command="verify", seed=seed)
    return doc


def cmd_bench(args) -> dict[str, Any]:
    p = _params(args.param)
    sizes = _int_list(p.get("sizes"), [256, 1024, 4096])
    outs = _int_list(p.get("outs"), [16, 64, 256])
    engines = p.get("engines", "matrix-h,matrix-l,star,chain,acyclic").split(",")
    reps = args.runs
    rng = make_rng(_seed(args))
    tables = []
    for name in engines:
        shape, _, strat = name.partition("-")
        if shape not in SHAPES[1:]:
            raise UsageError(f"unknown engine {name!r}")
        tables.extend(_probe_rows(args, shape, strat or "h", sizes, outs, reps, rng))
    return {"command": "bench", "seed": _seed(args), "reps": reps, "rows": tables}


# ------------------------------------------------------------------- parser


def _add_data(p: argparse.ArgumentParser, generated: bool = True) -> None:
    p.add_argument("--query", help="query spec JSON file (defaults to DATA/query.json)")
    p.add_argument("--data", help="directory with one CSV/TSV file per relation")
    p.add_argument("--dedup", action="store_true", help="drop duplicate rows instead of rejecting them")
    if generated:
        p.add_argument("--family", choices=FAMILIES, help="use a generated instance instead of --data")
        p.add_argument("--param", action="append", default=[], metavar="K=V", help="generator parameter")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $JOINSKETCH_SEED, then 0)")
    p.add_argument("--pretty", action="store_true", help="indented, human-readable output")
    p.add_argument("--threads", type=int, default=1, help="engine worker threads (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="joinsketch", description="Uniform sampling and approximate counting "
                                                    "over join-project queries.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="draw uniform samples of the query result")
    _add_data(p)
    _add_common(p)
    p.add_argument("--shape", choices=SHAPES, default="auto")
    p.add_argument("--n", type=int, default=1, help="number of samples")
    p.add_argument("--strategy", type=str.lower, choices=("h", "l"), default="h")
    p.add_argument("--epsilon", type=float, default=0.2, help="chain degree-table accuracy")
    p.add_argument("--delta", type=float, default=0.01, help="failure probability of the empty verdict")

    p = sub.add_parser("count", help="(epsilon, delta)-estimate of the result size")
    _add_data(p)
    _add_common(p)
    p.add_argument("--shape", choices=SHAPES, default="auto")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.1)

    p = sub.add_parser("exact", help="exact result size, full-join size and witness counts")
    _add_data(p)
    _add_common(p)

    p = sub.add_parser("gen", help="generate an instance family and write it to disk")
    _add_common(p)
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--param", action="append", default=[], metavar="K=V")
    p.add_argument("--out", help="output directory (omit to print the manifest only)")

    p = sub.add_parser("verify", help="statistical checks against the exact oracle")
    _add_data(p)
    _add_common(p)
    p.add_argument("--suite", choices=("uniformity", "accuracy", "scaling"), required=True)
    p.add_argument("--shape", choices=SHAPES, default="auto")
    p.add_argument("--strategy", type=str.lower, choices=("h", "l"), default="h")
    p.add_argument("--n", type=int, default=10000, help="samples for the uniformity suite")
    p.add_argument("--runs", type=int, default=None,
                   help="repetitions (default 20 for accuracy, 1000 samples per instance for scaling)")
    p.add_argument("--quantile", type=float, default=0.999)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.1)

    p = sub.add_parser("bench", help="mean-ops scaling tables over matrix-cartesian instances")
    _add_common(p)
    p.add_argument("--param", action="append", default=[], metavar="K=V",
                   help="sizes=..., outs=..., engines=matrix-h,matrix-l,star,chain,acyclic")
    p.add_argument("--runs", type=int, default=5, help="samples per instance")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.1)
    return parser


COMMANDS = {"sample": cmd_sample, "count": cmd_count, "exact": cmd_exact, "gen": cmd_gen,
            "verify": cmd_verify, "bench": cmd_bench}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _emit(doc: dict, pretty: bool) -> None:
    doc = _jsonable(doc)
    if pretty:
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    pretty = False
    try:
        args = parser.parse_args(argv)
        pretty = args.pretty
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if (getattr(args, "runs", 1) or 1) < 1:
            raise UsageError("--runs must be at least 1")
        _check_eps_delta(args)
        doc = COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        _emit({"error": str(e), "kind": "usage"}, pretty)
        return EXIT_USAGE
    except (JoinSketchError, KeyError, ValueError, OSError) as e:
        msg = str(e) if not isinstance(e, KeyError) else str(e.args[0]) if e.args else "missing key"
        print(f"joinsketch: {msg}", file=sys.stderr)
        _emit({"error": msg, "kind": "data"}, pretty)
        return EXIT_DATA
    _emit(doc, pretty)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
