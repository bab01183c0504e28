"""Command-line entry point.

Subcommands: ``run``, ``sweep``, ``iid``, ``verify`` and ``oracle``.  A config
is one JSON document; every key has a mirroring flag, and flags win.  The
``MAXMIN_SEED`` environment variable overrides both.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from . import harness
from .adversaries import SOURCES, SourceSpec
from .algorithms import ALGORITHMS, PHI_BUILDERS, PHI_FAMILY, PassChain
from .core import Instance, InstanceError, load_instance
from .oracle import DEFAULT_BUDGET, opt_exact

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_BUDGET = 4
EXIT_EPSILON = 5
EXIT_R_RANGE = 6
EXIT_KILLER_EPSILON = 7
EXIT_IO = 8

SEED_ENV = "MAXMIN_SEED"


class ConfigError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


@dataclass
class ExperimentConfig:
    algorithm: harness.AlgorithmSpec
    source: SourceSpec
    seed: int = 0
    trials: int = 1
    sizes: tuple[int, ...] = ()
    oracle_budget: int = DEFAULT_BUDGET
    workers: int = field(default_factory=harness.default_workers)
    out: Optional[str] = None
    trace: bool = False
    epsilons: tuple[float, ...] = ()

    def echo(self) -> dict:
        """Config as reported; scheduling and output paths are left out."""
        return {
            "algorithm": asdict(self.algorithm),
            "source": {k: v for k, v in asdict(self.source).items() if v is not None},
            "seed": self.seed,
            "trials": self.trials,
            "sizes": list(self.sizes),
            "oracle_budget": self.oracle_budget,
        }


# --------------------------------------------------------------------------
# config parsing

_SOURCE_KEYS = ("n", "m", "k", "i_star", "tau", "r", "c", "cap", "epsilon", "vector", "table", "path", "items")


def _merge(file_cfg: dict, args: argparse.Namespace) -> dict:
    alg = dict(file_cfg.get("algorithm") or {})
    src = dict(file_cfg.get("source") or {})
    top = {k: v for k, v in file_cfg.items() if k not in ("algorithm", "source")}
    get = lambda name: getattr(args, name, None)
    if get("algorithm") is not None:
        alg["name"] = args.algorithm
    for key in ("epsilon", "phi", "p"):
        if get(key) is not None:
            alg[key] = get(key)
    if get("source") is not None:
        src["name"] = args.source
    for key in ("n", "m", "k", "r", "c", "i_star"):
        if get(key) is not None:
            src[key] = get(key)
    if get("vector") is not None:
        src["vector"] = [float(x) for x in args.vector.split(",")]
    if get("instance") is not None:
        src["path"] = args.instance
        src.setdefault("name", "replay")
    for key in ("seed", "trials", "oracle_budget", "workers", "out", "sizes", "trace", "epsilons"):
        val = get(key)
        if val is not None and val is not False:
            top[key] = val
    if "seed" in alg and "seed" not in top:
        top["seed"] = alg.pop("seed")
    alg.pop("seed", None)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        top["seed"] = env.strip()
    return {"algorithm": alg, "source": src, **top}


def _int(value: Any, what: str) -> int:
    try:
        if isinstance(value, bool):
            raise TypeError
        out = int(value)
        if isinstance(value, float) and value != out:
            raise ValueError
        return out
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer, got {value!r}") from None


def _check_eps(eps: Any, what: str) -> float:
    try:
        eps = float(eps)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {eps!r}", EXIT_EPSILON) from None
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"{what} must lie in (0, 1), got {eps!r}", EXIT_EPSILON)
    return eps


def build_config(raw: dict, command: str = "run") -> ExperimentConfig:
    """Validate a merged config dict; raises :class:`ConfigError`."""
    alg_raw = dict(raw.get("algorithm") or {})
    src_raw = dict(raw.get("source") or {})
    unknown = set(alg_raw) - {"name", "epsilon", "phi", "p"}
    if unknown:
        raise ConfigError(f"unknown algorithm keys {sorted(unknown)}")
    unknown = set(src_raw) - {"name", *_SOURCE_KEYS}
    if unknown:
        raise ConfigError(f"unknown source keys {sorted(unknown)}")

    # source first: a replay file may pin epsilon
    src_name = src_raw.get("name")
    replay_meta: dict = {}
    if command not in ("verify",) or src_name is not None:
        if src_name not in SOURCES:
            raise ConfigError(f"unknown source {src_name!r}; choose from {', '.join(SOURCES)}")
        if src_name == "replay":
            path = src_raw.get("path")
            if not path:
                raise ConfigError("replay source needs a path")
            try:
                inst, replay_meta = load_instance(path)
            except OSError as exc:
                raise ConfigError(f"cannot read {path}: {exc}", EXIT_IO) from None
            except InstanceError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            src_raw.setdefault("n", inst.n)

    alg_name = alg_raw.get("name", "pass_chain" if command == "verify" else None)
    if alg_name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {alg_name!r}; choose from {', '.join(ALGORITHMS)}")
    eps = alg_raw.get("epsilon")
    if eps is None and "epsilon" in replay_meta:
        eps = replay_meta["epsilon"]
    if eps is not None:
        eps = _check_eps(eps, "epsilon")
    if alg_name in ("pass_chain", "discounted") and eps is None and command != "verify":
        raise ConfigError(f"{alg_name} requires epsilon", EXIT_EPSILON)
    phi = alg_raw.get("phi", "identity")
    if phi not in PHI_BUILDERS:
        raise ConfigError(f"unknown phi {phi!r}; choose from {', '.join(sorted(PHI_BUILDERS))}")
    p = alg_raw.get("p")
    if p is not None:
        p = float(p)
        if not p > 0:
            raise ConfigError(f"power p must be positive, got {p!r}")
    epsilons = raw.get("epsilons") or ()
    if isinstance(epsilons, str):
        epsilons = [s for s in epsilons.split(",") if s.strip()]
    epsilons = tuple(_check_eps(e, "epsilon") for e in epsilons)
    if command == "verify":
        if not epsilons:
            epsilons = (eps,) if eps is not None else (0.1, 0.25, 0.5)
        alg_name, eps = "pass_chain", epsilons[0]
    algorithm = harness.AlgorithmSpec(alg_name, eps, phi, p)

    src_kwargs: dict = {}
    for key in _SOURCE_KEYS:
        if key in src_raw and src_raw[key] is not None:
            src_kwargs[key] = src_raw[key]
    for key in ("n", "m", "k", "i_star", "cap"):
        if key in src_kwargs:
            src_kwargs[key] = _int(src_kwargs[key], key)
            if key in ("n", "k") and src_kwargs[key] < 1:
                raise ConfigError(f"{key} must be >= 1, got {src_kwargs[key]}")
            if key == "m" and src_kwargs[key] < 0:
                raise ConfigError(f"m must be >= 0, got {src_kwargs[key]}")
    if "r" in src_kwargs:
        r = float(src_kwargs["r"])
        if not 0.5 < r < 1.0:
            raise ConfigError(f"r must lie in (1/2, 1), got {r!r}", EXIT_R_RANGE)
        src_kwargs["r"] = r
    if "c" in src_kwargs:
        c = float(src_kwargs["c"])
        if not c > 0:
            raise ConfigError(f"c must be positive, got {c!r}")
        src_kwargs["c"] = c
    if "tau" in src_kwargs:
        src_kwargs["tau"] = tuple(_int(t, "tau entry") for t in src_kwargs["tau"])
    if "vector" in src_kwargs:
        src_kwargs["vector"] = tuple(float(x) for x in src_kwargs["vector"])
    if "items" in src_kwargs:
        src_kwargs["items"] = tuple(tuple(float(x) for x in v) for v in src_kwargs["items"])
    if "table" in src_kwargs:
        src_kwargs["table"] = tuple((float(p_), tuple(float(x) for x in v)) for p_, v in src_kwargs["table"])
    if src_name == "greedy_killer":
        keps = src_kwargs.get("epsilon", eps)
        if keps is not None:
            keps = _check_eps(keps, "greedy_killer epsilon")
            L = round(1.0 / keps)
            if abs(1.0 / keps - L) > 1e-9:
                raise ConfigError(
                    f"greedy_killer needs 1/epsilon to be an integer, got epsilon={keps!r}", EXIT_KILLER_EPSILON
                )
            src_kwargs["epsilon"] = keps
        elif command != "sweep":
            raise ConfigError("greedy_killer needs epsilon", EXIT_EPSILON)
    elif "epsilon" in src_kwargs:
        src_kwargs["epsilon"] = _check_eps(src_kwargs["epsilon"], "source epsilon")
    source = SourceSpec(src_name or "fuzz", **src_kwargs)

    trials = _int(raw.get("trials", 1), "trials")
    if trials < 1:
        raise ConfigError(f"trials must be positive, got {trials}")
    budget = _int(raw.get("oracle_budget", DEFAULT_BUDGET), "oracle_budget")
    if budget < 1:
        raise ConfigError(f"oracle_budget must be positive, got {budget}")
    workers = _int(raw.get("workers", harness.default_workers()), "workers")
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")
    sizes = raw.get("sizes") or ()
    if isinstance(sizes, str):
        sizes = [s for s in sizes.split(",") if s.strip()]
    sizes = tuple(_int(s, "size") for s in sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError(f"sizes must be strictly increasing, got {list(sizes)}")
    seed = _int(raw.get("seed", 0), "seed")
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return ExperimentConfig(
        algorithm=algorithm,
        source=source,
        seed=seed,
        trials=trials,
        sizes=sizes,
        oracle_budget=budget,
        workers=workers,
        out=raw.get("out"),
        trace=bool(raw.get("trace", False)),
        epsilons=epsilons,
    )


def parse_config(args: argparse.Namespace) -> ExperimentConfig:
    file_cfg: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fp:
                file_cfg = json.load(fp)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}", EXIT_IO) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config must be a JSON object")
    try:
        return build_config(_merge(file_cfg, args), args.command)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# outputs

def _write(out: Optional[str], name: str, text: str) -> None:
    if out is None:
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)


def _budget_code(records: Sequence[harness.TrialRecord]) -> int:
    if any(r.opt_method == "oracle" and not r.opt_exact for r in records):
        print("warning: oracle budget exhausted; some OPT values are lower bounds", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig) -> int:
    source = cfg.source
    if source.name in harness.IID_NAMES and source.m is None:
        raise ConfigError(f"{source.name} needs --m")
    trace: Optional[list] = [] if cfg.trace else None
    first = harness.run_trial(
        cfg.algorithm, source, harness.trial_seed(cfg.seed, 0), run_id=0,
        budget=cfg.oracle_budget, keep_owners=True, trace=trace,
    )
    records = [first]
    if cfg.trials > 1:
        records += harness.run_trials(
            cfg.algorithm, source, cfg.trials, cfg.seed,
            workers=cfg.workers, budget=cfg.oracle_budget,
        )[1:]
    print(" ".join(str(a) for a in first.owners))
    summary = {"config": cfg.echo(), "stats": harness.summarize(records)}
    if first.extras:
        summary["first_trial"] = first.extras
    _write(cfg.out, "report.csv", harness.report_csv(records))
    _write(cfg.out, "summary.json", harness.summary_json(summary))
    if trace is not None:
        _write(cfg.out, "trace.csv", harness.trace_csv(trace, first.n))
    s = summary["stats"]
    print(f"welfare={s['mean_alg_welfare']!r} opt={s['mean_opt']!r} ratio={s['mean_ratio']!r}", file=sys.stderr)
    if not s["ratio_sanity"]:
        return EXIT_VERIFY
    return _budget_code(records)


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.sizes:
        raise ConfigError("sweep needs --sizes")
    try:
        harness.family_member(cfg.source, cfg.sizes[0])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    series = harness.asymptotic_sweep(
        cfg.algorithm, cfg.source, cfg.sizes, cfg.trials, cfg.seed,
        workers=cfg.workers, budget=cfg.oracle_budget,
    )
    _write(cfg.out, "sweep.csv", series.csv_text())
    summary = {
        "config": cfg.echo(),
        "last_ratio": series.last_ratio,
        "slope": series.slope,
        "all_opt_exact": all(p.opt_exact for p in series.points),
    }
    _write(cfg.out, "summary.json", harness.summary_json(summary))
    sys.stdout.write(series.csv_text())
    print(f"slope={series.slope!r}", file=sys.stderr)
    return EXIT_OK if summary["all_opt_exact"] else EXIT_BUDGET


def cmd_iid(cfg: ExperimentConfig) -> int:
    source = cfg.source
    if source.name not in harness.IID_NAMES:
        raise ConfigError(f"iid needs a sampler source ({', '.join(harness.IID_NAMES)}), got {source.name!r}")
    if source.m is None:
        raise ConfigError("iid needs --m")
    res = harness.monte_carlo_iid(
        cfg.algorithm, source, source.m, cfg.trials, cfg.seed,
        workers=cfg.workers, budget=cfg.oracle_budget,
    )
    summary = {
        "config": cfg.echo(),
        "mean_alg_welfare": res.mean_alg,
        "half_width": res.half_width,
        "mean_opt": res.mean_opt,
        "ratio_of_means": res.ratio_of_means,
        "opt_method": res.opt_method,
        "opt_exact": res.opt_exact,
    }
    _write(cfg.out, "report.csv", harness.report_csv(res.records))
    _write(cfg.out, "summary.json", harness.summary_json(summary))
    print(harness.summary_json(summary), end="")
    return EXIT_OK if res.opt_exact or res.mean_opt is None else _budget_code(res.records)


def fuzz_corpus(seed: int, count: int, max_m: int = 2000) -> list[Instance]:
    """Deterministic uniform-value sequences, ``n`` in {2, 3}."""
    rng = random.Random(harness.trial_seed(seed, 0, 23))
    corpus = []
    for _ in range(count):
        n = rng.choice((2, 3))
        m = rng.randint(1, max_m)
        corpus.append(Instance(n, tuple(tuple(rng.random() for _ in range(n)) for _ in range(m))))
    return corpus


def _verify_one(args) -> dict:
    inst, eps = args
    owners = PassChain(inst.n, eps).run(inst.items).owner
    chk = harness.verify_pass_chain(inst, owners, eps, replay=False)
    return {
        "n": inst.n,
        "m": inst.m,
        "epsilon": eps,
        "agent_bound_ok": all(chk.agent_ok),
        "min_slack": min(chk.agent_slack),
        "balance_checks": chk.balance_checks,
        "balance_violations": len(chk.balance_violations),
    }


def ratio_sanity_suite(seed: int, count: int, budget: int) -> dict:
    """Every allocator on small random instances: ALG <= OPT within 1e-9."""
    rng = random.Random(harness.trial_seed(seed, 0, 29))
    specs = [harness.AlgorithmSpec("random"), harness.AlgorithmSpec("round_robin")]
    specs += [harness.AlgorithmSpec("greedy", phi=ph, p=p) for ph, p in PHI_FAMILY]
    specs += [harness.AlgorithmSpec("pass_chain", 0.25), harness.AlgorithmSpec("discounted", 0.25)]
    worst = 0.0
    bad = 0
    inexact = 0
    for t in range(count):
        n = rng.choice((2, 3))
        m = rng.randint(1, 9)
        inst = Instance(n, tuple(tuple(rng.random() for _ in range(n)) for _ in range(m)))
        res = opt_exact(inst, budget)
        if not res.exact:
            inexact += 1
            continue
        for spec in specs:
            alloc = spec.build(n, harness.trial_seed(seed, t, 31)).run(inst.items)
            w = min(alloc.utilities)
            if res.opt_value > 0:
                ratio = w / res.opt_value
                worst = max(worst, ratio)
                bad += ratio > 1 + 1e-9
    return {"instances": count, "worst_ratio": worst, "violations": bad, "inexact": inexact}


def cmd_verify(cfg: ExperimentConfig) -> int:
    epsilons = cfg.epsilons
    if cfg.source.name == "replay":
        inst, _ = load_instance(cfg.source.path)
        corpus = [inst]
    else:
        corpus = fuzz_corpus(cfg.seed, cfg.trials if cfg.trials > 1 else 60, cfg.source.m or 2000)
    jobs = [(inst, eps) for eps in epsilons for inst in corpus]
    rows = harness.parallel_map(_verify_one, jobs, cfg.workers)
    agent_fail = sum(not r["agent_bound_ok"] for r in rows)
    balance_fail = sum(r["balance_violations"] for r in rows)
    sanity = ratio_sanity_suite(cfg.seed, 50, cfg.oracle_budget)
    flags = {
        "proportionality_bound": agent_fail == 0,
        "type_balance": balance_fail == 0,
        "ratio_sanity": sanity["violations"] == 0,
    }
    summary = {
        "config": cfg.echo(),
        "epsilons": list(epsilons),
        "sequences": len(corpus),
        "agent_bound_failures": agent_fail,
        "balance_violations": balance_fail,
        "balance_checks": sum(r["balance_checks"] for r in rows),
        "min_slack": min(r["min_slack"] for r in rows),
        "ratio_sanity": sanity,
        "passed": flags,
    }
    _write(cfg.out, "summary.json", harness.summary_json(summary))
    for name, ok in flags.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(flags.values()) else EXIT_VERIFY


def cmd_oracle(path: str, budget: int) -> int:
    try:
        inst, _ = load_instance(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", EXIT_IO) from None
    except InstanceError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    res = opt_exact(inst, budget)
    print(json.dumps({
        "opt": res.opt_value,
        "witness": res.witness.owner,
        "nodes": res.nodes_explored,
        "exact": res.exact,
    }, sort_keys=True))
    return EXIT_OK if res.exact else EXIT_BUDGET


# --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--algorithm", metavar="NAME")
    p.add_argument("--epsilon", type=float, metavar="F")
    p.add_argument("--phi", metavar="NAME")
    p.add_argument("--p", type=float, metavar="F", help="exponent for phi=power")
    p.add_argument("--seed", metavar="U64")
    p.add_argument("--source", metavar="NAME")
    p.add_argument("--instance", metavar="PATH", help="JSONL file for the replay source")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--i-star", dest="i_star", type=int)
    p.add_argument("--vector", metavar="A,B,...", help="value vector for the constant sampler")
    p.add_argument("--r", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--oracle-budget", dest="oracle_budget", type=int)
    p.add_argument("--out", metavar="DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxmin", description="Online max-min fair allocation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="one experiment: report CSV + summary JSON")
    _common(run)
    run.add_argument("--trace", action="store_true", help="write a per-step trace of the first trial")
    sweep = sub.add_parser("sweep", help="size grid on a source family")
    _common(sweep)
    sweep.add_argument("--sizes", metavar="A,B,...")
    iid = sub.add_parser("iid", help="Monte-Carlo i.i.d. arrivals")
    _common(iid)
    verify = sub.add_parser("verify", help="pass-chain guarantee and ratio sanity suites")
    _common(verify)
    verify.add_argument("--epsilons", metavar="A,B,...")
    orc = sub.add_parser("oracle", help="exact optimum of one instance file")
    orc.add_argument("path")
    orc.add_argument("--oracle-budget", dest="oracle_budget", type=int, default=DEFAULT_BUDGET)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "oracle":
            if args.oracle_budget < 1:
                raise ConfigError(f"oracle_budget must be positive, got {args.oracle_budget}")
            return cmd_oracle(args.path, args.oracle_budget)
        cfg = parse_config(args)
        return {"run": cmd_run, "sweep": cmd_sweep, "iid": cmd_iid, "verify": cmd_verify}[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
