"""Experiment harness: trials, ratio estimates, sweeps and guarantee checks.

Per-trial seeds come from a counter-based split of a master seed
(:func:`trial_seed`), and results are always ordered by trial index, so the
worker count never changes any output.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from .adversaries import (
    IID_SOURCES as IID_NAMES,
    DeficiencyAdversary,
    GreedyKiller,
    IIDSampler,
    Source,
    SourceSpec,
    make_source,
)
from .algorithms import ALGORITHMS, Allocator, PassChain, make_allocator
from .core import Instance, check_epsilon, item_type, utilities_of
from .oracle import DEFAULT_BUDGET, opt_exact

Z95 = 1.959963984540054
# sequences longer than this are not handed to the exact oracle automatically
ORACLE_MAX_ITEMS = 24
ALLOCATOR_STREAM = 0
SOURCE_STREAM = 1


def trial_seed(master: int, index: int, stream: int = 0) -> int:
    """64-bit seed for trial ``index`` derived from ``master`` and a stream id."""
    ss = np.random.SeedSequence([int(master) & (2**64 - 1), index, stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def default_workers() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    epsilon: Optional[float] = None
    phi: str = "identity"
    p: Optional[float] = None

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise KeyError(f"unknown algorithm {self.name!r}; choose from {ALGORITHMS}")
        if self.name in ("pass_chain", "discounted"):
            if self.epsilon is None:
                raise ValueError(f"{self.name} requires epsilon")
            check_epsilon(self.epsilon)

    @property
    def deterministic(self) -> bool:
        return self.name != "random"

    def build(self, n: int, seed: int = 0) -> Allocator:
        return make_allocator(self.name, n, epsilon=self.epsilon, phi=self.phi, p=self.p, seed=seed)

    def label(self) -> str:
        if self.name == "greedy":
            return f"greedy:{self.phi}" + (f"({self.p})" if self.p is not None else "")
        if self.epsilon is not None:
            return f"{self.name}:eps={self.epsilon}"
        return self.name


@dataclass
class TrialRecord:
    run_id: int
    algorithm: str
    source: str
    seed: int
    n: int
    m: int
    welfare: float
    opt: Optional[float] = None
    opt_exact: bool = False
    opt_method: str = "none"
    owners: Optional[list[int]] = None
    prefix_welfare: Optional[list[float]] = None
    extras: dict = field(default_factory=dict)
    items: Optional[tuple] = field(default=None, repr=False)

    @property
    def ratio(self) -> Optional[float]:
        if self.opt is None or self.opt <= 0:
            return None
        return self.welfare / self.opt


def _source_extras(source: Source) -> dict:
    if isinstance(source, DeficiencyAdversary):
        return {
            "broke": source.broke,
            "capped": source.capped,
            "i_star": source.i_star,
            "j_star": source.j_star,
            "rounds": source.rounds,
        }
    if isinstance(source, GreedyKiller):
        return {"branch": source.branch, "to_second": source.to_second, "proof_opt": source.proof_opt()}
    return {}


def solve_opt(
    inst: Instance,
    source: Optional[Source] = None,
    mode: str = "auto",
    budget: int = DEFAULT_BUDGET,
) -> tuple[Optional[float], bool, str]:
    """(opt, exact, method) where method is certified/oracle/none."""
    if mode == "none":
        return None, False, "none"
    if mode == "auto" and source is not None:
        cert = source.certified_opt(inst)
        if cert is not None:
            return float(cert), True, "certified"
    if mode == "oracle" or inst.m <= ORACLE_MAX_ITEMS:
        res = opt_exact(inst, budget)
        return res.opt_value, res.exact, "oracle"
    return None, False, "none"


def run_trial(
    algorithm: AlgorithmSpec,
    source: SourceSpec | Source,
    seed: int = 0,
    m: Optional[int] = None,
    *,
    run_id: int = 0,
    opt_mode: str = "auto",
    budget: int = DEFAULT_BUDGET,
    keep_owners: bool = False,
    keep_items: bool = False,
    prefix: bool = False,
    trace: Optional[list] = None,
) -> TrialRecord:
    """Feed one source to one fresh allocator until STOP (or ``m`` items).

    Adaptive sources see each decision before producing the next item.  When
    ``trace`` is a list, one ``(j, agent, scores, welfare_so_far)`` row is
    appended per step.
    """
    if isinstance(source, SourceSpec):
        src = make_source(source, trial_seed(seed, 0, SOURCE_STREAM))
    else:
        src = source
    alloc = algorithm.build(src.n, trial_seed(seed, 0, ALLOCATOR_STREAM))
    items: list = []
    owners: list[int] = []
    prefix_w: list[float] = []
    last = None
    while m is None or len(items) < m:
        v = src.next_item(last)
        if v is None:
            break
        d = alloc.step(v)
        items.append(v)
        owners.append(d.agent)
        last = d.agent
        if prefix or trace is not None:
            w = min(alloc.utilities)
            if prefix:
                prefix_w.append(w)
            if trace is not None:
                trace.append((len(items), d.agent, d.scores, w))
    inst = Instance(src.n, tuple(items), max([1.0] + [max(v) for v in items]))
    welfare = min(utilities_of(inst, owners))
    opt, exact, method = solve_opt(inst, src, opt_mode, budget)
    return TrialRecord(
        run_id=run_id,
        algorithm=algorithm.label(),
        source=source.label() if isinstance(source, SourceSpec) else src.name,
        seed=seed,
        n=src.n,
        m=inst.m,
        welfare=welfare,
        opt=opt,
        opt_exact=exact,
        opt_method=method,
        owners=owners if keep_owners else None,
        prefix_welfare=prefix_w if prefix else None,
        extras=_source_extras(src),
        items=inst.items if keep_items else None,
    )


def _run_trial_job(args) -> TrialRecord:
    algorithm, source, seed, m, run_id, opt_mode, budget, keep_owners = args
    return run_trial(
        algorithm, source, seed, m, run_id=run_id, opt_mode=opt_mode,
        budget=budget, keep_owners=keep_owners,
    )


def parallel_map(fn: Callable, jobs: Sequence, workers: int = 1) -> list:
    """``map`` over a process pool; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    chunk = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=chunk))


def run_trials(
    algorithm: AlgorithmSpec,
    source: SourceSpec,
    trials: int,
    master_seed: int = 0,
    *,
    m: Optional[int] = None,
    workers: int = 1,
    opt_mode: str = "auto",
    budget: int = DEFAULT_BUDGET,
    keep_owners: bool = False,
) -> list[TrialRecord]:
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    jobs = [
        (algorithm, source, trial_seed(master_seed, t), m, t, opt_mode, budget, keep_owners)
        for t in range(trials)
    ]
    return parallel_map(_run_trial_job, jobs, workers)


# --------------------------------------------------------------------------
# ratio estimates

def mean_ci(xs: Sequence[float]) -> tuple[float, float]:
    """Mean and 95% normal-approximation half-width."""
    arr = np.asarray(xs, dtype=float)
    if arr.size == 0:
        raise ValueError("no samples")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(Z95 * arr.std(ddof=1) / math.sqrt(arr.size))


@dataclass
class RatioEstimate:
    ratio: Optional[float]
    half_width: Optional[float]
    mean_alg: float
    opt: Optional[float]
    trials: int
    applicable: bool = True


def estimate_strict_ratio(
    algorithm: AlgorithmSpec,
    source: SourceSpec,
    trials: int = 1000,
    master_seed: int = 0,
    *,
    workers: int = 1,
    budget: int = DEFAULT_BUDGET,
) -> RatioEstimate:
    """``E[ALG] / OPT`` on one instance; a single run for deterministic allocators.

    Randomized sources (e.g. a random permutation) are resampled per trial, so
    ``OPT`` must be the same for every realization; it is asserted here.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    t = 1 if algorithm.deterministic else trials
    recs = run_trials(algorithm, source, t, master_seed, workers=workers, budget=budget)
    opts = {r.opt for r in recs}
    if any(not r.opt_exact for r in recs) or len(opts) != 1:
        raise ValueError("strict ratio needs one exactly known OPT")
    opt = opts.pop()
    mean, hw = mean_ci([r.welfare for r in recs])
    if not opt or opt <= 0:
        return RatioEstimate(None, None, mean, opt, t, applicable=False)
    return RatioEstimate(mean / opt, hw / opt, mean, opt, t)


@dataclass
class SweepPoint:
    size: int
    mean_opt: float
    mean_alg: float
    mean_ratio: float
    half_width: float
    opt_exact: bool


@dataclass
class SweepSeries:
    algorithm: str
    family: str
    points: list[SweepPoint]
    slope: Optional[float]

    @property
    def last_ratio(self) -> Optional[float]:
        return self.points[-1].mean_ratio if self.points else None

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size", "mean_opt", "mean_alg", "mean_ratio", "half_width", "opt_exact"])
        for p in self.points:
            w.writerow([p.size, fmt(p.mean_opt), fmt(p.mean_alg), fmt(p.mean_ratio), fmt(p.half_width), int(p.opt_exact)])
        return buf.getvalue()


def family_member(base: SourceSpec, size: int) -> SourceSpec:
    """Member of a parametrized source family at ``size``."""
    name = base.name
    if name == "two_phase":
        return replace(base, k=size)
    if name == "greedy_killer":
        return replace(base, epsilon=1.0 / size)
    if name == "deficiency":
        return replace(base, c=float(size))
    if name == "permutation":
        return replace(base, n=size, tau=None)
    if name in ("matching", "constant", "uniform", "discrete"):
        return replace(base, m=size)
    raise KeyError(f"source {name!r} has no size parameter")


def ols_slope(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    if len(set(x)) < 2:
        return None
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def asymptotic_sweep(
    algorithm: AlgorithmSpec,
    family: SourceSpec,
    sizes: Sequence[int],
    trials: int = 1,
    master_seed: int = 0,
    *,
    workers: int = 1,
    budget: int = DEFAULT_BUDGET,
) -> SweepSeries:
    """Mean ratio per size plus the OLS slope of ALG against OPT.

    Both the last-size ratio and the slope are estimates of the asymptotic
    ratio; the slope is ``None`` with fewer than two distinct OPT levels.
    """
    sizes = list(sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"sizes must be strictly increasing, got {sizes}")
    t = 1 if algorithm.deterministic else trials
    points = []
    xs, ys = [], []
    for idx, size in enumerate(sizes):
        spec = family_member(family, size)
        recs = run_trials(algorithm, spec, t, trial_seed(master_seed, idx, 7), workers=workers, budget=budget)
        with_opt = [r for r in recs if r.opt is not None]
        if not with_opt:
            raise ValueError(f"no OPT available for {spec.label()}")
        mean_opt = float(np.mean([r.opt for r in with_opt]))
        mean_alg, hw = mean_ci([r.welfare for r in recs])
        ratios = [r.ratio for r in with_opt if r.ratio is not None]
        points.append(SweepPoint(
            size, mean_opt, mean_alg,
            float(np.mean(ratios)) if ratios else math.nan,
            hw / mean_opt if mean_opt > 0 else math.nan,
            all(r.opt_exact for r in recs),
        ))
        xs.append(mean_opt)
        ys.append(mean_alg)
    return SweepSeries(algorithm.label(), family.name, points, ols_slope(xs, ys))


@dataclass
class IIDResult:
    mean_alg: float
    half_width: float
    mean_opt: Optional[float]
    ratio_of_means: Optional[float]
    opt_method: str
    opt_exact: bool
    trials: int
    records: list[TrialRecord] = field(default_factory=list, repr=False)


def monte_carlo_iid(
    algorithm: AlgorithmSpec,
    sampler: SourceSpec,
    m: int,
    trials: int,
    master_seed: int = 0,
    *,
    workers: int = 1,
    budget: int = DEFAULT_BUDGET,
) -> IIDResult:
    """``E[ALG] / E[OPT]`` over ``trials`` i.i.d. sequences of length ``m``."""
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    spec = replace(sampler, m=m)
    recs = run_trials(algorithm, spec, trials, master_seed, workers=workers, budget=budget)
    mean_alg, hw = mean_ci([r.welfare for r in recs])
    if any(r.opt is None for r in recs):
        return IIDResult(mean_alg, hw, None, None, "unavailable", False, trials, recs)
    mean_opt = float(np.mean([r.opt for r in recs]))
    methods = {r.opt_method for r in recs}
    ratio = mean_alg / mean_opt if mean_opt > 0 else None
    return IIDResult(
        mean_alg, hw, mean_opt, ratio, "+".join(sorted(methods)),
        all(r.opt_exact for r in recs), trials, recs,
    )


# --------------------------------------------------------------------------
# guarantee checks for the pass-chain allocator

class TraceMismatch(ValueError):
    """Ownership trace was not produced by the pass-chain allocator at this epsilon."""


def additive_term(n: int, epsilon: float, eta: float = 1.0) -> float:
    """``(n!)**2 / eps**n``, scaled by the value cap when it exceeds 1."""
    return math.factorial(n) ** 2 / epsilon**n * max(1.0, eta)


@dataclass
class PassChainCheck:
    epsilon: float
    n: int
    m: int
    agent_ok: list[bool]
    agent_slack: list[float]
    balance_checks: int
    balance_violations: list[tuple] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.agent_ok) and not self.balance_violations


def verify_pass_chain(
    inst: Instance,
    owners: Sequence[int],
    epsilon: float,
    slack: float = 1e-6,
    replay: bool = True,
) -> PassChainCheck:
    """Check the per-agent proportionality bound and the per-type balance invariant.

    Per agent: ``v_i(A_i) >= (1-eps)/n * v_i(M) - (n!)**2/eps**n - slack``.
    Per type bucket, after every arrival: ``|A_tau(k) ∩ E| >= |E|/n - 1``
    where ``E`` holds the arrived items sharing ``(tau, w[:k])``.
    """
    check_epsilon(epsilon)
    n, m = inst.n, inst.m
    if len(owners) != m:
        raise TraceMismatch(f"{len(owners)} owners for {m} items")
    if replay:
        expect = PassChain(n, epsilon).run(inst.items).owner
        if list(owners) != expect:
            first = next(j for j, (a, b) in enumerate(zip(owners, expect)) if a != b)
            raise TraceMismatch(f"trace diverges from pass_chain(eps={epsilon}) at item {first}")
    bucket = defaultdict(int)
    held = defaultdict(int)
    checks = 0
    bad = []
    for j, (v, a) in enumerate(zip(inst.items, owners)):
        t = item_type(v, epsilon)
        for k in range(1, n + 1):
            key = (t.tau, t.w[:k])
            bucket[key] += 1
            if a == t.tau[k - 1]:
                held[key] += 1
            checks += 1
            # |A ∩ E| >= |E|/n - 1  <=>  n|A ∩ E| >= |E| - n  (integers)
            if n * held[key] < bucket[key] - n:
                bad.append((j, key, held[key], bucket[key]))
    eta = max([0.0] + [max(v) for v in inst.items])
    util = utilities_of(inst, owners)
    total = inst.total_values()
    add = additive_term(n, epsilon, eta)
    slack_i = [util[i] - ((1 - epsilon) / n * total[i] - add) for i in range(n)]
    return PassChainCheck(epsilon, n, m, [s >= -slack for s in slack_i], slack_i, checks, bad)


# --------------------------------------------------------------------------
# matching-distribution success rate

def _matching_block(args) -> tuple[int, int]:
    algorithm, n, count, seed, budget = args
    sampler = IIDSampler("matching", n, trial_seed(seed, 0, SOURCE_STREAM))
    draws = sampler.sample(count * n)
    opt_cache: dict = {}
    alg_rng = np.random.default_rng(trial_seed(seed, 0, ALLOCATOR_STREAM))
    alg_seeds = alg_rng.integers(0, 2**63, size=count).tolist()
    feasible = success = 0
    for t in range(count):
        items = tuple(draws[t * n:(t + 1) * n])
        opt = opt_cache.get(items)
        if opt is None:
            opt = opt_exact(Instance(n, items), budget).opt_value
            opt_cache[items] = opt
        if opt < 1.0:
            continue
        feasible += 1
        alloc = algorithm.build(n, alg_seeds[t])
        for v in items:
            alloc.step(v)
        if min(alloc.utilities) >= 1.0:
            success += 1
    return feasible, success


@dataclass
class SuccessRate:
    algorithm: str
    n: int
    trials: int
    feasible: int
    success: int
    ceiling: float

    @property
    def rate(self) -> float:
        return self.success / self.feasible if self.feasible else math.nan

    @property
    def sigma(self) -> float:
        """Binomial standard error of the rate at the ceiling probability."""
        p = self.ceiling
        return math.sqrt(p * (1 - p) / self.feasible) if self.feasible else math.nan


def matching_success_rate(
    algorithm: AlgorithmSpec,
    n: int,
    trials: int,
    master_seed: int = 0,
    *,
    workers: int = 1,
    block: int = 5000,
    budget: int = DEFAULT_BUDGET,
) -> SuccessRate:
    """Success frequency given OPT = 1 on ``m = n`` draws from the matching distribution."""
    if trials < 1:
        raise ValueError("trials must be positive")
    jobs = []
    for b, start in enumerate(range(0, trials, block)):
        jobs.append((algorithm, n, min(block, trials - start), trial_seed(master_seed, b, 11), budget))
    parts = parallel_map(_matching_block, jobs, workers)
    feasible = sum(f for f, _ in parts)
    success = sum(s for _, s in parts)
    return SuccessRate(algorithm.label(), n, trials, feasible, success, (6 / 7) ** (n / 2))


# --------------------------------------------------------------------------
# reports

REPORT_COLUMNS = ["run_id", "algorithm", "source", "seed", "n", "m", "alg_welfare", "opt", "opt_exact", "ratio"]


def fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    return repr(float(x))


def report_csv(records: Iterable[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in records:
        w.writerow([r.run_id, r.algorithm, r.source, r.seed, r.n, r.m, fmt(r.welfare), fmt(r.opt), int(r.opt_exact), fmt(r.ratio)])
    return buf.getvalue()


def trace_csv(trace: Sequence[tuple], n: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "agent"] + [f"score_{i}" for i in range(n)] + ["welfare_so_far"])
    for j, agent, scores, welfare in trace:
        cells = [fmt(s) for s in scores] if scores is not None else [""] * n
        w.writerow([j, agent] + cells + [fmt(welfare)])
    return buf.getvalue()


def summary_json(obj: Any) -> str:
    """Canonical JSON (sorted keys, repr floats, NaN as null)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def summarize(records: Sequence[TrialRecord]) -> dict:
    welfare = [r.welfare for r in records]
    mean, hw = mean_ci(welfare)
    ratios = [r.ratio for r in records if r.ratio is not None]
    opts = [r.opt for r in records if r.opt is not None]
    sane = all(r.ratio <= 1 + 1e-9 for r in records if r.opt_exact and r.ratio is not None)
    return {
        "trials": len(records),
        "mean_alg_welfare": mean,
        "half_width": hw,
        "mean_opt": float(np.mean(opts)) if opts else None,
        "mean_ratio": float(np.mean(ratios)) if ratios else None,
        "ratio_of_means": mean / float(np.mean(opts)) if opts and len(opts) == len(records) and np.mean(opts) > 0 else None,
        "all_opt_exact": all(r.opt_exact for r in records),
        "ratio_sanity": sane,
    }
