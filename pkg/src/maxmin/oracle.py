"""Exact offline max-min optimum.

:func:`opt_exact` is a depth-first branch-and-bound over item-to-agent
assignments.  :func:`opt_brute_force` enumerates every assignment with numpy
and serves as the independent cross-check.  :func:`opt_two_agents_grouped`
solves two-agent instances with few distinct value vectors exactly by
enumerating per-class split counts.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import Allocation, Instance, ValueVector, utilities_of

DEFAULT_BUDGET = 2_000_000
# Relative widening of the search bound.  It covers rounding of the suffix
# sums (a few ulps for any practical m), so the widened bound dominates every
# reachable welfare.  Pruning compares against the incumbent widened by the
# same factor, i.e. values within 1e-12 relative count as ties.
BOUND_RTOL = 1e-12


@dataclass
class OracleResult:
    opt_value: float
    witness: Allocation
    nodes_explored: int
    exact: bool
    # B&B item order (original indices); depth d of the search assigns order[d]
    order: tuple[int, ...] = field(default=(), repr=False)


class _BudgetExhausted(Exception):
    pass


def opt_upper_bound(u: Sequence[float], remaining: Iterable[ValueVector]) -> float:
    """``min_i (u_i + v_i(R))``: welfare if every remaining item went to everyone."""
    tot = list(u)
    for v in remaining:
        for i, x in enumerate(v):
            tot[i] += x
    return min(tot)


def dual_upper_bound(u: Sequence[float], remaining: Iterable[ValueVector]) -> float:
    """Uniform-weight Lagrangian bound ``(sum_i u_i + sum_e max_i v_i(e)) / n``."""
    n = len(u)
    return (sum(u) + sum(max(v) for v in remaining)) / n


def _round_robin_owner(m: int, n: int) -> list[int]:
    return [j % n for j in range(m)]


def _poorest_first_owner(inst: Instance) -> list[int]:
    u = [0.0] * inst.n
    owner = []
    for v in inst.items:
        cand = [i for i in range(inst.n) if v[i] > 0] or list(range(inst.n))
        a = min(cand, key=lambda i: (u[i], -v[i], i))
        u[a] += v[a]
        owner.append(a)
    return owner


def opt_exact(
    inst: Instance,
    budget: int = DEFAULT_BUDGET,
    node_hook: Optional[Callable[[int, tuple[int, ...], float], None]] = None,
) -> OracleResult:
    """Branch-and-bound optimum of the egalitarian welfare.

    Items are assigned in descending max-value order.  A node is pruned when
    its upper bound is ``<=`` the incumbent, up to the ``BOUND_RTOL`` tie
    tolerance.  ``node_hook(depth, prefix, ub)``
    is called at every visited node with the agents chosen so far (in search
    order).  When more than ``budget`` nodes would be visited the incumbent is
    returned with ``exact=False``.
    """
    if budget < 1:
        raise ValueError(f"oracle budget must be positive, got {budget}")
    n, m = inst.n, inst.m
    if m == 0:
        return OracleResult(0.0, Allocation(n), 0, True, ())

    order = tuple(sorted(range(m), key=lambda j: (-max(inst.items[j]), j)))
    vals = [inst.items[j] for j in order]
    # suffix[d][i] = v_i of items order[d:]; smax[d] = sum of per-item maxima
    suffix = [[0.0] * n for _ in range(m + 1)]
    smax = [0.0] * (m + 1)
    for d in range(m - 1, -1, -1):
        v = vals[d]
        suffix[d] = [suffix[d + 1][i] + v[i] for i in range(n)]
        smax[d] = smax[d + 1] + max(v)

    best_owner = max(
        (_round_robin_owner(m, n), _poorest_first_owner(inst)),
        key=lambda o: min(utilities_of(inst, o)),
    )
    best = [min(utilities_of(inst, best_owner)), list(best_owner)]
    assign = [0] * m
    u = [0.0] * n
    nodes = 0

    def dfs(d: int) -> None:
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            raise _BudgetExhausted
        sd = suffix[d]
        ub = min(u[i] + sd[i] for i in range(n))
        dual = (sum(u) + smax[d]) / n
        if dual < ub:
            ub = dual
        ub += abs(ub) * BOUND_RTOL
        if node_hook is not None:
            node_hook(d, tuple(assign[:d]), ub)
        if ub <= best[0] + abs(best[0]) * BOUND_RTOL:
            return
        if d == m:
            owner = [0] * m
            for pos, j in enumerate(order):
                owner[j] = assign[pos]
            w = min(utilities_of(inst, owner))
            if w > best[0]:
                best[0], best[1] = w, owner
            return
        v = vals[d]
        children = sorted(range(n), key=lambda i: (v[i] <= 0, u[i], i))
        for i in children:
            assign[d] = i
            old = u[i]
            u[i] = old + v[i]
            dfs(d + 1)
            u[i] = old

    exact = True
    try:
        dfs(0)
    except _BudgetExhausted:
        exact = False
    witness = Allocation.from_owners(inst, best[1])
    return OracleResult(min(witness.utilities), witness, min(nodes, budget), exact, order)


def enumerate_welfare(inst: Instance) -> np.ndarray:
    """Welfare of all ``n**m`` assignments, index = base-n digits of the owners.

    Digit ``j`` (most significant first) is the owner of item ``j``; sums are
    accumulated in arrival order.
    """
    n, m = inst.n, inst.m
    total = n**m
    if total > 20_000_000:
        raise ValueError(f"{n}**{m} assignments is too many to enumerate")
    idx = np.arange(total, dtype=np.int64)
    util = np.zeros((total, n))
    rows = np.arange(total)
    for j, v in enumerate(inst.items):
        digit = (idx // n ** (m - 1 - j)) % n
        util[rows, digit] += np.asarray(v)[digit]
    return util.min(axis=1)


def opt_brute_force(inst: Instance) -> OracleResult:
    """Exhaustive optimum over all assignments."""
    n, m = inst.n, inst.m
    if m == 0:
        return OracleResult(0.0, Allocation(n), 1, True, ())
    welfare = enumerate_welfare(inst)
    k = int(np.argmax(welfare))
    owner = [(k // n ** (m - 1 - j)) % n for j in range(m)]
    witness = Allocation.from_owners(inst, owner)
    return OracleResult(min(witness.utilities), witness, n**m, True, tuple(range(m)))


def _best_split(u1: float, u2: float, p: float, q: float, c: int) -> tuple[float, int]:
    """Best ``t`` in ``[0, c]`` for ``min(u1 + p t, u2 + q (c - t))``."""
    cands = {0, c}
    if p + q > 0:
        t = (u2 + q * c - u1) / (p + q)
        for x in (math.floor(t), math.ceil(t)):
            cands.add(min(max(int(x), 0), c))
    best_t = max(sorted(cands), key=lambda t: min(u1 + p * t, u2 + q * (c - t)))
    return min(u1 + p * best_t, u2 + q * (c - best_t)), best_t


def opt_two_agents_grouped(inst: Instance, limit: int = 5_000_000) -> float:
    """Exact optimum for ``n == 2`` by class counting.

    Items a single agent values are given to that agent (never worse).  The
    remaining classes are split by enumeration except the largest, whose best
    split is found in closed form.
    """
    if inst.n != 2:
        raise ValueError("grouped oracle handles n == 2 only")
    u1 = u2 = 0.0
    classes: Counter = Counter()
    for v in inst.items:
        if v[1] == 0:
            u1 += v[0]
        elif v[0] == 0:
            u2 += v[1]
        else:
            classes[v] += 1
    if not classes:
        return min(u1, u2)
    groups = sorted(classes.items(), key=lambda kv: (kv[1], kv[0]))
    (p, q), c_last = groups[-1]
    rest = groups[:-1]
    size = 1
    for _, c in rest:
        size *= c + 1
    if size > limit:
        raise ValueError(f"{size} split combinations exceed the limit {limit}")
    best = -math.inf
    for split in itertools.product(*(range(c + 1) for _, c in rest)):
        a, b = u1, u2
        for ((x, y), c), t in zip(rest, split):
            a += x * t
            b += y * (c - t)
        w, _ = _best_split(a, b, p, q, c_last)
        if w > best:
            best = w
    return best
