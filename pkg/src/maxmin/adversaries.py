"""Item sources: static hard instances, adaptive adversaries and i.i.d. samplers.

Every source speaks one protocol.  :meth:`Source.next_item` receives the agent
that got the previously emitted item (``None`` on the first call) and returns
the next value vector, or ``None`` to stop.  Adaptive adversaries use the
feedback; static sources and samplers ignore it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Instance, ValueVector, as_value_vector, check_epsilon, load_instance
from .oracle import opt_two_agents_grouped

SQRT5 = math.sqrt(5.0)
GOLDEN_GAP = (3.0 - SQRT5) / 2.0  # ~0.381966


class AdversaryExhausted(RuntimeError):
    """``next_item`` was called after the source returned STOP."""


class Source:
    name = "source"
    adaptive = False

    def __init__(self, n: int):
        self.n = n
        self.transcript: list[int] = []
        self._stopped = False
        self._pending = False

    def next_item(self, last_agent: Optional[int] = None) -> Optional[ValueVector]:
        if self._stopped:
            raise AdversaryExhausted(f"{self.name}: next_item called after STOP")
        if self._pending:
            if last_agent is None:
                raise ValueError(f"{self.name}: decision for the previous item is missing")
            if not 0 <= last_agent < self.n:
                raise ValueError(f"agent {last_agent} out of range for n={self.n}")
            self.transcript.append(last_agent)
            self._observe(last_agent)
        v = self._emit()
        self._pending = v is not None
        if v is None:
            self._stopped = True
        return v

    def _observe(self, agent: int) -> None:
        pass

    def _emit(self) -> Optional[ValueVector]:
        raise NotImplementedError

    def certified_opt(self, inst: Instance) -> Optional[float]:
        """Exact OPT of the realized sequence when the construction fixes it."""
        return None


class StaticSource(Source):
    def __init__(self, inst: Instance, name: str = "static", opt: Optional[float] = None):
        super().__init__(inst.n)
        self.inst = inst
        self.name = name
        self._opt = opt
        self._pos = 0

    def _emit(self):
        if self._pos >= self.inst.m:
            return None
        self._pos += 1
        return self.inst.items[self._pos - 1]

    def certified_opt(self, inst):
        return self._opt


# --------------------------------------------------------------------------
# static generators

def _indicator_complement(n: int, i: int) -> ValueVector:
    return tuple(0.0 if a == i else 1.0 for a in range(n))


def gen_two_phase(n: int, k: int, i_star: int) -> Instance:
    """``k`` all-ones items, then ``(n-1)k`` items worthless to ``i_star``.

    Second-phase items are worth 1 to every other agent.  OPT is exactly ``k``.
    """
    if n < 1 or k < 1:
        raise ValueError(f"need n >= 1 and k >= 1, got n={n}, k={k}")
    if not 0 <= i_star < n:
        raise ValueError(f"i_star={i_star} out of range for n={n}")
    ones = (1.0,) * n
    tail = _indicator_complement(n, i_star)
    return Instance(n, (ones,) * k + (tail,) * ((n - 1) * k))


def gen_permutation_matching(tau: Sequence[int]) -> Instance:
    """Item ``j`` is worth 0 to ``tau[:j]`` and 1 to everyone else; OPT is 1."""
    n = len(tau)
    if sorted(tau) != list(range(n)):
        raise ValueError(f"{tau!r} is not a permutation of range({n})")
    items = []
    for j in range(n):
        gone = set(tau[:j])
        items.append(tuple(0.0 if a in gone else 1.0 for a in range(n)))
    return Instance(n, tuple(items))


# --------------------------------------------------------------------------
# adaptive adversaries

class ZeroRatioAdversary(Source):
    """All-ones item, then ``n-1`` items worthless to some agent other than its taker.

    Any deterministic allocator ends at welfare 0 while OPT is 1.  The zeroed
    agent is ``n-1`` unless agent ``n-1`` took the first item, then ``0``.
    """

    name = "zero_ratio"
    adaptive = True

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("zero-ratio adversary needs n >= 2")
        super().__init__(n)
        self.taker: Optional[int] = None
        self.zeroed: Optional[int] = None
        self._left = -1

    def _observe(self, agent):
        if self.taker is None:
            self.taker = agent
            self.zeroed = self.n - 1 if agent != self.n - 1 else 0
            self._left = self.n - 1

    def _emit(self):
        if self.taker is None:
            return (1.0,) * self.n
        if self._left == 0:
            return None
        self._left -= 1
        return _indicator_complement(self.n, self.zeroed)

    def certified_opt(self, inst):
        return 1.0


def deficiency_value(s: int, r: float) -> float:
    """``(s+1)**r - s**r`` for ``s >= 0``, else 1."""
    if s < 0:
        return 1.0
    return (s + 1) ** r - s**r


class DeficiencyAdversary(Source):
    """Deficiency-driven adversary against balanced deterministic allocators.

    Build phase: each agent values the next item by ``deficiency_value`` of its
    deficiency state ``s_i = rounds - n * |A_i|``.  Once some agent ``i`` holds
    ``v_i(A_i) <= v_i(M)/n - c`` the adversary records ``(i*, j*)`` and emits
    ``(n-1) j*`` items worthless to ``i*`` and worth 1 to everyone else.
    A round cap stops runs that never break; ``capped`` flags that outcome.
    """

    name = "deficiency"
    adaptive = True

    def __init__(self, n: int, r: float = 0.75, c: float = 1.0, cap: Optional[int] = None):
        if n < 2:
            raise ValueError("deficiency adversary needs n >= 2")
        if not 0.5 < r < 1.0:
            raise ValueError(f"r must lie in (1/2, 1), got {r!r}")
        if not c > 0:
            raise ValueError(f"c must be positive, got {c!r}")
        super().__init__(n)
        self.r = r
        self.c = c
        self.cap = cap if cap is not None else 10 * math.ceil(c ** (3 - r)) * n * n
        self.s = [0] * n
        self.held = [0.0] * n
        self.total = [0.0] * n
        self.phase = "build"
        self.rounds = 0
        self.i_star: Optional[int] = None
        self.j_star: Optional[int] = None
        self.opt_at_break: Optional[float] = None
        self.capped = False
        self._last: Optional[ValueVector] = None
        self._punish_left = 0

    def _observe(self, agent):
        if self.phase != "build":
            return
        v = self._last
        n = self.n
        for i in range(n):
            self.total[i] += v[i]
            self.s[i] += 1
        self.held[agent] += v[agent]
        self.s[agent] -= n
        for i in range(n):
            if self.held[i] <= self.total[i] / n - self.c:
                self.i_star, self.j_star = i, self.rounds
                self.opt_at_break = self.total[i]
                self.phase = "punish"
                self._punish_left = (n - 1) * self.rounds
                break

    def _emit(self):
        if self.phase == "build":
            if self.rounds >= self.cap:
                self.capped = True
                self.phase = "done"
                return None
            self.rounds += 1
            self._last = tuple(deficiency_value(s, self.r) for s in self.s)
            return self._last
        if self.phase == "punish" and self._punish_left > 0:
            self._punish_left -= 1
            return _indicator_complement(self.n, self.i_star)
        self.phase = "done"
        return None

    @property
    def broke(self) -> bool:
        return self.i_star is not None

    def certified_opt(self, inst):
        # i* values the punish items at 0 and everyone else can take j* of them
        return self.opt_at_break if self.broke else None


class GreedyKiller(Source):
    """Two-agent adversary against greedy-type allocators.

    ``L**2`` items ``(1, eps)`` with ``L = 1/eps``; if agent 1 (0-based) got at
    most ``(3-sqrt5)/2 * L**2`` of them, ``L`` items ``(1, 0)`` follow
    (branch "A"), otherwise ``floor((sqrt5-1)/2 L**2)`` items ``(1, 1)`` and
    ``ceil((1+sqrt5)/2 L**2)`` items ``(0, 1)`` (branch "B").
    """

    name = "greedy_killer"
    adaptive = True

    def __init__(self, epsilon: float):
        check_epsilon(epsilon)
        L = round(1.0 / epsilon)
        if L < 1 or abs(1.0 / epsilon - L) > 1e-9:
            raise ValueError(f"1/epsilon must be an integer, got epsilon={epsilon!r}")
        super().__init__(2)
        self.epsilon = float(epsilon)
        self.L = L
        self.phase1 = L * L
        self.to_second = 0
        self.branch: Optional[str] = None
        self._queue: list[tuple[ValueVector, int]] = []
        self._emitted = 0

    def _observe(self, agent):
        if self._emitted <= self.phase1 and agent == 1:
            self.to_second += 1

    def _emit(self):
        if self._emitted < self.phase1:
            self._emitted += 1
            return (1.0, self.epsilon)
        if self.branch is None:
            LL = self.L * self.L
            if self.to_second <= GOLDEN_GAP * LL:
                self.branch = "A"
                self._queue = [((1.0, 0.0), self.L)]
            else:
                self.branch = "B"
                self._queue = [
                    ((1.0, 1.0), math.floor((SQRT5 - 1.0) / 2.0 * LL)),
                    ((0.0, 1.0), math.ceil((1.0 + SQRT5) / 2.0 * LL)),
                ]
        while self._queue and self._queue[0][1] == 0:
            self._queue.pop(0)
        if not self._queue:
            return None
        v, left = self._queue[0]
        self._queue[0] = (v, left - 1)
        self._emitted += 1
        return v

    def proof_opt(self) -> Optional[float]:
        """OPT as stated by the construction: exact for A, a lower bound for B."""
        if self.branch == "A":
            return float(self.L)
        if self.branch == "B":
            return (1.0 + SQRT5) / 2.0 * self.L * self.L - 1.0
        return None

    def certified_opt(self, inst):
        return opt_two_agents_grouped(inst)


# --------------------------------------------------------------------------
# i.i.d. samplers

class IIDSampler:
    """Draws value vectors i.i.d. from one of a few distribution families."""

    KINDS = ("matching", "constant", "discrete", "uniform")

    def __init__(self, kind: str, n: int, seed: int = 0, *, vector=None, table=None, eta: float = 1.0):
        if kind not in self.KINDS:
            raise KeyError(f"unknown sampler {kind!r}; choose from {self.KINDS}")
        self.kind = kind
        self.n = n
        self.eta = eta
        self.rng = np.random.default_rng(seed)
        if kind == "matching":
            if n < 2 or n % 2:
                raise ValueError(f"matching distribution needs an even n >= 2, got {n}")
            support = [tuple(1.0 if a == i else 0.0 for a in range(n)) for i in range(n)]
            support += [
                tuple(1.0 if a in (2 * k, 2 * k + 1) else 0.0 for a in range(n))
                for k in range(n // 2)
            ]
            self.support = support
            self.probs = [2.0 / (3.0 * n)] * len(support)
        elif kind == "constant":
            if vector is None:
                raise ValueError("constant sampler needs a vector")
            self.support = [as_value_vector(vector, n)]
            self.probs = [1.0]
        elif kind == "discrete":
            if not table:
                raise ValueError("discrete sampler needs a table of (probability, vector)")
            self.probs = [float(p) for p, _ in table]
            self.support = [as_value_vector(v, n) for _, v in table]
            if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-12:
                raise ValueError(f"probabilities must be nonnegative and sum to 1, got {sum(self.probs)!r}")
        else:
            self.support = []
            self.probs = []

    def sample(self, m: int) -> list[ValueVector]:
        if self.kind == "uniform":
            return [tuple(row) for row in (self.rng.random((m, self.n)) * self.eta).tolist()]
        if len(self.support) == 1:
            return [self.support[0]] * m
        if self.kind == "matching":
            idx = self.rng.integers(len(self.support), size=m)
        else:
            idx = self.rng.choice(len(self.support), size=m, p=self.probs)
        return [self.support[k] for k in idx.tolist()]

    def draw(self) -> ValueVector:
        return self.sample(1)[0]

    def certified_opt(self, inst: Instance) -> Optional[float]:
        if self.kind == "constant" and self.n == 2:
            return opt_two_agents_grouped(inst)
        return None


def sample_matching_item(sampler: IIDSampler) -> ValueVector:
    if sampler.kind != "matching":
        raise ValueError("sampler is not a matching sampler")
    return sampler.draw()


class SamplerSource(StaticSource):
    """``m`` i.i.d. draws presented as a static sequence."""

    def __init__(self, sampler: IIDSampler, m: int):
        inst = Instance(sampler.n, tuple(sampler.sample(m)), max(1.0, sampler.eta))
        super().__init__(inst, name=f"iid_{sampler.kind}")
        self.sampler = sampler

    def certified_opt(self, inst):
        return self.sampler.certified_opt(inst)


# --------------------------------------------------------------------------
# name-based construction

SOURCES = (
    "two_phase", "permutation", "zero_ratio", "deficiency", "greedy_killer",
    "matching", "constant", "uniform", "discrete", "replay", "static",
)
IID_SOURCES = ("matching", "constant", "uniform", "discrete")


@dataclass(frozen=True)
class SourceSpec:
    name: str
    n: Optional[int] = None
    m: Optional[int] = None
    k: Optional[int] = None
    i_star: Optional[int] = None
    tau: Optional[tuple[int, ...]] = None
    r: float = 0.75
    c: float = 1.0
    cap: Optional[int] = None
    epsilon: Optional[float] = None
    vector: Optional[tuple[float, ...]] = None
    table: Optional[tuple[tuple[float, tuple[float, ...]], ...]] = None
    path: Optional[str] = None
    # inline value vectors for the "static" source
    items: Optional[tuple[tuple[float, ...], ...]] = None

    @classmethod
    def static(cls, inst: Instance) -> "SourceSpec":
        return cls("static", n=inst.n, m=inst.m, items=inst.items)

    def label(self) -> str:
        bits = [self.name]
        for key in ("n", "m", "k", "r", "c", "epsilon"):
            val = getattr(self, key)
            if val is None or (key in ("r", "c") and self.name != "deficiency"):
                continue
            bits.append(f"{key}={val}")
        if self.path:
            bits.append(f"path={self.path}")
        return ":".join(bits)


def make_source(spec: SourceSpec, seed: int = 0) -> Source:
    name = spec.name
    if name == "two_phase":
        n = spec.n or 2
        k = spec.k if spec.k is not None else (spec.m or 1)
        i_star = spec.i_star if spec.i_star is not None else n - 1
        return StaticSource(gen_two_phase(n, k, i_star), spec.label(), opt=float(k))
    if name == "permutation":
        if spec.tau is not None:
            tau = tuple(spec.tau)
        else:
            tau = tuple(np.random.default_rng(seed).permutation(spec.n or 2).tolist())
        return StaticSource(gen_permutation_matching(tau), spec.label(), opt=1.0)
    if name == "zero_ratio":
        return ZeroRatioAdversary(spec.n or 2)
    if name == "deficiency":
        return DeficiencyAdversary(spec.n or 2, spec.r, spec.c, spec.cap)
    if name == "greedy_killer":
        if spec.epsilon is None:
            raise ValueError("greedy_killer needs epsilon")
        return GreedyKiller(spec.epsilon)
    if name in IID_SOURCES:
        if spec.m is None:
            raise ValueError(f"{name} sampler needs a horizon m")
        n = spec.n or (len(spec.vector) if spec.vector else 2)
        sampler = IIDSampler(name, n, seed, vector=spec.vector, table=spec.table)
        return SamplerSource(sampler, spec.m)
    if name == "replay":
        if not spec.path:
            raise ValueError("replay needs a path")
        inst, _ = load_instance(spec.path)
        return StaticSource(inst, spec.label())
    if name == "static":
        items = spec.items or ()
        n = spec.n or (len(items[0]) if items else 1)
        return StaticSource(Instance(n, tuple(items), max([1.0] + [max(v) for v in items])), spec.label())
    raise KeyError(f"unknown source {name!r}; choose from {SOURCES}")
