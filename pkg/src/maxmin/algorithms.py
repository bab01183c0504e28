"""Online allocators.

Every allocator exposes the same streaming interface: :meth:`Allocator.step`
takes one value vector, returns the receiving agent wrapped in a
:class:`Decision`, and updates the allocator's own utilities.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .core import Allocation, ValueVector, check_epsilon, ind, value_order


@dataclass(frozen=True)
class Decision:
    agent: int
    scores: Optional[tuple[float, ...]] = None


class Allocator:
    """Base class; subclasses implement :meth:`_choose`."""

    name = "allocator"
    deterministic = True

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        self.n = n
        self.utilities = [0.0] * n
        self.steps = 0

    def _choose(self, v: Sequence[float]) -> Decision:
        raise NotImplementedError

    def step(self, v: Sequence[float]) -> Decision:
        if len(v) != self.n:
            raise ValueError(f"value vector of length {len(v)} for n={self.n}")
        d = self._choose(v)
        self.utilities[d.agent] += v[d.agent]
        self.steps += 1
        return d

    def run(self, items: Iterable[ValueVector]) -> Allocation:
        alloc = Allocation(self.n)
        for v in items:
            alloc.assign(v, self.step(v).agent)
        return alloc

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n})"


class RandomAllocator(Allocator):
    """Each item to an agent drawn uniformly at random."""

    name = "random"
    deterministic = False

    def __init__(self, n: int, seed: int = 0):
        super().__init__(n)
        self.seed = seed
        self.rng = random.Random(seed)

    def _choose(self, v):
        return Decision(self.rng.randrange(self.n))


class RoundRobin(Allocator):
    """Item ``j`` (0-based) goes to agent ``j mod n``."""

    name = "round_robin"

    def _choose(self, v):
        return Decision(self.steps % self.n)


# --------------------------------------------------------------------------
# greedy-type allocators

def _power(p: float) -> Callable[[float], float]:
    if not p > 0:
        raise ValueError(f"power phi needs p > 0, got {p!r}")
    return lambda x: x**p


PHI_BUILDERS: dict[str, Callable[..., Callable[[float], float]]] = {
    "identity": lambda: (lambda x: x),
    "sqrt": lambda: math.sqrt,
    "log1p": lambda: math.log1p,
    "power": _power,
}


def make_phi(name: str, p: float | None = None) -> Callable[[float], float]:
    if name not in PHI_BUILDERS:
        raise KeyError(f"unknown phi {name!r}; choose from {sorted(PHI_BUILDERS)}")
    if name == "power":
        return _power(0.5 if p is None else p)
    return PHI_BUILDERS[name]()


#: The closed family iterated by the greedy-type experiments.
PHI_FAMILY: tuple[tuple[str, float | None], ...] = (
    ("identity", None),
    ("sqrt", None),
    ("power", 0.25),
    ("power", 2.0),
    ("log1p", None),
)


class PhiEvaluationError(ArithmeticError):
    pass


class Greedy(Allocator):
    """Item to the agent with the largest marginal ``phi(u+v) - phi(u)``."""

    name = "greedy"

    def __init__(self, n: int, phi: str | Callable[[float], float] = "identity", p: float | None = None):
        super().__init__(n)
        if callable(phi):
            self.phi_name = getattr(phi, "__name__", "custom")
            self.phi = phi
        else:
            self.phi_name = phi if phi != "power" else f"power({0.5 if p is None else p})"
            self.phi = make_phi(phi, p)
        # the identity marginal is the value itself; skip the cancelling subtraction
        self._linear = self.phi_name == "identity"

    def _choose(self, v):
        if self._linear:
            scores = [float(x) for x in v]
            best = max(range(self.n), key=lambda i: (scores[i], -i))
            return Decision(best, tuple(scores))
        phi = self.phi
        scores = []
        for i in range(self.n):
            u = self.utilities[i]
            try:
                g = phi(u + v[i]) - phi(u)
            except (ValueError, OverflowError) as exc:
                raise PhiEvaluationError(f"phi failed at u={u!r}, v={v[i]!r}: {exc}") from exc
            if not math.isfinite(g):
                raise PhiEvaluationError(f"non-finite marginal {g!r} for agent {i} (u={u!r}, v={v[i]!r})")
            scores.append(g)
        best = 0
        for i in range(1, self.n):
            if scores[i] > scores[best]:
                best = i
        return Decision(best, tuple(scores))


# --------------------------------------------------------------------------
# pass-chain (type-wise chance passing) allocator

class PassChain(Allocator):
    """Deterministic allocator that buckets items by type and passes chances.

    For an arriving item the agents are scanned from the one valuing it least
    to the one valuing it most.  Agent at position ``i`` (1-based) takes the
    item once its counter for the type prefix of length ``i`` reaches ``i``.
    Counters live in a dict keyed by ``(tau, w[:i])``; only touched keys are
    stored.
    """

    name = "pass_chain"

    def __init__(self, n: int, epsilon: float):
        super().__init__(n)
        self.epsilon = check_epsilon(epsilon)
        self.counters: dict[tuple, int] = {}

    def _choose(self, v):
        eps = self.epsilon
        tau = value_order(v)
        w = tuple(ind(v[a], eps) for a in tau)
        x = self.counters
        for i in range(self.n, 0, -1):
            key = (tau, w[:i])
            c = x.get(key, 0) + 1
            if c == i:
                x[key] = 0
                return Decision(tau[i - 1])
            x[key] = c
        raise AssertionError("level-1 counter always fires")  # pragma: no cover


# --------------------------------------------------------------------------
# exponentially discounted allocator

class Discounted(Allocator):
    """Item to the agent maximizing ``(1-eps)**u_i * v_i``.

    Scores are compared in log space.  Ties, including the all-zero item, go
    to the lowest current utility and then the lowest index.
    """

    name = "discounted"

    def __init__(self, n: int, epsilon: float):
        super().__init__(n)
        self.epsilon = check_epsilon(epsilon)
        self.log_base = math.log1p(-self.epsilon)

    def scores(self, v: Sequence[float]) -> tuple[float, ...]:
        lb = self.log_base
        return tuple(
            u * lb + math.log(x) if x > 0 else -math.inf
            for u, x in zip(self.utilities, v)
        )

    def _choose(self, v):
        s = self.scores(v)
        u = self.utilities
        best = 0
        for i in range(1, self.n):
            if s[i] > s[best] or (s[i] == s[best] and u[i] < u[best]):
                best = i
        return Decision(best, s)


ALGORITHMS = ("random", "round_robin", "greedy", "pass_chain", "discounted")


def make_allocator(
    name: str,
    n: int,
    *,
    epsilon: float | None = None,
    phi: str = "identity",
    p: float | None = None,
    seed: int = 0,
) -> Allocator:
    if name == "random":
        return RandomAllocator(n, seed)
    if name == "round_robin":
        return RoundRobin(n)
    if name == "greedy":
        return Greedy(n, phi, p)
    if name == "pass_chain":
        if epsilon is None:
            raise ValueError("pass_chain requires epsilon")
        return PassChain(n, epsilon)
    if name == "discounted":
        if epsilon is None:
            raise ValueError("discounted requires epsilon")
        return Discounted(n, epsilon)
    raise KeyError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")
