"""Domain types shared by the allocators, adversaries, oracle and harness.

Agents are indexed ``0 .. n-1`` throughout.  A value vector is a plain tuple of
floats; an :class:`Instance` is an immutable sequence of them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO, Union

ValueVector = tuple[float, ...]

#: ``ind(0)``.  Greater than every integer and equal only to itself.
INFINITY = math.inf

ExtendedIndex = Union[int, float]

# log-space distance under which ind snaps to the nearest integer
_SNAP = 1e-9
# relative slack tolerated by the sandwich (1-eps)^(k+1) < x <= (1-eps)^k
_SANDWICH_RTOL = 1e-12


class InstanceError(ValueError):
    """Malformed instance data (ragged rows, negative values, bad cap)."""


def as_value_vector(values: Iterable[float], n: int | None = None, eta: float | None = None) -> ValueVector:
    v = tuple(float(x) for x in values)
    if n is not None and len(v) != n:
        raise InstanceError(f"value vector has {len(v)} entries, expected {n}")
    for x in v:
        if not x >= 0 or math.isinf(x):
            raise InstanceError(f"values must be finite and nonnegative, got {x!r}")
        if eta is not None and x > eta:
            raise InstanceError(f"value {x!r} exceeds declared cap eta={eta!r}")
    return v


@dataclass(frozen=True)
class Instance:
    """An ordered, immutable item sequence for ``n`` agents."""

    n: int
    items: tuple[ValueVector, ...] = ()
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InstanceError(f"n must be >= 1, got {self.n}")
        if not self.eta > 0:
            raise InstanceError(f"eta must be positive, got {self.eta}")
        items = tuple(as_value_vector(v, self.n, self.eta) for v in self.items)
        object.__setattr__(self, "items", items)

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[float]], n: int | None = None, eta: float | None = None) -> "Instance":
        rows = [tuple(float(x) for x in r) for r in rows]
        if n is None:
            if not rows:
                raise InstanceError("cannot infer n from an empty row list")
            n = len(rows[0])
        if eta is None:
            eta = max([1.0] + [x for r in rows for x in r])
        return cls(n=n, items=tuple(rows), eta=eta)

    @property
    def m(self) -> int:
        return len(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def total_values(self) -> list[float]:
        """``v_i(M)`` for every agent."""
        totals = [0.0] * self.n
        for v in self.items:
            for i in range(self.n):
                totals[i] += v[i]
        return totals

    def append(self, v: Iterable[float]) -> "Instance":
        return Instance(self.n, self.items + (tuple(v),), self.eta)


@dataclass
class Allocation:
    """Owners of arrived items plus per-agent accumulated utility."""

    n: int
    owner: list[int] = field(default_factory=list)
    utilities: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.utilities:
            self.utilities = [0.0] * self.n

    def assign(self, v: ValueVector, agent: int) -> None:
        self.owner.append(agent)
        self.utilities[agent] += v[agent]

    def bundles(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for j, a in enumerate(self.owner):
            out[a].append(j)
        return out

    @classmethod
    def from_owners(cls, inst: Instance, owner: Sequence[int]) -> "Allocation":
        if len(owner) != inst.m:
            raise InstanceError(f"{len(owner)} owners for {inst.m} items")
        alloc = cls(inst.n)
        for v, a in zip(inst.items, owner):
            if not 0 <= a < inst.n:
                raise InstanceError(f"owner {a} out of range for n={inst.n}")
            alloc.assign(v, a)
        return alloc


def utilities_of(inst: Instance, owner: Sequence[int]) -> list[float]:
    """Recompute per-agent utilities from ownership, summing in arrival order."""
    u = [0.0] * inst.n
    for v, a in zip(inst.items, owner):
        u[a] += v[a]
    return u


def egalitarian_welfare(alloc: Allocation, inst: Instance) -> float:
    """Minimum utility over agents (0.0 for the empty instance)."""
    if alloc.n != inst.n:
        raise InstanceError(f"allocation has n={alloc.n}, instance has n={inst.n}")
    if len(alloc.owner) != inst.m:
        raise InstanceError(f"allocation covers {len(alloc.owner)} items, instance has {inst.m}")
    return min(utilities_of(inst, alloc.owner))


def check_epsilon(epsilon: float) -> float:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    return float(epsilon)


def ind(x: float, epsilon: float) -> ExtendedIndex:
    """Discretized value index ``floor(log_{1-eps} x)``; ``INFINITY`` for ``x == 0``.

    Values above 1 give negative indices.  The log-space result is snapped to
    an integer when within 1e-9 of it, then nudged so that
    ``(1-eps)**(k+1) < x <= (1-eps)**k`` holds up to 1e-12 relative slack.
    """
    check_epsilon(epsilon)
    if x < 0:
        raise ValueError(f"ind is undefined for negative values, got {x!r}")
    if x == 0:
        return INFINITY
    base = 1.0 - epsilon
    t = math.log(x) / math.log(base)
    k = round(t)
    if abs(t - k) > _SNAP:
        k = math.floor(t)
    # guard the sandwich against log rounding far from an integer power
    while x > base**k * (1.0 + _SANDWICH_RTOL):
        k -= 1
    while x * (1.0 + _SANDWICH_RTOL) <= base ** (k + 1):
        k += 1
    return int(k)


@dataclass(frozen=True)
class TypeKey:
    """Value-descending agent order plus the discretized index prefix."""

    tau: tuple[int, ...]
    w: tuple[ExtendedIndex, ...]

    def prefix(self, k: int) -> "TypeKey":
        return TypeKey(self.tau, self.w[:k])


def value_order(v: Sequence[float]) -> tuple[int, ...]:
    """Agents by value descending, ties by ascending index."""
    return tuple(sorted(range(len(v)), key=lambda i: (-v[i], i)))


def item_type(v: Sequence[float], epsilon: float) -> TypeKey:
    tau = value_order(v)
    return TypeKey(tau, tuple(ind(v[a], epsilon) for a in tau))


# --------------------------------------------------------------------------
# JSON Lines instance files

def dump_instance(inst: Instance, fp: TextIO, **meta) -> None:
    header = {"n": inst.n, "eta": inst.eta}
    header.update(meta)
    fp.write(json.dumps(header, sort_keys=True) + "\n")
    for v in inst.items:
        fp.write(json.dumps(list(v)) + "\n")


def parse_instance(lines: Iterable[str]) -> tuple[Instance, dict]:
    """Parse JSONL; returns the instance and its metadata object (possibly empty)."""
    meta: dict = {}
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"line {lineno}: {exc.msg}") from exc
        if isinstance(obj, dict):
            if rows or meta:
                raise InstanceError(f"line {lineno}: metadata object must be the first line")
            meta = obj
            continue
        if not isinstance(obj, list):
            raise InstanceError(f"line {lineno}: expected an array of values")
        if rows and len(obj) != len(rows[0]):
            raise InstanceError(f"line {lineno}: ragged row ({len(obj)} values, expected {len(rows[0])})")
        if any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in obj):
            raise InstanceError(f"line {lineno}: non-numeric value")
        rows.append(obj)
    n = meta.get("n")
    if n is None:
        if not rows:
            raise InstanceError("empty instance file needs a metadata line with n")
        n = len(rows[0])
    if rows and len(rows[0]) != n:
        raise InstanceError(f"rows have {len(rows[0])} values but metadata says n={n}")
    eta = meta.get("eta")
    if eta is None:
        eta = max([1.0] + [float(x) for r in rows for x in r])
    return Instance(int(n), tuple(tuple(r) for r in rows), float(eta)), meta


def load_instance(path: str | Path) -> tuple[Instance, dict]:
    with open(path) as fp:
        return parse_instance(fp)


def save_instance(inst: Instance, path: str | Path, **meta) -> None:
    with open(path, "w") as fp:
        dump_instance(inst, fp, **meta)
