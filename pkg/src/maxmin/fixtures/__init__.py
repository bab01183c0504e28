"""Small hand-checkable instances used by tests and the CLI."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..core import Instance, load_instance

# two agents (Alice, Bob) and six snacks
SNACKS = Instance(
    2,
    (
        (0.7, 0.5),
        (1.0, 0.1),
        (0.8, 0.7),
        (0.9, 0.2),
        (0.7, 0.6),
        (0.8, 0.0),
    ),
)
# everything to whoever values it more
SNACKS_GREEDY_OWNERS = (0, 0, 0, 0, 0, 0)
# alternate picks
SNACKS_ALTERNATE_OWNERS = (0, 1, 0, 1, 0, 1)

# three agents, pass-chain at eps = 0.5; values are 0.5 ** index
PASS_CHAIN_INDICES = ((0, 1, 2), (0, 2, 1), (0, 1, 3), (0, 3, 1), (0, 1, 4), (0, 4, 1))
PASS_CHAIN_EPSILON = 0.5
PASS_CHAIN_OWNERS = (0, 0, 1, 2, 0, 0)

# decisions fed to the deficiency adversary (n = 3) and the states it must show
DEFICIENCY_DECISIONS = (0, 1, 0, 2, 2, 1)
DEFICIENCY_STATES = (
    (0, 0, 0),
    (-2, 1, 1),
    (-1, -1, 2),
    (-3, 0, 3),
    (-2, 1, 1),
    (-1, 2, -1),
)


def fixture_path(name: str) -> Path:
    return Path(str(resources.files(__name__).joinpath(name)))


def pass_chain_instance() -> Instance:
    inst, _ = load_instance(fixture_path("pass_chain_example.jsonl"))
    return inst
