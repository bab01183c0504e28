"""Online max-min fair allocation: allocators, adversaries, an exact oracle and a harness."""

from .adversaries import (
    DeficiencyAdversary,
    GreedyKiller,
    IIDSampler,
    SourceSpec,
    ZeroRatioAdversary,
    gen_permutation_matching,
    gen_two_phase,
    make_source,
)
from .algorithms import (
    Decision,
    Discounted,
    Greedy,
    PassChain,
    RandomAllocator,
    RoundRobin,
    make_allocator,
)
from .core import (
    INFINITY,
    Allocation,
    Instance,
    TypeKey,
    egalitarian_welfare,
    ind,
    item_type,
    load_instance,
    save_instance,
)
from .harness import AlgorithmSpec, run_trial, run_trials
from .oracle import opt_brute_force, opt_exact

__version__ = "0.1.0"
