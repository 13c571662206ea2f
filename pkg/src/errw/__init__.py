"""Edge-reinforced random walks: simulation, weight analysis and diagnostics."""

from __future__ import annotations

__version__ = "0.1.0"

from .graphs import (CycleZmodL, ExplicitFinite, LatticeZ, LatticeZd, Lazy, NuValue, canonical_edge, nu,
                     odd_cycles, parse_graph)
from .walk import init_state, run, step, transition_distribution
from .weights import (Custom, ExpOscillating, Exponential, Power, SellkeOscillating, Table, alpha_n, check_h0,
                      check_h1, check_h2, check_h3, delta_n, parse_weight, sticky_lower_bound, w_prime, w_star)

__all__ = [
    "CycleZmodL", "ExplicitFinite", "LatticeZ", "LatticeZd", "Lazy", "NuValue", "canonical_edge", "nu",
    "odd_cycles", "parse_graph", "init_state", "run", "step", "transition_distribution", "Custom",
    "ExpOscillating", "Exponential", "Power", "SellkeOscillating", "Table", "alpha_n", "check_h0", "check_h1",
    "check_h2", "check_h3", "delta_n", "parse_weight", "sticky_lower_bound", "w_prime", "w_star",
]
