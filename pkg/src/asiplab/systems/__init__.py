"""Concrete dynamical systems: Markov shifts, the doubling map, intermittent
interval maps with induced returns, and the planar periodic Lorentz gas."""

from .lorentz import (FlowState, LorentzConfig, check_finite_horizon,
                      load_config, next_collision, sample_flow_state,
                      save_config, triangular_finite_horizon)
from .lsv import (LsvModel, branch_boundaries, doubling_step, exact_return_tail,
                  induced_branch_intervals, induced_return, lsv_step,
                  sample_returns)
from .markov import (MarkovShiftModel, SymbolWindow, separation_time,
                     shift_step)
from .observables import (ObservableSpec, conditional_table, constant_observable,
                          cos2pi, cylinder_values, pm1, pm1_pair,
                          table_observable)

__all__ = [
    "FlowState", "LorentzConfig", "LsvModel", "MarkovShiftModel",
    "ObservableSpec", "SymbolWindow", "branch_boundaries",
    "check_finite_horizon", "conditional_table", "constant_observable",
    "cos2pi", "cylinder_values", "doubling_step", "exact_return_tail",
    "induced_branch_intervals", "induced_return", "load_config", "lsv_step",
    "next_collision", "pm1", "pm1_pair", "sample_flow_state",
    "sample_returns", "save_config", "separation_time", "shift_step",
    "table_observable", "triangular_finite_horizon",
]
