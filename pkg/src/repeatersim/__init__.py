"""Discrete-event simulation of entanglement distribution over repeater chains."""
from .analytics import (
    MuEstimate,
    estimate_mu,
    geometric_mean_std,
    geometric_pmf,
    mu_sqrt_approx,
    oldest_memory_age,
    p_single,
    rate_independent,
    rate_no_repeater,
    rate_synchronous,
    sample_geometric,
)
from .core import ChainTopology, EntanglementRecord, HardwareParams, TrialStats, gamma_per_km
from .engine import Engine, Kind
from .protocols import INDEPENDENT, SYNCHRONOUS, build_swap_tree, swap
from .simulation import Stop, SweepSpec, build_chain, measure_rate, run_sweep

__version__ = "0.1.0"
