"""Geometric horizon models, geometric switching policies and GGPI on finite MDPs."""

from ggpi.ghm import GhmTable, exact_ghm, rollout_ghm_samples
from ggpi.gsp import GhmRegistry, Gsp, exact_gsp_q, gsp_q_estimate, gsp_q_table_estimate
from ggpi.improvement import GspSet, depth_m_set, ggpi, gpi, greedy, is_suffix_closed
from ggpi.mdp import MarkovPolicy, Mdp, exact_q, validate, value_iteration

__version__ = "0.1.0"

__all__ = [
    "GhmRegistry",
    "GhmTable",
    "Gsp",
    "GspSet",
    "MarkovPolicy",
    "Mdp",
    "depth_m_set",
    "exact_ghm",
    "exact_gsp_q",
    "exact_q",
    "ggpi",
    "gpi",
    "greedy",
    "gsp_q_estimate",
    "gsp_q_table_estimate",
    "is_suffix_closed",
    "rollout_ghm_samples",
    "validate",
    "value_iteration",
]
