from .base import EnvStep, Environment, SteppedAfterTerminal, env_reset, env_step
from .beach import BeachEnv, BeachOracle, beach_bruteforce, beach_step, served_customers
from .finite import DeterministicMDP, single_state_mdp
from .shopping import (INSHOP, MAIN, Catalog, Item, PageEvents, Shop, ShoppingConfig, ShoppingEnv,
                       UserState, compute_reward, rank_items, scenario_transition, user_click_model)

__all__ = [
    "EnvStep", "Environment", "SteppedAfterTerminal", "env_reset", "env_step",
    "BeachEnv", "BeachOracle", "beach_bruteforce", "beach_step", "served_customers",
    "DeterministicMDP", "single_state_mdp",
    "INSHOP", "MAIN", "Catalog", "Item", "PageEvents", "Shop", "ShoppingConfig", "ShoppingEnv",
    "UserState", "compute_reward", "rank_items", "scenario_transition", "user_click_model",
]
