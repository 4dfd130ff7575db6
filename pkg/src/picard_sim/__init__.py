"""Parallel simulation of a single policy trajectory by Picard iteration."""

from .core import (ContractViolation, Environment, MaxIterationsExceeded, PartitionPlan,
                   PicardConfig, PicardResult, Policy, compare_to_oracle,
                   make_uniform_time_partition, picard_iterate_once, picard_simulate,
                   sequential_simulate, single_process_plan)
from .fo_env import NULL, FOEnvironment, FOState, Order, OrderSequence
from .instgen import (Instance, generate_instance, load_instance, make_product_partition,
                      save_instance)
from .policies import (CapacityPenalizedPolicy, DualNetworkPolicy, GreedyPolicy,
                       check_assumptions)
from .theory import evaluation_speedup_proxy, speedup_model
from .timewarp import time_warp_simulate

__all__ = [
    "NULL", "CapacityPenalizedPolicy", "ContractViolation", "DualNetworkPolicy", "Environment",
    "FOEnvironment", "FOState", "GreedyPolicy", "Instance", "MaxIterationsExceeded", "Order",
    "OrderSequence", "PartitionPlan", "PicardConfig", "PicardResult", "Policy",
    "check_assumptions", "compare_to_oracle", "evaluation_speedup_proxy", "generate_instance",
    "load_instance", "make_product_partition", "make_uniform_time_partition",
    "picard_iterate_once", "picard_simulate", "save_instance", "sequential_simulate",
    "single_process_plan", "speedup_model", "time_warp_simulate",
]
