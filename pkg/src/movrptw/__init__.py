"""Multiobjective VRPTW toolkit.

A weight-conditioned transformer policy, trained with a policy gradient and a
greedy-rollout baseline, constructs feasible route plans across a sweep of
objective-weight combinations; NSGA-II seeded with those plans refines them
into a Pareto front trading travel cost against customer satisfaction.
"""

from .core import (Customer, Depot, FleetParams, Instance, InstanceError,
                   ObjectiveValues, RoutePlan, Schedule, check_feasible,
                   derive_hard_window, evaluate, satisfaction, simulate_schedule)
from .dataio import (FrontRecord, GeneratorConfig, ParseError, generate_instance,
                     parse_solomon, read_front, read_instance, write_front,
                     write_instance)
from .env import (EpisodeResult, MdpState, NormalizationBounds, WeightVector,
                  estimate_bounds, feasible_mask, reset, rollout, step)
from .moea import (EvolutionConfig, Individual, Population, crowding_distance,
                   decode_genotype, evolve, fast_nondominated_sort, hypervolume_2d,
                   mutate, order_crossover, random_population, seed_population)
from .policy import NeuralPolicy, PolicyConfig, init_policy, select_action
from .training import TrainConfig, sample_weights, train, weight_sweep

__version__ = "0.1.0"
