"""Traffic models of periodic event-triggered control loops.

Build finite abstractions of when a linear PETC loop samples, schedule
several loops on one channel without collisions, and compute or optimize
the smallest average inter-sample time.
"""
from .abstraction import (AngularPartition, SphereSweep, build_traffic_model, compute_regions,
                          compute_transitions, inter_sample_k, region_nonempty, region_of)
from .games import (SchedulerStrategy, UnschedulableError, extract_scheduler, safe_set,
                    safety_fixpoint, step_scheduler)
from .io import export_uppaal, model_from_json, model_to_json, parse_input_file
from .linalg import (LtiPlant, PetcLoop, QuadraticTrigger, discretize, lyapunov_trigger,
                     matrix_exponential, relative_trigger)
from .quantitative import (MeanPayoffGame, closed_loop_saist_check, mean_payoff_strategy,
                           min_mean_cycles, saist, solve_mean_payoff)
from .simulation import SimConfig, collision_report, simulate
from .systems import (FiniteSystem, ProductSystem, TrafficModel, WaitTriggerSystem,
                      parallel_compose, wait_trigger_transform)

__version__ = "0.1.0"
