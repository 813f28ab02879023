"""Continuously measured quantum and classical nonlinear oscillators.

Library layout:

- model: grids, polynomial potentials, physical parameters
- noise: seeded replayable Wiener increments
- quantum: stochastic Schroedinger / master-equation propagators, Wigner
- classical: Liouville, Fokker-Planck, Kushner filter, Langevin, cumulants
- lyapunov: fixed-noise divergence estimators and the tangent-space oracle
- qct: quantum-classical transition criteria with explicit margins
- config / output / experiments / cli: reproducible experiment runner
"""

from ._version import __version__
from .errors import (ClosureBreakdown, ConfigError, GridOverflow,
                     NegativeDensity, NonfiniteField, NonfiniteState,
                     SimulationError, SingularPoint, StretchOverflow,
                     TraceDrift)
from .model import (ModelSpec, PhaseSpaceField, PhaseSpaceGrid,
                    PotentialSpec, SpatialGrid, duffing_spec,
                    force_and_derivatives, model_from_section,
                    model_to_section)
from .noise import NoisePath, dump_increments
from .quantum import (DensityState, MeasurementRecord, MomentSet,
                      SpatialState, coherent_state, energy, evolve_lindblad,
                      evolve_sse, isolated_step, lindblad_step, moments,
                      purity, sse_step, wigner_on_grid, wigner_transform)
from .classical import (ClassicalField, CumulantState, cumulant_step,
                        ensemble_histogram, evolve_cumulant, evolve_field,
                        evolve_langevin, field_moments, fokker_planck_step,
                        gaussian_field, gaussian_poly_mean, kushner_step,
                        langevin_ensemble, langevin_step, liouville_step,
                        validate_field)
from .lyapunov import (DivergenceRun, LyapunovEstimate,
                       classical_tangent_oracle, divergence_run,
                       loglog_slope, lyapunov_fixed_noise, perturb_initial)
from .qct import (CriterionEntry, QctReport, TStarResult, chaotic_extent,
                  check_localization, check_low_noise, check_record_fidelity,
                  check_weak_qct, compute_t_star, localization_crossover_hbar,
                  orbit_action, strong_qct_report)
from .config import ExperimentConfig, config_from_dicts, load_config
from .experiments import (StroboscopicMap, run_isolated_decay,
                          run_lyapunov_sweep, run_strobe_map, run_strong_qct,
                          run_weak_qct)

__all__ = [name for name in dir() if not name.startswith("_")]
