"""Localized Lefschetz index experiments for Dirac operators on lattice models of flat spaces."""
from .asymptotic_trace import (CommutatorReport, GradedIdempotent, RegionDecomposition,
                               asymptotic_trace_test, commutator_functional,
                               commutator_region_integrals, decompose_regions, families_from_spec,
                               graded_idempotent, idempotent_functional, idempotent_pairing,
                               trend_slope, y_bound)
from .clifford_dirac import (CliffordBundle, DiracError, DiracOperator, assemble_dirac,
                             build_clifford, commutator_norm, exterior_lift_matrix)
from .config import ConfigError, Scenario, build_scenario, bundled_scenarios, load_scenario
from .exhaustion_functional import (AveragedFunctional, Cluster, ExhaustionError, ExhaustionPlan,
                                    reflection_u_regularity,
                                    accumulation_points, averaged_integral, exhaustion_builder,
                                    make_plan, polynomial_bump, region_from_spec, stage_density,
                                    tr_u_phi, tr_u_phi_functional, u_regularity_ratio,
                                    zeta_example)
from .geometry import (GeometryError, LatticeModel, Region, ball, build_box_lattice,
                       build_torus_lattice, distance, distance_to_complement, distances_from,
                       full_region, inner_penumbra_U, outer_penumbra, pairwise_distance,
                       region_from_mask)
from .heat_engine import (DecayEnvelope, EnvelopeReport, KernelError, KernelFamily,
                          check_envelope, dj_heat_family, dj_norm_bound, fit_al_constants,
                          fit_gaussian_envelope, fit_polynomial_constant, gaussian_heat_kernel,
                          heat_family, offdiagonal_mass, q_family, row_masses, spectral_kernel,
                          supertrace)
from .index_verify import (IndexReport, IndexVerifyError, analytic_side, ass_integrand_flat,
                           geometric_functional, geometric_side, heat_density, run_scenario)
from .isometry import (IsometryError, IsometryPair, act_on_section, compose,
                       displacement_lower_bound, make_isometry)

__version__ = "0.1.0"
