"""Feedback communication over finite-state Markov fading channels.

Simulation laboratory and numerical toolkit: validated Markov fading models,
water-filling power allocation with feedback-rate objectives, lattice codecs,
the family of recursive feedback coding schemes (scalar and state-multiplexed),
exact conditional error analysis, and the control-theoretic view of the same
recursions (growth rates, mean-square stability, cheap control).
"""

from .errors import (
    FsmclabError, RowNotStochastic, Reducible, Periodic, DuplicateGain,
    UnsupportedDistribution, SolveFailed, NoConvergence, Infeasible,
    TooManyStates, Overflow, IndexOutOfRange, DimensionMismatch, CsiViolation,
    WrongDelay, NonDiagonalClosedLoop, ZeroInitialCoordinate, GainUnstable,
    Diverged, IoFailure, ConfigError,
)
from .markov import (
    MarkovChain, ValidationReport, validate_chain, stationary_distribution,
    sample_path, VisitCounts, count_statistics,
)
from .channel import (
    UnitGain, ConstantGain, FiniteIid, FiniteMarkov, ContinuousIid,
    FadingProcess, CONTINUOUS_FAMILIES, Realization, realize, transmit,
    gain_at, state_index_at, is_finite, n_states, gain_values, state_pmf,
    gain_second_moment,
)
from .alloc import AllocProblem, PowerAllocation, solve_allocation, grid_oracle
from .capacity import (
    CapacityReport, capacity_finite, capacity_continuous_iid,
    idle_state_consistency,
)
from .codec import (
    Codebook, build_codebook, encode, decode, batch_decode, random_message,
    message_to_flat, flat_to_message, matched_bits, batch_matched_bits,
)
from .schemes import (
    KINDS, SchemeParams, make_params, Schedule, build_schedule, TrialTrace,
    run_trial, BatchResult, run_trials_batch, closed_loop_table,
    closed_loop_check,
)
from .analysis import (
    q, q_log10, ConditionalModel, conditional_model, pe_exact, pe_upper_bound,
    theoretic_pe, wilson_halfwidth,
)
from .control import (
    growth_rate_from_schedule, growth_rate_from_states, GrowthReport,
    measure_growth, moment_recursion, stability_window, ergodic_log2_rate,
    lifted_second_moment_rho, MssReport, mss_verdict, cheap_control_objective,
    gain_grid_scan,
)
from .harness import (
    ExperimentConfig, load_config, parse_config, config_dict, config_digest,
    validate_config, derive_rng, Setup, build_setup, run_experiment,
    ResultTable, load_table, REFERENCE_EXAMPLE_TOML, REFERENCE_TARGETS,
    reference_example_config,
)

__version__ = "0.1.0"
