"""Three-phase channel estimation simulator for IRS-assisted multiuser MIMO uplink."""

from .config import ScenarioConfig, load_config, parse_config_text
from .estimate import (
    EstimateSet,
    cancel_direct,
    estimate_lambda_priors,
    estimate_reflected_gram,
    phase1_mmse,
    phase1_recover_noiseless,
    phase2_lmmse,
    phase2_recover_noiseless,
    phase3_conditional_mse,
    phase3_lmmse,
    phase3_lmmse_all_slots,
    phase3_recover_noiseless,
    psi_phase2,
    psi_phase3,
    simulate_received,
    stacked_system_matrix,
)
from .harness import (
    ResultRow,
    build_context,
    emit_csv,
    place_users,
    resolve_phase_plan,
    run_campaign,
    run_scheme,
    scheme_key,
    substream,
)
from .metrics import (
    normalized_mse_phase2,
    normalized_mse_phase3,
    normalized_mse_total,
    pilot_length_table,
    pooled_ratio,
    ratio_halfwidth,
)
from .model import (
    ChannelRealization,
    CorrelationSpec,
    LinkBudget,
    PathLossSpec,
    SystemDims,
    coloring_root,
    complex_normal,
    draw_channels,
    exp_correlation_matrix,
    hermitian_sqrt,
    path_loss,
)
from .schedule import (
    OrthogonalPlan,
    Phase3Plan,
    PhasePlan,
    Schedule,
    benchmark_phase3_schedule,
    benchmark_total_pilots,
    concat_schedules,
    dft_block,
    min_tau3,
    min_total_pilots,
    phase1_pilots,
    phase2_reflections_dft,
    phase2_reflections_onoff,
    phase2_reflections_random,
    phase2_schedule,
    phase3_plan,
    phase3_schedule_noiseless,
    phase3_schedule_orthogonal_noisy,
    schedule_to_csv,
    validate_phase3_plan,
)
from .selftest import run_selftest

__version__ = "0.1.0"
