"""Reward-guided tree search for masked-diffusion sequence models."""

from .core import (
    CountingDenoiser,
    Denoiser,
    GeometricSchedule,
    LinearSchedule,
    NfeLedger,
    NoiseSchedule,
    PlantedDenoiser,
    RandomTableDenoiser,
    ValidatingDenoiser,
    Vocab,
    all_mask,
    enforce_denoiser_constraints,
    forward_corrupt,
    gamma,
    gamma_inv,
    make_schedule,
    masked_count,
    masked_positions,
    reverse_posterior_token,
)
from .rewards import LexiconReward, Reward, TargetMatchReward, hamming
from .samplers import (
    FirstChangeOutcome,
    fhs_generate,
    fhs_next_time,
    first_change_trial,
    naive_generate,
    naive_parallel_step,
)
from .search import (
    NodeRng,
    SearchNode,
    TreeSearchResult,
    WidthSchedule,
    group_unmask_branch,
    resubstitute_score,
    topk_prune,
    tree_search,
    unmask_branch,
)
from .baselines import (
    Particle,
    best_of_n,
    fk_steer,
    score_previous_step,
    score_true_posterior,
)
from .verify import (
    TestReport,
    VarianceProfile,
    brute_force_expected_reward,
    check_expected_evals,
    check_fhs_equivalence,
    check_monotonicity,
    check_resub_gap,
    dist_n,
    variance_profile,
)

__version__ = "0.1.0"
