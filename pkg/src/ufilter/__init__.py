"""Universal filtering of noisy discrete sources with growing-order hidden Markov models."""

from .core import (
    Alphabet,
    Channel,
    LossMatrix,
    bayes_response,
    bayes_responses,
    bsc,
    channel_constants,
    expected_loss,
    symmetric_channel,
)
from .em import EmConfig, EmTrace, em_fit, m_step_project
from .errors import (
    CapacityError,
    ConfigError,
    EmptyClassError,
    InsufficientDataError,
    InvalidArgumentError,
    InvalidChannelError,
    NonInvertibleChannelError,
    NumericalError,
    StateError,
    UFilterError,
    UnsupportedSourceError,
)
from .filtering import (
    BlockSchedule,
    FloorSchedule,
    RunReport,
    cumulative_loss,
    model_filter_run,
    randomized_bayes,
    sample_ball,
    universal_filter_run,
)
from .hmm import (
    ForwardFilter,
    HmpModel,
    MixingConstants,
    StateSpace,
    build_state_space,
    filtered_posteriors,
    forward_backward,
    forward_step,
    log_likelihood,
    mixing_coefficient,
    posterior_last_symbol,
    stationary_distribution,
)
from .memory import (
    EquivalentChannel,
    build_equivalent_channel,
    memory_universal_filter_run,
    noise_informed_start,
    true_joint_model,
)
from .oracle import (
    BoundCheckResult,
    JointLaw,
    divergence_rate_estimate,
    exact_divergence_n,
    exact_posterior,
    lemma4_bound_check,
    optimal_filter_run,
    phi_estimate,
)
from .sources import (
    FsHmpNoise,
    HiddenMarkovSource,
    MarkovSource,
    dmc_corrupt,
    fshmp_corrupt,
    kth_order_approximation,
    sample_source,
)

__version__ = "0.1.0"
