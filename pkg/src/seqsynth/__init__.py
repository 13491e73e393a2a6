"""seqsynth: latent-variable Hawkes sequence synthesis and auditing.

A desk-scale engine that learns a latent-variable model of marked event
sequences (event type + timestamp) with a self-exciting intensity
decoder, generates synthetic sequences under a controllable
fidelity/privacy tradeoff, and audits the output with utility,
discriminability, distance-to-closest-record, and nearest-neighbor
attack metrics.  A classical exponential-kernel Hawkes simulator with
closed-form likelihood ships as ground truth and numerical reference.
"""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    ColumnSchema,
    EventSequence,
    EventVocabulary,
    PaddedBatch,
    canonicalize_sequences,
    pad_batch,
    parse_events,
    read_jsonl,
    split,
    write_events_csv,
    write_jsonl,
    write_labels_csv,
)
from .decoder import (  # noqa: F401
    HawkesHeads,
    QuadratureConfig,
    hawkes_log_likelihood,
    intensity_at,
    mc_compensator,
    predict_next_time_expectation,
    type_probs,
)
from .encoder import LatentCode, kl_divergence, sample_z  # noqa: F401
from .generate import (  # noqa: F401
    GenerationConfig,
    encode_latent,
    mask_logits,
    synthesize_dataset,
    synthesize_from_latent,
    synthesize_one,
)
from .metrics import (  # noqa: F401
    MetricReport,
    bootstrap_std,
    dataset_attack,
    dcr,
    evaluate_all,
    featurize,
    ml_inference_score,
    roc_auc,
    utility_score,
)
from .model import ModelConfig, SequenceVAE  # noqa: F401
from .oracle import (  # noqa: F401
    ExpHawkesParams,
    default_scenario,
    exact_compensator,
    exact_intensity,
    exact_log_likelihood,
    poisson_log_likelihood,
    poisson_mle_baseline,
    simulate_dataset,
    simulate_thinning,
    time_rescaled_intervals,
)
from .training import (  # noqa: F401
    TrainConfig,
    evaluate_log_likelihood,
    fit,
    total_loss,
)
