"""Desk-scale decentralized diffusion ensemble over synthetic trajectory clusters.

Independently trained flow-matching experts, a noisy-latent cluster router,
per-step routed Euler sampling with classifier-free guidance, and an
experiment harness comparing the routed ensemble against an iso-FLOP
monolithic baseline.
"""

from .datagen import (
    Clip,
    Condition,
    DataConfig,
    Dataset,
    build_cluster_dataset,
    build_dataset,
    build_stratified_dataset,
    cache_roundtrip,
    generate_clip,
    load_dataset,
    make_condition,
    pooled_from_full,
    save_dataset,
    stratified_counts,
)
from .diskio import CacheChecksumError, CacheError, CacheFormatError, CacheVersionError
from .flowmatch import (
    FlowBatchItem,
    IsoFlopSplit,
    TrainArmConfig,
    TrainingDivergedError,
    interpolate_path,
    iso_flop_split,
    make_flow_batch,
    target_velocity,
    train_arm,
)
from .harness import (
    AblationResult,
    ComparisonReport,
    ExperimentConfig,
    SpecializationResult,
    StageError,
    emit_report,
    load_config,
    load_report,
    relative_improvements,
    run_comparison,
    run_specialization_probe,
    run_switching_ablation,
    train_induced_pair,
)
from .metrics import (
    AlignmentProbe,
    GaussianSummary,
    MetricReport,
    alignment_score,
    compute_metric_report,
    fit_alignment_probe,
    fit_gaussian,
    frechet_distance,
    mean_and_se,
    motion_magnitude,
    schedule_preference,
    specialization_gap,
    sqrtm_psd,
)
from .nets import (
    Grads,
    NetParams,
    OptState,
    adam_update,
    checkpoint_roundtrip,
    forward_velocity,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
    time_features,
)
from .router import (
    RouterTrainConfig,
    RoutingWeights,
    accuracy_at_t,
    accuracy_by_t_bin,
    predict_cluster,
    route_weights,
    router_logits,
    train_router,
)
from .sampler import (
    SamplerConfig,
    SamplingDivergedError,
    alternating_schedule,
    euler_integrate,
    guided_velocity,
    load_clips,
    mixture_velocity,
    sample,
    save_clips,
)

__version__ = "0.1.0"
