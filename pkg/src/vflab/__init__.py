"""vflab: a desk-scale vertical federated learning lab for studying
order-preserving confidence-score defenses against feature-inference
attacks, with a paired-arm measurement harness."""

from .attacks import (
    AttackReport,
    GiaConfig,
    GrnConfig,
    gia_attack,
    grn_attack,
    random_guess_baseline,
)
from .data import DataFormatError, Dataset, load_csv, make_synthetic
from .defenses import (
    DefenseKind,
    GaussianDp,
    MonotoneEncode,
    NoDefense,
    NoiseDraw,
    PerturbationPlan,
    PlanMode,
    PriveeDp,
    PriveeDpPlusPlus,
    PrivacyBudget,
    Round,
    defend,
    feasibility_probe,
    gaussian_sigma,
    privee_perturb,
    sample_noise,
)
from .federation import (
    AttackStrength,
    FeatureSplit,
    JointVflModel,
    TrainConfig,
    TrainingDivergedError,
    VflModelSpec,
    evaluate_accuracy,
    infer,
    load_joint_model,
    save_joint_model,
    split_features,
    train_vfl,
)
from .harness import (
    BenchPoint,
    ConfigError,
    ExperimentConfig,
    ExperimentRecord,
    ablate,
    bench_defense_scaling,
    latency_slope,
    reconstruction_mse,
    run_experiment,
)
from .nn import (
    DenseLayer,
    GradientBundle,
    Model,
    ModelSpec,
    backward,
    cross_entropy_with_grad,
    forward,
    init_model,
    load_model,
    save_model,
    softmax,
    train_classifier,
)
from .scores import (
    ConfidenceVector,
    RankVector,
    TransformKind,
    TransformedScores,
    apply_transform,
    orthonormality_residual,
    rank,
    transform_matrix,
)

__version__ = "0.1.0"
