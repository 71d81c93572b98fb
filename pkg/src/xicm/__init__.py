"""Cross-task in-context manipulation: select similar demonstrations with a
learned dynamics representation, prompt a language model with them, and
execute the predicted key actions on a deterministic tabletop simulator."""

__version__ = "0.1.0"

from .bench import AblationResult, BenchConfig, BenchReport, TaskStats, ablate_selection, run_benchmark, sweep_k
from .demo_store import (
    Dataset,
    Demonstration,
    ObjectRecord,
    Observation,
    Pose7,
    WorkspaceBounds,
    load_dataset,
    save_dataset,
)
from .discretize import (
    ANGLE_BINS,
    QuantizedObject,
    QuantizedPose,
    dequantize_pose,
    quantize_object,
    quantize_pose,
)
from .dynamics import (
    DemoEmbedding,
    DynamicsFeature,
    DynamicsPredictor,
    FeatureMode,
    SelectionResult,
    TrainConfig,
    baseline_vis_feature,
    cosine_similarity,
    embed_dataset,
    embed_demo,
    export_features,
    import_features,
    lang_feature,
    load_embeddings,
    pool_features,
    save_embeddings,
    select_top_k,
    train_dynamics_predictor,
)
from .errors import (
    AuthFailure,
    ConfigError,
    DatasetError,
    DimensionMismatch,
    ExhaustedRetries,
    FeatureFileError,
    GatewayError,
    GatewayTimeout,
    NoActionsFound,
    SimError,
    TrainingDiverged,
    TrainingFailed,
    XicmError,
)
from .gateway import (
    CompletionRecord,
    EchoNearestBackend,
    EpisodeContext,
    Gateway,
    GatewayConfig,
    HttpBackend,
    ScriptedBackend,
)
from .keyframes import DEFAULT_VELOCITY_EPSILON, KeyActionSequence, extract_keyframes, keyframe_timesteps
from .pipeline import Pipeline
from .prompting import (
    ActionPrediction,
    DemoBlock,
    PromptBundle,
    build_prompt,
    parse_prediction,
    textualize_action,
    textualize_object,
)
from .report import write_ablation_files, write_report_files, write_sweep_files
from .sim import (
    GRASP_RADIUS,
    REGION_TOL,
    WORKSPACE,
    RolloutResult,
    SceneState,
    SimConfig,
    TaskLevel,
    TaskSpec,
    execute_actions,
    generate_seen_dataset,
    run_episode,
    stable_seed,
    synthesize_demo,
)
from .tasks import TASK_LIBRARY, build_task_library, resolve_task_set, vocabulary_audit

__all__ = [
    "__version__",
    "ANGLE_BINS",
    "AblationResult",
    "ActionPrediction",
    "AuthFailure",
    "BenchConfig",
    "BenchReport",
    "CompletionRecord",
    "ConfigError",
    "DEFAULT_VELOCITY_EPSILON",
    "Dataset",
    "DatasetError",
    "DemoBlock",
    "DemoEmbedding",
    "Demonstration",
    "DimensionMismatch",
    "DynamicsFeature",
    "DynamicsPredictor",
    "EchoNearestBackend",
    "EpisodeContext",
    "ExhaustedRetries",
    "FeatureFileError",
    "FeatureMode",
    "GRASP_RADIUS",
    "Gateway",
    "GatewayConfig",
    "GatewayError",
    "GatewayTimeout",
    "HttpBackend",
    "KeyActionSequence",
    "NoActionsFound",
    "ObjectRecord",
    "Observation",
    "Pipeline",
    "Pose7",
    "PromptBundle",
    "QuantizedObject",
    "QuantizedPose",
    "REGION_TOL",
    "RolloutResult",
    "SceneState",
    "ScriptedBackend",
    "SelectionResult",
    "SimConfig",
    "SimError",
    "TASK_LIBRARY",
    "TaskLevel",
    "TaskSpec",
    "TaskStats",
    "TrainConfig",
    "TrainingDiverged",
    "TrainingFailed",
    "WORKSPACE",
    "WorkspaceBounds",
    "XicmError",
    "ablate_selection",
    "baseline_vis_feature",
    "build_prompt",
    "build_task_library",
    "cosine_similarity",
    "dequantize_pose",
    "embed_dataset",
    "embed_demo",
    "execute_actions",
    "export_features",
    "extract_keyframes",
    "generate_seen_dataset",
    "import_features",
    "keyframe_timesteps",
    "lang_feature",
    "load_dataset",
    "load_embeddings",
    "parse_prediction",
    "pool_features",
    "quantize_object",
    "quantize_pose",
    "resolve_task_set",
    "run_benchmark",
    "run_episode",
    "save_dataset",
    "save_embeddings",
    "select_top_k",
    "stable_seed",
    "sweep_k",
    "synthesize_demo",
    "textualize_action",
    "textualize_object",
    "train_dynamics_predictor",
    "vocabulary_audit",
    "write_ablation_files",
    "write_report_files",
    "write_sweep_files",
]
