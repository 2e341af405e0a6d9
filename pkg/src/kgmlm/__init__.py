"""Knowledge-graph-to-masked-LM pipeline.

The package turns an eventuality knowledge graph into training signal for a
small transformer encoder: constrained weighted random walks over discourse
edges, verbalization through a connective lexicon, whole-eventuality and
connective masking with a binary co-occurrence side task, a from-scratch
float64 encoder with exact analytic gradients, AdamW training, and
connective-cloze / choice probes.
"""

from .errors import ConfigError, EmptyCorpusError, KgmlmError, MissingArtifactError
from .graph import (
    DISCOURSE_RELATIONS,
    NUM_DISCOURSE_RELATIONS,
    Edge,
    Eventuality,
    KnowledgeGraph,
    RelationType,
    load_graph,
    load_graph_files,
)
from .masking import (
    MaskingConfig,
    MaskingStrategy,
    TrainingInstance,
    apply_connective_mask,
    apply_whole_eventuality_mask,
    build_instance,
    build_instances,
    make_cooccurrence_instance,
)
from .model import (
    Activations,
    Batch,
    LossBreakdown,
    ModelConfig,
    collate,
    compute_loss,
    finite_difference_check,
    forward,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    param_count,
    save_checkpoint,
)
from .probing import (
    ChoiceTask,
    ProbeQuery,
    eval_relation_heldout,
    probe_connective,
    score_choice,
)
from .sampling import AliasSampler
from .synth import PatternSpec, SyntheticKg, generate, make_choice_tasks
from .training import (
    AdamW,
    EvalResult,
    TrainConfig,
    TrainResult,
    evaluate,
    smoothed_total,
    train,
)
from .verbalizer import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    ConnectiveLexicon,
    TokenSequence,
    Vocabulary,
    build_vocab,
    verbalize,
)
from .walks import (
    EventualityPath,
    LengthHistogram,
    WalkConfig,
    item_rng,
    sample_corpus,
    sample_path,
)

__all__ = [
    "AdamW",
    "Activations",
    "AliasSampler",
    "Batch",
    "CLS_ID",
    "ChoiceTask",
    "ConfigError",
    "ConnectiveLexicon",
    "DISCOURSE_RELATIONS",
    "Edge",
    "EmptyCorpusError",
    "EvalResult",
    "Eventuality",
    "EventualityPath",
    "KgmlmError",
    "KnowledgeGraph",
    "LengthHistogram",
    "LossBreakdown",
    "MASK_ID",
    "MaskingConfig",
    "MaskingStrategy",
    "MissingArtifactError",
    "ModelConfig",
    "NUM_DISCOURSE_RELATIONS",
    "PAD_ID",
    "PatternSpec",
    "ProbeQuery",
    "RelationType",
    "SEP_ID",
    "SyntheticKg",
    "TokenSequence",
    "TrainConfig",
    "TrainResult",
    "TrainingInstance",
    "UNK_ID",
    "Vocabulary",
    "WalkConfig",
    "apply_connective_mask",
    "apply_whole_eventuality_mask",
    "build_instance",
    "build_instances",
    "build_vocab",
    "collate",
    "compute_loss",
    "eval_relation_heldout",
    "evaluate",
    "finite_difference_check",
    "forward",
    "generate",
    "init_params",
    "item_rng",
    "load_checkpoint",
    "load_graph",
    "load_graph_files",
    "loss_and_gradients",
    "make_choice_tasks",
    "make_cooccurrence_instance",
    "param_count",
    "probe_connective",
    "sample_corpus",
    "sample_path",
    "save_checkpoint",
    "score_choice",
    "smoothed_total",
    "train",
    "verbalize",
]
