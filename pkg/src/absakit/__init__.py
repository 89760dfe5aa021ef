"""Instruction-prompted aspect-based sentiment analysis pipeline."""

from .corpus import (
    AspectAnnotation,
    AtscSample,
    Corpus,
    CorpusError,
    DuplicateId,
    MalformedXml,
    ReviewSentence,
    SchemaViolation,
    SentimentPolarity,
    SplitMismatch,
    StatsRecord,
    corpus_stats,
    expand_atsc,
    load_semeval_xml,
    merge_corpora,
)
from .decoding import (
    AtePrediction,
    AtscPrediction,
    JointPrediction,
    parse_ate,
    parse_atsc,
    parse_joint,
)
from .prompting import (
    InstructionPrompt,
    PromptConfig,
    PromptedExample,
    PromptVariant,
    SubtaskKind,
    UnrepresentableTerm,
    build_dataset,
    load_prompt_config,
    render_ate_target,
    render_atsc_target,
    render_joint_target,
    render_prompt,
)
from .metrics import (
    RunAggregate,
    ScoreReport,
    aggregate_runs,
    score_ate,
    score_atsc,
    score_joint,
)
from .backends import (
    ConstantBackend,
    EchoTailBackend,
    Hyperparameters,
    ModelBackend,
    OracleBackend,
    ToyTrainableBackend,
    TrainReport,
    create_backend,
    predict,
    train,
)
from .experiments import (
    CorpusStore,
    ExperimentResult,
    ExperimentSpec,
    reproduce_tables,
    run_experiment,
)

__version__ = "0.1.0"
