"""Knowledge-grounded theorem-proof generation engine and evaluation harness."""

from .corpus import (
    Corpus,
    CorpusError,
    CorpusLoadError,
    DuplicateTitleError,
    MentionKind,
    ProofDocument,
    ProofStep,
    Reference,
    ReferenceKind,
    ReferenceMention,
    load_corpus,
    normalize,
    normalize_title,
    parse_mentions,
    render_mention,
    segment_proof,
)
from .decoder import (
    Candidate,
    DecodeConfig,
    DecodeError,
    DecodeMode,
    SearchTrace,
    decode,
    score_candidates,
    v_constraint,
)
from .harness import (
    AggregateReport,
    AnnotationRecord,
    ExperimentConfig,
    RunReport,
    Task,
    aggregate_annotations,
    correlate,
    load_retrievals,
    run,
    run_full_proof,
    run_next_step,
    suggest_next_steps,
)
from .lmbackend import (
    Backend,
    BackendAuthError,
    BackendError,
    BackendTransportError,
    MockBackend,
    RateLimitedBackend,
    RemoteBackend,
    SampleRequest,
    SampleResult,
    TokenBucket,
    UnscriptedPromptError,
)
from .metrics import (
    MetricReport,
    UndefinedCorrelationError,
    best_of_k,
    gleu,
    halluc_rate,
    kf1,
    pearson,
    ref_prf,
    score_proof,
    token_f1,
    tokenize,
)
from .promptgen import (
    FinetuneRecord,
    KnowledgeSetting,
    PromptBudgets,
    PromptBudgetError,
    PromptError,
    emit_finetune_file,
    render_inference_prompt,
    render_proof_example,
    render_reconstruction,
    serialize_proof,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
