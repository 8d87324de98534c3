"""Desk-scale co-training lab for dense tool retrieval.

A hashed n-gram contrastive encoder and a catalog-vocabulary generator
policy are trained against each other: the encoder learns from generated
descriptions, the generator is preference-aligned by the encoder's own
retrieval scores.  Everything is deterministic under explicit seeds.
"""

from .catalog import (
    ALL_RENDERINGS,
    CorpusError,
    QueryExample,
    RenderingId,
    Split,
    Tier,
    ToolCatalog,
    ToolRecord,
    TrainingPair,
    flatten,
    load_corpus,
    load_lexicon,
    render,
    sample_rendering,
    stratified_subset,
    vaguify,
    write_corpus,
    write_lexicon,
)
from .cotrain import (
    PipelineConfig,
    PipelineError,
    PipelineResult,
    RoundState,
    RunContext,
    RunSpec,
    initial_components,
    run_pipeline,
    run_round,
    s1a_warmup,
    s1b_warmup,
    s2_bootstrap,
)
from .dpo import (
    DpoConfig,
    PreferencePair,
    build_pairs,
    dpo_grad,
    dpo_loss,
    dpo_train,
    select_pair,
)
from .encoder import (
    EncoderParams,
    EncoderTrainConfig,
    FeatureVector,
    embed,
    featurize,
    infonce_grad,
    infonce_loss,
    load_checkpoint,
    save_checkpoint,
    train_contrastive,
)
from .evaluation import (
    BootstrapResult,
    MetricReport,
    PerQueryScore,
    emit_report,
    evaluate,
    hit_at_k,
    ndcg_at_k,
    paired_bootstrap,
    recall_at_k,
)
from .rewriter import (
    CANDIDATE_DECODE,
    DEFAULT_HYDE_PROMPT,
    GREEDY_DECODE,
    DecodeConfig,
    GeneratedDescription,
    GeneratorPolicy,
    LexiconEntry,
    PolicyConfig,
    PromptTemplate,
    RemoteEndpointConfig,
    RemoteGenerationError,
    apply_prompt,
    clean,
    generate,
    invert_lexicon,
    log_prob,
    remote_generate,
    warmup_fit,
)
from .synthetic import SyntheticCorpus, fixture_corpus, make_corpus, write_corpus_files
from .vindex import ApproxConfig, RetrievalResult, VectorIndex, build_index, topk, topk_approx

__version__ = "0.1.0"
