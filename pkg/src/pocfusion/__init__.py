"""pocfusion: detect and complete missing key aspects in vulnerability
PoC reports by fusing CVE entries and related reports from other sources."""

from .corpus import (
    ASPECT_SLOTS,
    BASIC_SLOTS,
    EXPLOIT_SLOTS,
    ORIGINAL,
    AspectSet,
    AspectValue,
    ContentKind,
    Corpus,
    CorpusError,
    CveEntry,
    CveProduct,
    FromCve,
    FromPoc,
    Kind,
    LanguageId,
    Original,
    PocReport,
    SourceId,
    SourceName,
    aspect_values,
    build_corpus,
    code_kind,
    decode_provenance,
    ingest_cve_entries,
    ingest_reports,
    load_corpus,
    save_corpus,
    save_cve_db,
)
from .classify import LanguageSignature, categorize, detect_language, load_signatures
from .extract import (
    DEFAULT_RULES,
    DefaultStructuredExtractor,
    ExternalStructuredExtractor,
    ExtractionError,
    ExtractionScore,
    RuleSet,
    StructuredExtraction,
    evaluate_extraction,
    extract_all,
    extract_cve_ids,
    extract_references,
    extract_trigger_step,
    extract_verification_oracle,
    find_cve_ids,
    load_gold_annotations,
    normalize_cve_id,
)
from .similarity import (
    EmbeddingModel,
    EmbeddingParams,
    cosine_similarity,
    embed_text,
    tokenize_code,
    tokenize_text,
    train_embeddings,
)
from .link import (
    TEXT_PAIR,
    Classifier,
    ExternalPairClassifier,
    HeuristicPairClassifier,
    PairKind,
    PairSample,
    PocLink,
    ScoringModels,
    SharedCve,
    build_link_graph,
    build_pair_training_set,
    candidate_pairs_same_cve,
    classify_pair,
    group_by_cve,
    kind_threshold,
    load_links,
    match_software,
    pair_kind_of,
    save_links,
    save_pair_samples,
    score_pair,
    software_names,
)
from .complete import (
    CompletionConfig,
    CompletionRecord,
    CompletionResult,
    complete_from_cve,
    complete_from_poc,
    load_completion_records,
    replay_completion,
    run_completion,
    save_completion_records,
    verify_association,
)
from .report import (
    CompletionTable,
    DeficiencyTable,
    completion_stats,
    deficiency_stats,
    render_report,
)

__version__ = "0.1.0"

__all__ = [
    "ASPECT_SLOTS",
    "BASIC_SLOTS",
    "EXPLOIT_SLOTS",
    "AspectSet",
    "AspectValue",
    "ContentKind",
    "Corpus",
    "CorpusError",
    "CveEntry",
    "CveProduct",
    "FromCve",
    "FromPoc",
    "Kind",
    "LanguageId",
    "Original",
    "PocReport",
    "SourceId",
    "SourceName",
    "ORIGINAL",
    "aspect_values",
    "build_corpus",
    "code_kind",
    "decode_provenance",
    "ingest_cve_entries",
    "ingest_reports",
    "load_corpus",
    "save_corpus",
    "save_cve_db",
    "LanguageSignature",
    "categorize",
    "detect_language",
    "load_signatures",
    "DEFAULT_RULES",
    "DefaultStructuredExtractor",
    "ExternalStructuredExtractor",
    "ExtractionError",
    "ExtractionScore",
    "RuleSet",
    "StructuredExtraction",
    "evaluate_extraction",
    "extract_all",
    "extract_cve_ids",
    "extract_references",
    "extract_trigger_step",
    "extract_verification_oracle",
    "find_cve_ids",
    "load_gold_annotations",
    "normalize_cve_id",
    "EmbeddingModel",
    "EmbeddingParams",
    "cosine_similarity",
    "embed_text",
    "tokenize_code",
    "tokenize_text",
    "train_embeddings",
    "TEXT_PAIR",
    "Classifier",
    "ExternalPairClassifier",
    "HeuristicPairClassifier",
    "PairKind",
    "PairSample",
    "PocLink",
    "ScoringModels",
    "SharedCve",
    "build_link_graph",
    "build_pair_training_set",
    "candidate_pairs_same_cve",
    "classify_pair",
    "group_by_cve",
    "kind_threshold",
    "load_links",
    "match_software",
    "pair_kind_of",
    "save_links",
    "save_pair_samples",
    "score_pair",
    "software_names",
    "CompletionConfig",
    "CompletionRecord",
    "CompletionResult",
    "complete_from_cve",
    "complete_from_poc",
    "load_completion_records",
    "replay_completion",
    "run_completion",
    "save_completion_records",
    "verify_association",
    "CompletionTable",
    "DeficiencyTable",
    "completion_stats",
    "deficiency_stats",
    "render_report",
]
