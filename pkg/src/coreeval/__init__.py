"""coreeval: knowledge-grounded dataset updating and contamination-
resistance evaluation for NLP classification tasks."""

from .datamodel import (
    Dataset,
    Sample,
    TaskKind,
    label_space,
    load_dataset,
    save_dataset,
    stratified_sample,
)
from .evaluation import (
    AgreementMatrix,
    EvalReport,
    PredictionRecord,
    RunManifest,
    contamination_report,
    delta1,
    delta2,
    evaluate_run,
    fleiss_kappa,
    macro_f1,
    parse_prediction,
    proportion_sweep,
    simulate_memorizing_model,
)
from .gateway import (
    GeneratorRequest,
    GeneratorResponse,
    Gateway,
    HTTPBackend,
    MockBackend,
    MockRule,
    ResponseCache,
    cached_generate,
    generate,
)
from .knowledge import (
    EntitySet,
    KnowledgeRecord,
    KnowledgeSummary,
    TimeWindow,
    extract_entities,
    query_gdelt,
    summarize_knowledge,
)
from .pipeline import PipelineConfig, update_dataset
from .prompts import PromptTemplate, load_template_pack, render_prompt
from .recontext import (
    CandidateText,
    Triple,
    TripleSet,
    TripleUpdate,
    build_semantic_dataset,
    extract_triples,
    semantic_rewrite,
    substitute_triples,
    synthesize_updated_text,
    update_triples,
)
from .reflection import (
    ReflectionConfig,
    ReflectionVerdict,
    Unresolved,
    check_incorrect_information,
    check_label_alignment,
    reflect_and_refine,
)

__version__ = "0.1.0"
