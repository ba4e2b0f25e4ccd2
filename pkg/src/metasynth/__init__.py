"""Meta-prompted multi-agent synthetic data generation, with a diversity
measurement suite and an n-gram contamination checker."""

from .contamination import ContaminationReport, em_overlap
from .corpus import (
    Corpus,
    CorpusSink,
    Document,
    Instruction,
    ResponseRecord,
    append_record,
    count_words,
    load_corpus,
    validate_length,
)
from .diversity import (
    DiversityReport,
    ReferenceFrequencies,
    bootstrap_ci,
    chamfer,
    compression_ratio,
    length_histogram,
    measure_corpus,
    mif,
    ngd_sum,
    ngram_diversity,
    remote_clique,
    task2vec_coefficient,
)
from .documents import (
    DocRunConfig,
    InstanceMemory,
    SeedState,
    expand_seeds,
    summarize_instance,
    synthesize_documents,
    template_generate,
)
from .engine import (
    EngineConfig,
    ExecutionHistory,
    MetaEngine,
    init_history,
    parse_meta_output,
    render_expert_prompt,
)
from .gateway import (
    ChatRequest,
    ChatResponse,
    ProviderConfig,
    complete,
    embed,
)
from .instructions import (
    InstructRunConfig,
    JudgeVerdict,
    build_response_prompts,
    judge,
    parse_questions,
    synthesize_instructions,
)
from .runner import RunConfig, RunManifest, resume, run
from .seeds import (
    SeedPoolState,
    label_topic,
    nearest_neighbors,
    random_keyword_seeds,
    refresh_seeds,
)

__version__ = "0.1.0"
