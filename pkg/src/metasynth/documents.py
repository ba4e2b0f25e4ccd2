"""Document generation.

Two routes: the agentic route drives the meta engine with a memory of
accepted instances (a classification table of summaries and categories) and a
monotonically expanding seed keyword set; the template baseline generates
from one static five-shot prompt that carries all prior outputs.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .corpus import DEFAULT_LENGTH_WINDOW, Document
from .engine import (
    EngineConfig,
    ExecutionHistory,
    MetaEngine,
    init_history,
    render_expert_prompt,
)
from .gateway import ChatProvider

logger = logging.getLogger("metasynth.documents")

DEFAULT_DOC_EXPERTS = [
    "Seed Keyword Extraction Expert",
    "Summarizer Expert",
    "Content Analyst Expert",
    "Seed Keyword Expansion Expert",
    "Domain Expert",
]

# Negative markers are checked first: "not sufficiently distinct" contains
# "sufficiently distinct".
_REJECT_MARKERS = (
    "not sufficiently distinct",
    "insufficiently distinct",
    "not distinct",
    "too similar",
    "should be re-written",
    "should be rewritten",
    "reject",
)
_APPROVE_MARKERS = (
    "sufficiently distinct",
    "distinct enough",
    "approve",
    "accept",
)

_CATEGORY_PATTERN = re.compile(r"category\s*[:=]\s*([^\n.;]+)", re.IGNORECASE)
_BRACKET_LIST_PATTERN = re.compile(r"\[(.*?)\]", re.DOTALL)
_SEED_KEYWORDS_PATTERN = re.compile(
    r"<seed keywords>\s*\[?(.*?)\]?\s*</seed keywords>", re.DOTALL | re.IGNORECASE
)


@dataclass
class SeedState:
    """Current seed keywords and documents; keywords only ever grow."""

    keywords: list[str] = field(default_factory=list)
    seed_documents: list[Document] | None = None
    generation: int = 0
    expansion_log: list[tuple[int, list[str]]] = field(default_factory=list)

    def has_seeds(self) -> bool:
        return bool(self.keywords) or bool(self.seed_documents)

    def keyword_set(self) -> set[str]:
        return {kw.lower() for kw in self.keywords}


def expand_seeds(
    state: SeedState, suggested: list[str], round_no: int = 0
) -> SeedState:
    """Union new keyword suggestions into the seed set.

    Deduplication is case-insensitive and the first-seen casing is kept. The
    expansion is always logged, even when it adds nothing.
    """
    existing = state.keyword_set()
    added: list[str] = []
    for keyword in suggested:
        keyword = keyword.strip()
        if keyword and keyword.lower() not in existing:
            existing.add(keyword.lower())
            state.keywords.append(keyword)
            added.append(keyword)
    state.expansion_log.append((round_no, added))
    return state


def merge_keywords(state: SeedState, extracted: list[str]) -> list[str]:
    """Fold extracted keywords into the seed set without logging an
    expansion (used for the initial extraction step)."""
    existing = state.keyword_set()
    for keyword in extracted:
        keyword = keyword.strip()
        if keyword and keyword.lower() not in existing:
            existing.add(keyword.lower())
            state.keywords.append(keyword)
    return state.keywords


def parse_keyword_list(text: str) -> list[str]:
    """Pull a keyword list out of an expert reply.

    Prefers a ``<seed keywords>[...]</seed keywords>`` block, then the first
    bracketed list, then a ``keywords: a, b`` line.
    """
    match = _SEED_KEYWORDS_PATTERN.search(text)
    if match is None:
        match = _BRACKET_LIST_PATTERN.search(text)
    if match is not None:
        raw = match.group(1)
    else:
        line_match = re.search(r"keywords?\s*[:=]\s*(.+)", text, re.IGNORECASE)
        if line_match is None:
            return []
        raw = line_match.group(1)
    items = [item.strip().strip("\"'") for item in raw.split(",")]
    return [item for item in items if item]


@dataclass
class MemoryRow:
    instance_id: str
    summary: str
    category: str


@dataclass
class InstanceMemory:
    """The classification table of accepted instances: one row per accepted
    document, comparing always happens on summaries, never full texts."""

    rows: list[MemoryRow] = field(default_factory=list)

    def add(self, instance_id: str, summary: str, category: str) -> None:
        self.rows.append(MemoryRow(instance_id, summary, category))

    def render_table(self) -> str:
        if not self.rows:
            return "(no instances yet)"
        lines = []
        for row in self.rows:
            flat_summary = " / ".join(
                part.strip() for part in row.summary.splitlines() if part.strip()
            )
            lines.append(f"- {row.instance_id} | {row.category} | {flat_summary}")
        return "\n".join(lines)


@dataclass
class DocRunConfig:
    n_documents: int = 1
    domain: str = "finance"
    required_experts: list[str] = field(
        default_factory=lambda: list(DEFAULT_DOC_EXPERTS)
    )
    target_words: int = 400
    length_window: tuple[int, int] = DEFAULT_LENGTH_WINDOW
    engine: EngineConfig = field(
        default_factory=lambda: EngineConfig(round_limit=256, answer_tag="document")
    )
    max_expansions_per_cycle: int = 3
    id_prefix: str = "doc"

    def validate(self) -> None:
        if self.n_documents < 1:
            raise ValueError("n_documents must be >= 1")


def classify_expert(name: str) -> str:
    lowered = name.lower()
    if "seed keyword extraction" in lowered:
        return "extract"
    if "seed keyword expansion" in lowered:
        return "expand"
    if "summarizer" in lowered:
        return "summarize"
    if "content analyst" in lowered:
        return "analyze"
    if "topic labeling" in lowered:
        return "label"
    return "write"


def parse_analyst_verdict(reply: str) -> bool | None:
    """True = approved, False = rejected, None = no verdict found."""
    lowered = reply.lower()
    if any(marker in lowered for marker in _REJECT_MARKERS):
        return False
    if any(marker in lowered for marker in _APPROVE_MARKERS):
        return True
    return None


def parse_analyst_category(reply: str) -> str | None:
    match = _CATEGORY_PATTERN.search(reply)
    if match is None:
        return None
    return match.group(1).strip().lower() or None


def _strip_document_tags(text: str) -> str:
    match = re.search(r"<document>(.*?)</document>", text, re.DOTALL | re.IGNORECASE)
    return match.group(1).strip() if match else text.strip()


@dataclass
class _DraftCycle:
    text: str
    writer: str
    round: int
    summary: str | None = None
    analyst_approved: bool = False
    category: str | None = None
    secondary_confirmed: bool = False


@dataclass
class DocSynthesisResult:
    accepted: list[Document]
    rejected: list[Document]
    transcript: ExecutionHistory
    status: str
    memory: InstanceMemory
    seed_state: SeedState
    extraction_first: bool | None
    experts_consulted: list[str] = field(default_factory=list)
    input_tokens: int = 0
    output_tokens: int = 0


def render_seed_block(seeds: SeedState, n_documents: int) -> str:
    parts = [
        f"<number-of-documents-to-generate>{n_documents}"
        "</number-of-documents-to-generate>"
    ]
    if seeds.keywords:
        parts.append(f"<seed keywords>[{', '.join(seeds.keywords)}]</seed keywords>")
    if seeds.seed_documents:
        doc_parts = []
        for index, doc in enumerate(seeds.seed_documents, start=1):
            doc_parts.append(f"<document {index}>\n{doc.text}\n</document {index}>")
        parts.append("<seed documents>\n" + "\n".join(doc_parts) + "\n</seed documents>")
    return "\n".join(parts)


class DocumentSynthesizer:
    """Watches an engine run and maintains the instance memory, the seed
    state, and the accepted/rejected document lists."""

    def __init__(
        self, seeds: SeedState, config: DocRunConfig, provider: ChatProvider
    ) -> None:
        config.validate()
        if not seeds.has_seeds():
            raise ValueError("at least one seed keyword or seed document is required")
        self.seeds = seeds
        self.config = config
        self.provider = provider
        self.memory = InstanceMemory()
        self.accepted: list[Document] = []
        self.rejected: list[Document] = []
        self._cycle: _DraftCycle | None = None
        self._expansions_since_accept = 0
        self._first_expert: str | None = None
        self._experts_consulted: list[str] = []
        self._rejected_seq = 0
        self.history = init_history(
            prompts.DOC_SYSTEM_PROMPT,
            prompts.DOC_META_PROMPT,
            prompts.DOC_TASK_TEMPLATE.format(domain=config.domain),
            render_seed_block(seeds, config.n_documents),
            round_limit=config.engine.round_limit,
        )
        self.engine = MetaEngine(
            config.engine,
            provider,
            expert_dispatcher=self._dispatch,
            inject_hook=self._inject,
            on_payload=self._on_payload,
        )

    def _inject(self, history: ExecutionHistory) -> str:
        return (
            f"Documents accepted so far: {len(self.accepted)} of "
            f"{self.config.n_documents}.\n"
            f"Current seed keywords: [{', '.join(self.seeds.keywords) or 'none'}]\n"
            "Instance classification table (id | category | summary):\n"
            f"{self.memory.render_table()}"
        )

    def _dispatch(self, name: str, instruction: str) -> str:
        request = render_expert_prompt(
            name, instruction, self.config.engine.temperature, self.config.engine.max_tokens
        )
        response = self.provider.complete(request)
        self.engine._track(response)
        self._observe(name, response.content)
        return response.content

    def _observe(self, name: str, reply: str) -> None:
        role = classify_expert(name)
        self._experts_consulted.append(name)
        if self._first_expert is None:
            self._first_expert = role
        if role == "extract":
            merge_keywords(self.seeds, parse_keyword_list(reply))
        elif role == "expand":
            if self._expansions_since_accept < self.config.max_expansions_per_cycle:
                expand_seeds(self.seeds, parse_keyword_list(reply), self.history.round)
                self._expansions_since_accept += 1
            else:
                logger.warning(
                    "ignoring seed expansion beyond %d per cycle",
                    self.config.max_expansions_per_cycle,
                )
        elif role == "summarize":
            if self._cycle is not None:
                self._cycle.summary = reply.strip()
                self._cycle.secondary_confirmed = True
        elif role == "analyze":
            if self._cycle is None:
                return
            verdict = parse_analyst_verdict(reply)
            if verdict is False:
                self._reject_cycle(reply)
            elif verdict is True:
                self._cycle.analyst_approved = True
                category = parse_analyst_category(reply)
                if category:
                    self._cycle.category = category
        elif role == "write":
            self._cycle = _DraftCycle(
                text=_strip_document_tags(reply),
                writer=name,
                round=self.history.round,
            )

    def _reject_cycle(self, feedback: str) -> None:
        assert self._cycle is not None
        self._rejected_seq += 1
        self.rejected.append(
            Document.make(
                id=f"{self.config.id_prefix}-rej{self._rejected_seq:03d}",
                text=self._cycle.text,
                source="metasynth",
                domain=self.config.domain,
                seed_snapshot=list(self.seeds.keywords),
                summary=self._cycle.summary,
                created_round=self.history.round,
                rejection_reason=feedback,
            )
        )
        self._cycle = None

    def _on_payload(self, payloads: list[str], round_no: int) -> None:
        for payload in payloads:
            cycle = self._cycle
            if cycle is None or not (cycle.analyst_approved and cycle.secondary_confirmed):
                self._rejected_seq += 1
                self.rejected.append(
                    Document.make(
                        id=f"{self.config.id_prefix}-rej{self._rejected_seq:03d}",
                        text=payload,
                        source="metasynth",
                        domain=self.config.domain,
                        seed_snapshot=list(self.seeds.keywords),
                        created_round=round_no,
                        rejection_reason=(
                            "presented without a diversity verdict and a second "
                            "expert confirmation"
                        ),
                    )
                )
                continue
            doc = Document.make(
                id=f"{self.config.id_prefix}-{len(self.accepted) + 1:03d}",
                text=payload,
                source="metasynth",
                domain=self.config.domain,
                seed_snapshot=list(self.seeds.keywords),
                summary=cycle.summary,
                category=cycle.category or "uncategorized",
                created_round=round_no,
            )
            lo, hi = self.config.length_window
            if not lo <= doc.word_count <= hi:
                doc.rejection_reason = (
                    f"length {doc.word_count} outside window {self.config.length_window}"
                )
                self.rejected.append(doc)
            else:
                self.accepted.append(doc)
                self.memory.add(doc.id, cycle.summary or "", doc.category or "")
                self.seeds.generation += 1
                self._expansions_since_accept = 0
            self._cycle = None

    def run(self) -> DocSynthesisResult:
        outcome = self.engine.run(self.history)
        return DocSynthesisResult(
            accepted=self.accepted,
            rejected=self.rejected,
            transcript=self.history,
            status=outcome.status,
            memory=self.memory,
            seed_state=self.seeds,
            extraction_first=(
                (self._first_expert == "extract") if self.seeds.seed_documents else None
            ),
            experts_consulted=self._experts_consulted,
            input_tokens=outcome.input_tokens,
            output_tokens=outcome.output_tokens,
        )


def synthesize_documents(
    seeds: SeedState, config: DocRunConfig, provider: ChatProvider
) -> DocSynthesisResult:
    """Run one agentic document synthesis pass over the meta engine."""
    return DocumentSynthesizer(seeds, config, provider).run()


def audit_analyst_isolation(
    transcript: ExecutionHistory, accepted: list[Document]
) -> list[str]:
    """Check that no Content Analyst instruction carries a full accepted
    document text (comparisons must go through summaries).

    Returns one violation string per offending instruction.
    """
    from .engine import META_OUTPUT, _find_expert_calls

    violations: list[str] = []
    probe_config = EngineConfig()
    for entry in transcript.entries:
        if entry.kind != META_OUTPUT:
            continue
        for call in _find_expert_calls(entry.content, probe_config):
            if classify_expert(call.name) != "analyze":
                continue
            for doc in accepted:
                if doc.text in call.instruction:
                    violations.append(
                        f"round {entry.round}: analyst instruction contains full "
                        f"text of {doc.id}"
                    )
    return violations


def summarize_instance(doc_text: str, provider: ChatProvider) -> str:
    """Ask the summarizer expert for the three-line summary of a document."""
    if not doc_text or not doc_text.strip():
        raise ValueError("doc_text must be nonempty")
    request = render_expert_prompt(
        "Summarizer Expert", prompts.SUMMARIZER_TEMPLATE.format(document=doc_text)
    )
    return provider.complete(request).content.strip()


# --- template-prompting baseline -------------------------------------------

TEMPLATE_SEED_COUNT = 5
COPY_GUARD_WINDOW_WORDS = 50


class TemplateGenerationError(Exception):
    pass


def _render_template_prompt(
    seed_docs: list[Document], prior_texts: list[str], domain: str
) -> str:
    seed_block = "\n\n".join(
        f"<seed document {index}>\n{doc.text}\n</seed document {index}>"
        for index, doc in enumerate(seed_docs, start=1)
    )
    if prior_texts:
        prior_block = "\n\n".join(
            f"<previous document {index}>\n{text}\n</previous document {index}>"
            for index, text in enumerate(prior_texts, start=1)
        )
    else:
        prior_block = "(none yet)"
    return prompts.TEMPLATE_PROMPT.format(
        seed_documents=seed_block, previous_documents=prior_block, domain=domain
    )


def _token_windows(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def has_verbatim_overlap(
    text: str, seed_docs: list[Document], window: int = COPY_GUARD_WINDOW_WORDS
) -> bool:
    """True when the text shares a contiguous run of ``window`` words with
    any seed document."""
    tokens = text.split()
    if len(tokens) < window:
        return False
    candidate = _token_windows(tokens, window)
    for doc in seed_docs:
        if candidate & _token_windows(doc.text.split(), window):
            return True
    return False


def template_generate(
    seed_docs: list[Document],
    n_documents: int,
    provider: ChatProvider,
    domain: str = "finance",
    id_prefix: str = "tpl",
) -> list[Document]:
    """Generate documents from the static five-shot template prompt.

    Each call's prompt carries all previously generated documents so the
    generator can steer away from them. An output that copies a 50-word run
    from a seed is regenerated once; a second copy fails the run.
    """
    if len(seed_docs) != TEMPLATE_SEED_COUNT:
        raise ValueError(
            f"template generation requires exactly {TEMPLATE_SEED_COUNT} seed documents"
        )
    if n_documents < 1:
        raise ValueError("n_documents must be >= 1")
    generated: list[Document] = []
    prior_texts: list[str] = []
    for index in range(1, n_documents + 1):
        prompt = _render_template_prompt(seed_docs, prior_texts, domain)
        text = _one_template_call(prompt, provider)
        if has_verbatim_overlap(text, seed_docs):
            logger.warning("template output %d copied a seed; regenerating once", index)
            text = _one_template_call(prompt, provider)
            if has_verbatim_overlap(text, seed_docs):
                raise TemplateGenerationError(
                    f"document {index} copied seed text verbatim after regeneration"
                )
        doc = Document.make(
            id=f"{id_prefix}-{index:03d}",
            text=text,
            source="template",
            domain=domain,
            seed_snapshot=[doc.id for doc in seed_docs],
        )
        generated.append(doc)
        prior_texts.append(text)
    return generated


def _one_template_call(prompt: str, provider: ChatProvider) -> str:
    from .gateway import ChatRequest

    for attempt in range(2):
        response = provider.complete(
            ChatRequest(system=None, messages=[("user", prompt)])
        )
        payloads = re.findall(
            r"<document>(.*?)</document>", response.content, re.DOTALL | re.IGNORECASE
        )
        payloads = [p.strip() for p in payloads if p.strip()]
        if payloads:
            return payloads[0]
        logger.warning("template output had no <document> payload (attempt %d)", attempt + 1)
    raise TemplateGenerationError("no <document> payload after retry")
