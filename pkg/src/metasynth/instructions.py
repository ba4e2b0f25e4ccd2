"""Instruction synthesis, response prompt construction, and judge calls.

Instructions are complex questions evolved from a synthesized document by a
meta-prompted expert crew; candidate questions that fail the evaluation step
go through a complexity-suggestion and editing pass before being presented.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field

from . import prompts
from .corpus import (
    INSTRUCTION_MAX_WORDS,
    INSTRUCTION_SLACK_WORDS,
    Document,
    Instruction,
    ResponseRecord,
    count_words,
)
from .engine import (
    EngineConfig,
    ExecutionHistory,
    MetaEngine,
    init_history,
    render_expert_prompt,
)
from .gateway import ChatProvider, ChatRequest, JUDGE_TEMPERATURE

logger = logging.getLogger("metasynth.instructions")

DEFAULT_INSTRUCT_EXPERTS = [
    "Document Transformation Expert",
    "Persona Suggestion Expert",
    "Question Generation Expert",
    "Evaluation Expert",
    "Complexity Expert",
    "Question Editor Expert",
]

# Leaked scaffolding phrases; document-reference phrases match anywhere, the
# persona opener only at the start of a question.
BANNED_SUBSTRINGS = ("based on the document", "according to the document")
BANNED_PREFIX = "as a "

PROMPT_FORMATS = ("free_form", "cot", "constrained_cot")
WORD_LIMIT_CHOICES = tuple(range(50, 501, 50))


@dataclass
class InstructRunConfig:
    task_description: str = ""
    required_experts: list[str] = field(
        default_factory=lambda: list(DEFAULT_INSTRUCT_EXPERTS)
    )
    max_words: int = INSTRUCTION_MAX_WORDS
    slack_words: int = INSTRUCTION_SLACK_WORDS
    engine: EngineConfig = field(
        default_factory=lambda: EngineConfig(round_limit=128, answer_tag="questions")
    )
    max_instructions_per_doc: int = 5
    id_prefix: str = "inst"

    def __post_init__(self) -> None:
        if not self.task_description:
            self.task_description = prompts.load_preset("complex_questions")

    def validate(self) -> None:
        if not self.task_description.strip():
            raise ValueError("task_description must be nonempty")


def parse_questions(text: str) -> list[str]:
    """Extract all well-formed ``<question>...</question>`` payloads in
    order. Total: malformed regions are skipped, never raised on."""
    questions: list[str] = []
    position = 0
    open_tag, close_tag = "<question>", "</question>"
    while True:
        start = text.find(open_tag, position)
        if start < 0:
            break
        end = text.find(close_tag, start + len(open_tag))
        if end < 0:
            logger.warning("unclosed question tag at offset %d skipped", start)
            break
        questions.append(text[start + len(open_tag) : end].strip())
        position = end + len(close_tag)
    return questions


def banned_phrase_violation(text: str) -> str | None:
    lowered = text.lower()
    for phrase in BANNED_SUBSTRINGS:
        if phrase in lowered:
            return f"contains banned phrase {phrase!r}"
    if lowered.lstrip().startswith(BANNED_PREFIX):
        return f"starts with banned phrase {BANNED_PREFIX.strip()!r}"
    return None


def name_leak_violation(text: str, names: list[str]) -> str | None:
    lowered = text.lower()
    for name in names:
        name = name.strip()
        if name and name.lower() in lowered:
            return f"contains expert or persona name {name!r}"
    return None


_EVAL_REJECT_MARKERS = (
    "not sufficiently complex",
    "not complex",
    "insufficiently complex",
    "too simple",
    "reject",
)


def parse_persona_list(reply: str) -> list[str]:
    """Pull persona names from a suggestion-expert reply: bulleted or
    numbered lines first, else a comma list."""
    personas: list[str] = []
    for line in reply.splitlines():
        match = re.match(r"\s*(?:[-*•]|\d+[.)])\s*(.+)", line)
        if match:
            personas.append(match.group(1).strip().rstrip("."))
    if personas:
        return personas
    body = reply.split(":", 1)[-1]
    return [part.strip().rstrip(".") for part in body.split(",") if part.strip()]


@dataclass
class InstructSynthesisResult:
    instructions: list[Instruction]
    filtered: list[tuple[str, str]]
    transcript: ExecutionHistory
    status: str
    experts_consulted: list[str] = field(default_factory=list)
    input_tokens: int = 0
    output_tokens: int = 0


class InstructionSynthesizer:
    """Observes the engine run for a single source document and assembles
    instructions with their evolution traces."""

    def __init__(
        self, doc: Document, config: InstructRunConfig, provider: ChatProvider
    ) -> None:
        config.validate()
        self.doc = doc
        self.config = config
        self.provider = provider
        self.personas: list[str] = []
        self.experts_called: list[str] = []
        self.evolution_events: list[tuple[str, str]] = []
        self.instructions: list[Instruction] = []
        self.filtered: list[tuple[str, str]] = []
        self.history = init_history(
            prompts.INSTRUCT_SYSTEM_PROMPT,
            prompts.INSTRUCT_META_PROMPT.format(
                task_description=config.task_description
            ),
            config.task_description,
            f"<document>\n{doc.text}\n</document>",
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
            f"Questions presented so far: {len(self.instructions)} "
            f"(cap {self.config.max_instructions_per_doc})."
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
        self.experts_called.append(name)
        lowered = name.lower()
        if "document transformation" in lowered:
            self.evolution_events.append((name, "transformed source document"))
        elif "persona suggestion" in lowered:
            self.personas.extend(parse_persona_list(reply))
        elif "question generation" in lowered:
            self.evolution_events.append((name, "generated candidate questions"))
        elif "evaluation" in lowered:
            rejected = any(
                marker in reply.lower() for marker in _EVAL_REJECT_MARKERS
            )
            self.evolution_events.append(
                (name, "rejected candidates as insufficiently complex")
                if rejected
                else (name, "confirmed question complexity")
            )
        elif "complexity" in lowered:
            self.evolution_events.append((name, "proposed complexity modifications"))
        elif "question editor" in lowered:
            self.evolution_events.append((name, "rewrote questions per suggestions"))

    def _on_payload(self, payloads: list[str], round_no: int) -> None:
        leak_names = list(self.personas)
        leak_names.extend(self.experts_called)
        for payload in payloads:
            for question in parse_questions(payload) or [payload]:
                if not question.strip():
                    continue
                reason = banned_phrase_violation(question)
                if reason is None:
                    reason = name_leak_violation(question, leak_names)
                if reason is None:
                    words = count_words(question)
                    ceiling = self.config.max_words + self.config.slack_words
                    if words > ceiling:
                        reason = f"{words} words exceeds cap {ceiling}"
                if reason is None and (
                    len(self.instructions) >= self.config.max_instructions_per_doc
                ):
                    reason = (
                        f"exceeds per-document cap "
                        f"{self.config.max_instructions_per_doc}"
                    )
                if reason is not None:
                    logger.info("question filtered: %s", reason)
                    self.filtered.append((question, reason))
                    continue
                self.instructions.append(
                    Instruction.make(
                        id=f"{self.config.id_prefix}-{len(self.instructions) + 1:03d}",
                        text=question,
                        parent_document_id=self.doc.id,
                        evolution_trace=list(self.evolution_events),
                    )
                )

    def run(self) -> InstructSynthesisResult:
        outcome = self.engine.run(self.history)
        return InstructSynthesisResult(
            instructions=self.instructions,
            filtered=self.filtered,
            transcript=self.history,
            status=outcome.status,
            experts_consulted=list(self.experts_called),
            input_tokens=outcome.input_tokens,
            output_tokens=outcome.output_tokens,
        )


def synthesize_instructions(
    doc: Document, config: InstructRunConfig, provider: ChatProvider
) -> InstructSynthesisResult:
    """Evolve complex instructions from one synthesized document."""
    return InstructionSynthesizer(doc, config, provider).run()


# --- response prompt construction -------------------------------------------


@dataclass
class ResponsePrompt:
    instruction_id: str
    prompt: str
    prompt_format: str
    word_limit: int | None


def _render_format(context: str, question: str, fmt: str, limit: int | None) -> str:
    if fmt == "free_form":
        return prompts.FREE_FORM_TEMPLATE.format(context=context, instruction=question)
    if fmt == "cot":
        return prompts.COT_TEMPLATE.format(context=context, instruction=question)
    return prompts.CONSTRAINED_COT_TEMPLATE.format(
        context=context, instruction=question, word_limit=limit
    )


def build_response_prompts(
    context: Document, instructions: list[Instruction], rng_seed: int
) -> list[ResponsePrompt]:
    """Assign each instruction one of three response formats and emit one
    prompt per instruction.

    Formats are drawn uniformly; constrained chain-of-thought prompts get a
    word limit from {50, 100, ..., 500}. Emission order comes from sampling
    random instruction subsets until every instruction has appeared, so the
    result is deterministic in ``rng_seed`` and covers every instruction
    exactly once.
    """
    if not instructions:
        raise ValueError("instructions must be nonempty")
    rng = random.Random(rng_seed)
    assigned: dict[str, tuple[str, int | None]] = {}
    for instruction in instructions:
        fmt = rng.choice(PROMPT_FORMATS)
        limit = rng.choice(WORD_LIMIT_CHOICES) if fmt == "constrained_cot" else None
        assigned[instruction.id] = (fmt, limit)
    remaining = {instruction.id for instruction in instructions}
    emitted: list[ResponsePrompt] = []
    while remaining:
        subset = rng.sample(instructions, k=rng.randint(1, len(instructions)))
        for instruction in subset:
            if instruction.id not in remaining:
                continue
            remaining.discard(instruction.id)
            fmt, limit = assigned[instruction.id]
            emitted.append(
                ResponsePrompt(
                    instruction_id=instruction.id,
                    prompt=_render_format(context.text, instruction.text, fmt, limit),
                    prompt_format=fmt,
                    word_limit=limit,
                )
            )
    return emitted


def synthesize_responses(
    context: Document,
    instructions: list[Instruction],
    provider: ChatProvider,
    rng_seed: int,
) -> list[ResponseRecord]:
    """Generate one response per instruction using the format-varied prompts."""
    records: list[ResponseRecord] = []
    for rp in build_response_prompts(context, instructions, rng_seed):
        response = provider.complete(
            ChatRequest(system=None, messages=[("user", rp.prompt)])
        )
        records.append(
            ResponseRecord(
                instruction_id=rp.instruction_id,
                prompt_format=rp.prompt_format,
                word_limit=rp.word_limit,
                response_text=response.content,
            )
        )
    return records


# --- judge calls -------------------------------------------------------------

JUDGE_KINDS = ("accuracy", "relevance", "category", "winrate")


class JudgeParseError(Exception):
    pass


@dataclass
class JudgeVerdict:
    kind: str
    value: str

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


def write_judgements(verdicts: list["JudgeVerdict"], path: str) -> None:
    """Persist judge verdicts as JSONL, one ``{kind, value}`` object per line."""
    import json

    with open(path, "w", encoding="utf-8") as handle:
        for verdict in verdicts:
            handle.write(json.dumps(verdict.to_json_dict(), ensure_ascii=False) + "\n")


def _judge_request(prompt: str) -> ChatRequest:
    return ChatRequest(
        system=None, messages=[("user", prompt)], temperature=JUDGE_TEMPERATURE
    )


def _strict_parse(kind: str, reply: str, categories: list[str] | None) -> str | None:
    stripped = reply.strip()
    if kind in ("accuracy", "relevance"):
        return stripped if stripped in ("0", "1") else None
    if kind == "winrate":
        return (
            stripped.strip("[]").upper()
            if stripped in ("[[A]]", "[[B]]", "[[C]]")
            else None
        )
    if kind == "category":
        assert categories is not None
        for category in categories:
            if stripped.lower() == category.lower():
                return category
        return None
    raise ValueError(f"unknown judge kind {kind!r}")


def judge(
    kind: str,
    inputs: dict,
    judge_provider: ChatProvider,
    categories: list[str] | None = None,
) -> JudgeVerdict:
    """Run one judge call and parse its verdict strictly.

    Accuracy and relevance accept only a lone ``0``/``1``; winrate only
    ``[[A]]``/``[[B]]``/``[[C]]``; category only a member of the supplied
    list. A first parse failure triggers exactly one re-ask.
    """
    if kind not in JUDGE_KINDS:
        raise ValueError(f"unknown judge kind {kind!r}")
    if kind == "category":
        categories = categories or prompts.default_task_categories()
        prompt = prompts.CATEGORY_JUDGE_PROMPT.format(
            categories=", ".join(categories),
            instruction=inputs["instruction"],
            response=inputs["response"],
        )
    elif kind == "accuracy":
        prompt = prompts.ACCURACY_JUDGE_PROMPT.format(**inputs)
    elif kind == "relevance":
        prompt = prompts.RELEVANCE_JUDGE_PROMPT.format(**inputs)
    else:
        prompt = prompts.WINRATE_JUDGE_PROMPT.format(**inputs)
    for attempt in range(2):
        reply = judge_provider.complete(_judge_request(prompt)).content
        value = _strict_parse(kind, reply, categories)
        if value is not None:
            return JudgeVerdict(kind=kind, value=value)
        logger.warning("judge reply unparseable (attempt %d): %r", attempt + 1, reply[:80])
    raise JudgeParseError(f"{kind} judge reply unparseable after re-ask")


def judge_pair_with_swap(
    question: str, answer_a: str, answer_b: str, judge_provider: ChatProvider
) -> str:
    """Judge a response pair twice with the answer order swapped.

    A win counts only when both orderings agree; any disagreement is a tie,
    which controls for position bias.
    """
    first = judge(
        "winrate",
        {"question": question, "answer_a": answer_a, "answer_b": answer_b},
        judge_provider,
    ).value
    second_raw = judge(
        "winrate",
        {"question": question, "answer_a": answer_b, "answer_b": answer_a},
        judge_provider,
    ).value
    swap_map = {"A": "B", "B": "A", "C": "C"}
    second = swap_map[second_raw]
    if first == second == "C":
        return "tie"
    if first == second and first in ("A", "B"):
        return first
    return "tie"


def aggregate_winrates(verdicts: list[str]) -> dict[str, float]:
    """Fold per-pair verdicts (``A``/``B``/``tie`` or ``C``) into fractions
    that sum to exactly 1."""
    if not verdicts:
        raise ValueError("verdicts must be nonempty")
    n = len(verdicts)
    a = sum(1 for v in verdicts if v == "A") / n
    b = sum(1 for v in verdicts if v == "B") / n
    # tie is the residual of the rounded sum, so a + b + tie == 1.0 exactly
    return {"A": a, "B": b, "tie": 1.0 - (a + b)}
