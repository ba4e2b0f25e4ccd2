"""The generic meta-prompting loop.

A central "Meta-Expert" model is called on its full execution history each
round. Its output is parsed into one of four actions: call an expert, present
final answer payloads, end the run, or a formatting error. Experts are
stateless and isolated: each expert call sees only the instruction the meta
model composed for it ("fresh eyes"), never the history.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable

from .gateway import ChatProvider, ChatRequest, ChatResponse, DEFAULT_MAX_TOKENS

logger = logging.getLogger("metasynth.engine")

# History entry kinds
INITIAL_TASK = "initial_task"
META_OUTPUT = "meta_output"
EXPERT_RESULT = "expert_result"
INJECTED_INSTRUCTION = "injected_instruction"
ERROR = "error"

# Run terminal statuses
COMPLETED = "completed"
DISCARDED = "discarded"
INCOMPLETE = "incomplete"
CONTEXT_OVERFLOW = "context_overflow"

END_TOKEN = "<END>"

FORMAT_ERROR_MESSAGE = (
    "Your previous reply was not understood. Reply with either one expert call "
    'in the form `Expert Name: """instructions"""`, a final answer inside the '
    "answer tags, or the end token."
)


class EngineError(Exception):
    pass


@dataclass
class HistoryEntry:
    kind: str
    content: str
    round: int

    def to_json_dict(self) -> dict:
        return {"round": self.round, "kind": self.kind, "content": self.content}


@dataclass
class ExecutionHistory:
    """The meta model's growing transcript. Entries are append-only."""

    entries: list[HistoryEntry] = field(default_factory=list)
    round: int = 1
    round_limit: int = 256

    def append(self, kind: str, content: str) -> HistoryEntry:
        entry = HistoryEntry(kind=kind, content=content, round=self.round)
        self.entries.append(entry)
        return entry

    def render(self) -> str:
        """Flatten the history into the prompt fed to the meta model."""
        parts: list[str] = []
        for entry in self.entries:
            if entry.kind == INITIAL_TASK:
                parts.append(entry.content)
            elif entry.kind == META_OUTPUT:
                parts.append(f"[Meta-Expert]\n{entry.content}")
            elif entry.kind == EXPERT_RESULT:
                parts.append(f"[Expert reply]\n{entry.content}")
            elif entry.kind == INJECTED_INSTRUCTION:
                parts.append(f"[Instruction to Meta-Expert]\n{entry.content}")
            else:
                parts.append(f"[Error]\n{entry.content}")
        return "\n\n".join(parts)

    def kinds(self) -> list[str]:
        return [entry.kind for entry in self.entries]


def init_history(
    system_prompt: str,
    meta_prompt: str,
    task_description: str,
    seeds: str,
    round_limit: int = 256,
) -> ExecutionHistory:
    """Build a fresh history whose single entry carries the system prompt,
    meta prompt, task description and rendered seed block, in that order."""
    for name, value in (
        ("system_prompt", system_prompt),
        ("meta_prompt", meta_prompt),
        ("task_description", task_description),
        ("seeds", seeds),
    ):
        if not value or not value.strip():
            raise ValueError(f"{name} must be nonempty")
    history = ExecutionHistory(round_limit=round_limit)
    content = "\n\n".join([system_prompt, meta_prompt, task_description, seeds])
    history.append(INITIAL_TASK, content)
    return history


@dataclass
class ExpertCall:
    name: str
    instruction: str


@dataclass
class FinalAnswer:
    payloads: list[str]


@dataclass
class End:
    pass


@dataclass
class FormatError:
    reason: str


MetaAction = ExpertCall | FinalAnswer | End | FormatError


@dataclass
class EngineConfig:
    """Knobs for one meta-prompting run."""

    round_limit: int = 256
    max_error_retries: int = 3
    required_expert_names: list[str] = field(default_factory=list)
    answer_tag: str = "document"
    end_token: str = END_TOKEN
    expert_aliases: list[str] = field(default_factory=list)
    max_context_chars: int | None = None
    temperature: float = 1.0
    max_tokens: int = DEFAULT_MAX_TOKENS

    def validate(self) -> None:
        if self.round_limit <= 0:
            raise ValueError("round_limit must be positive")
        if self.max_error_retries < 1:
            raise ValueError("max_error_retries must be >= 1")


_EXPERT_CALL_PATTERN = re.compile(
    r'([A-Za-z][A-Za-z/ ]*?Expert)\s*:\s*"""(.*?)"""', re.DOTALL
)


def _extract_tagged(text: str, tag: str) -> list[str]:
    pattern = re.compile(rf"<{re.escape(tag)}>(.*?)</{re.escape(tag)}>", re.DOTALL | re.IGNORECASE)
    return [match.strip() for match in pattern.findall(text)]


def _find_expert_calls(text: str, config: EngineConfig) -> list[ExpertCall]:
    found: list[tuple[int, ExpertCall]] = []
    patterns = [_EXPERT_CALL_PATTERN]
    patterns.extend(
        re.compile(rf'({re.escape(alias)})\s*:\s*"""(.*?)"""', re.DOTALL)
        for alias in config.expert_aliases
    )
    for pattern in patterns:
        for match in pattern.finditer(text):
            call = ExpertCall(
                name=match.group(1).strip(), instruction=match.group(2).strip()
            )
            if call.instruction:
                found.append((match.start(), call))
    found.sort(key=lambda item: item[0])
    deduped: list[ExpertCall] = []
    seen_positions: set[int] = set()
    for position, call in found:
        if position not in seen_positions:
            seen_positions.add(position)
            deduped.append(call)
    return deduped


def parse_meta_output(text: str, config: EngineConfig) -> MetaAction:
    """Classify one meta-model output. Total: never raises.

    Priority: end token with no answer payload wins; then answer payloads;
    then the first well-formed expert call; anything else is a format error.
    When an output carries both a payload and the end token, the payload is
    surfaced now and the engine completes on the following round.
    """
    payloads = [p for p in _extract_tagged(text, config.answer_tag) if p]
    has_end = config.end_token.lower() in text.lower()
    if has_end and not payloads:
        return End()
    if payloads:
        return FinalAnswer(payloads=payloads)
    calls = _find_expert_calls(text, config)
    if calls:
        return calls[0]
    return FormatError(reason="no expert call, answer payload, or end token found")


def render_expert_prompt(
    expert_name: str,
    instruction: str,
    temperature: float = 1.0,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> ChatRequest:
    """Build an isolated expert request from the instruction alone.

    The request is a function of (expert_name, instruction) only; no history
    content can leak into it.
    """
    if not expert_name or not expert_name.strip():
        raise ValueError("expert_name must be nonempty")
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be nonempty")
    content = f"You are {expert_name}.\n\n{instruction}"
    return ChatRequest(
        system=None,
        messages=[("user", content)],
        temperature=temperature,
        max_tokens=max_tokens,
    )


ExpertDispatcher = Callable[[str, str], str]
PayloadCallback = Callable[[list[str], int], None]
InjectHook = Callable[[ExecutionHistory], str | None]


@dataclass
class RunOutcome:
    status: str
    payloads: list[str]
    history: ExecutionHistory
    rounds_used: int
    input_tokens: int = 0
    output_tokens: int = 0


class MetaEngine:
    """Drives one meta-prompting run to a terminal status.

    Every run ends in exactly one of: completed (end token), discarded (too
    many consecutive format errors), incomplete (round limit), or
    context_overflow (configured context cap exceeded).
    """

    def __init__(
        self,
        config: EngineConfig,
        provider: ChatProvider,
        expert_dispatcher: ExpertDispatcher | None = None,
        inject_hook: InjectHook | None = None,
        on_payload: PayloadCallback | None = None,
    ) -> None:
        config.validate()
        self.config = config
        self.provider = provider
        self.expert_dispatcher = expert_dispatcher or self._default_dispatcher
        self.inject_hook = inject_hook
        self.on_payload = on_payload
        self.input_tokens = 0
        self.output_tokens = 0

    def _default_dispatcher(self, name: str, instruction: str) -> str:
        request = render_expert_prompt(
            name, instruction, self.config.temperature, self.config.max_tokens
        )
        response = self.provider.complete(request)
        self._track(response)
        return response.content

    def _track(self, response: ChatResponse) -> None:
        self.input_tokens += response.usage[0]
        self.output_tokens += response.usage[1]

    def run_round(
        self, history: ExecutionHistory
    ) -> tuple[MetaAction, list[str]]:
        """Execute one round: inject, call the meta model, act on its output.

        Returns the parsed action and any payloads emitted this round.
        """
        if history.round > self.config.round_limit:
            raise EngineError("round limit already exceeded")
        if self.inject_hook is not None:
            injected = self.inject_hook(history)
            if injected:
                history.append(INJECTED_INSTRUCTION, injected)
        rendered = history.render()
        if (
            self.config.max_context_chars is not None
            and len(rendered) > self.config.max_context_chars
        ):
            raise ContextOverflow()
        request = ChatRequest(
            system=None,
            messages=[("user", rendered)],
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
        )
        response = self.provider.complete(request)
        self._track(response)
        history.append(META_OUTPUT, response.content)
        action = parse_meta_output(response.content, self.config)
        emitted: list[str] = []
        if isinstance(action, ExpertCall):
            calls = _find_expert_calls(response.content, self.config)
            if len(calls) > 1:
                # one expert at a time: honor the first call only
                history.append(
                    ERROR,
                    f"warning: {len(calls)} expert calls in one output; "
                    f"only {calls[0].name!r} was dispatched",
                )
            reply = self.expert_dispatcher(action.name, action.instruction)
            history.append(EXPERT_RESULT, reply)
        elif isinstance(action, FinalAnswer):
            emitted = list(action.payloads)
            if self.on_payload is not None:
                self.on_payload(emitted, history.round)
        elif isinstance(action, FormatError):
            history.append(ERROR, FORMAT_ERROR_MESSAGE)
        return action, emitted

    def run(self, history: ExecutionHistory) -> RunOutcome:
        all_payloads: list[str] = []
        consecutive_errors = 0
        pending_end = False
        status = INCOMPLETE
        while True:
            if pending_end:
                status = COMPLETED
                break
            try:
                action, emitted = self.run_round(history)
            except ContextOverflow:
                status = CONTEXT_OVERFLOW
                break
            all_payloads.extend(emitted)
            if isinstance(action, End):
                status = COMPLETED
                break
            if isinstance(action, FormatError):
                consecutive_errors += 1
                if consecutive_errors >= self.config.max_error_retries:
                    status = DISCARDED
                    break
            else:
                consecutive_errors = 0
            if isinstance(action, FinalAnswer):
                # entries[-1] is the meta output that carried the payloads;
                # if it also held the end token, complete on the next round
                # (the answer is presented before the run ends).
                if self.config.end_token.lower() in history.entries[-1].content.lower():
                    pending_end = True
            if history.round >= self.config.round_limit:
                status = COMPLETED if pending_end else INCOMPLETE
                break
            history.round += 1
        return RunOutcome(
            status=status,
            payloads=all_payloads,
            history=history,
            rounds_used=history.round,
            input_tokens=self.input_tokens,
            output_tokens=self.output_tokens,
        )


class ContextOverflow(EngineError):
    """Rendered history exceeded the configured context budget; the run is
    failed explicitly rather than silently truncated."""


def run_round(
    history: ExecutionHistory,
    provider: ChatProvider,
    config: EngineConfig,
    expert_dispatcher: ExpertDispatcher | None = None,
) -> tuple[MetaAction, list[str]]:
    """One-shot form of :meth:`MetaEngine.run_round` for direct use."""
    engine = MetaEngine(config, provider, expert_dispatcher=expert_dispatcher)
    return engine.run_round(history)


def save_transcript(history: ExecutionHistory, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in history.entries:
            handle.write(json.dumps(entry.to_json_dict(), ensure_ascii=False) + "\n")


def load_transcript(path: str) -> list[HistoryEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            entries.append(
                HistoryEntry(kind=obj["kind"], content=obj["content"], round=obj["round"])
            )
    return entries
