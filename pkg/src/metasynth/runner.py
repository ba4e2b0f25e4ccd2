"""Run orchestration: config, worker pool, manifests, and resume.

A run spawns ``workers`` independent synthesis workers (threads; generation
is API-bound). Each worker owns its own provider instance, id prefix, and
output directory, so worker outputs partition the corpus by construction and
a run is deterministic under scripted providers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import prompts
from .corpus import CorpusSink, Document, load_corpus, write_corpus_meta
from .documents import (
    DocRunConfig,
    SeedState,
    synthesize_documents,
    template_generate,
)
from .engine import COMPLETED, EngineConfig, save_transcript
from .gateway import (
    AuthenticationError,
    ChatProvider,
    ChatRequest,
    ChatResponse,
    ProviderConfig,
    RateLimiter,
)
from .instructions import InstructRunConfig, synthesize_instructions, synthesize_responses

logger = logging.getLogger("metasynth.runner")

SYNTHESIS_MODES = ("metasynth_docs", "template_docs", "instructions", "responses")
ALL_MODES = SYNTHESIS_MODES + ("measure", "contaminate")

WORKER_STATUSES = ("pending", "completed", "discarded", "incomplete")

_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(Exception):
    """Invalid run configuration; carries every problem at once."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class ManifestError(Exception):
    pass


class TokenBudgetExceeded(Exception):
    pass


def interpolate_env(value):
    """Replace ``${VAR}`` with environment values throughout a config tree."""
    if isinstance(value, str):
        return _ENV_PATTERN.sub(lambda m: os.environ.get(m.group(1), ""), value)
    if isinstance(value, list):
        return [interpolate_env(item) for item in value]
    if isinstance(value, dict):
        return {key: interpolate_env(item) for key, item in value.items()}
    return value


@dataclass
class SeedSourceConfig:
    kind: str = "keywords"  # keywords | documents
    keywords: list[str] = field(default_factory=list)
    count: int = 5
    path: str = ""
    per_worker: int = 5


@dataclass
class RunConfig:
    domain: str = "finance"
    mode: str = "metasynth_docs"
    workers: int = 64
    docs_per_seed_set: int = 50
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    embedder: ProviderConfig | None = None
    seed_source: SeedSourceConfig = field(default_factory=SeedSourceConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    rng_seed: int = 0
    output_dir: str = "runs"
    run_id: str = ""
    token_budget: int = 0  # 0 disables the hard stop
    length_window: tuple[int, int] = (200, 520)
    source_corpus: str = ""  # documents feeding instruction/response modes
    instructions_corpus: str = ""  # instructions feeding response mode
    task_preset: str = "complex_questions"
    max_instructions_per_doc: int = 5

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = interpolate_env(dict(obj))
        provider = ProviderConfig.from_dict(obj.pop("provider", {}) or {})
        embedder_obj = obj.pop("embedder", None)
        embedder = ProviderConfig.from_dict(embedder_obj) if embedder_obj else None
        seed_obj = obj.pop("seed_source", {}) or {}
        seed_source = SeedSourceConfig(**seed_obj)
        engine_obj = obj.pop("engine", {}) or {}
        engine = EngineConfig(**engine_obj)
        window = obj.pop("length_window", None)
        allowed = set(cls.__dataclass_fields__)
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError([f"unknown config keys: {sorted(unknown)}"])
        config = cls(
            provider=provider, embedder=embedder, seed_source=seed_source, engine=engine, **obj
        )
        if window is not None:
            config.length_window = (int(window[0]), int(window[1]))
        return config

    def validate(self) -> list[str]:
        problems: list[str] = []
        if self.mode not in ALL_MODES:
            problems.append(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if self.docs_per_seed_set < 1:
            problems.append("docs_per_seed_set must be >= 1")
        problems.extend(self.provider.validate())
        if self.embedder is not None:
            problems.extend(self.embedder.validate())
        if self.seed_source.kind not in ("keywords", "documents"):
            problems.append(f"unknown seed_source kind {self.seed_source.kind!r}")
        if self.mode in ("instructions", "responses") and not self.source_corpus:
            problems.append(f"mode {self.mode} requires source_corpus")
        if self.mode == "responses" and not self.instructions_corpus:
            problems.append("mode responses requires instructions_corpus")
        if self.token_budget < 0:
            problems.append("token_budget must be >= 0")
        return problems

    def config_hash(self) -> str:
        """Digest of everything that shapes worker output. The output
        directory is excluded so re-running into a fresh directory keeps the
        same run id."""
        payload = {
            "domain": self.domain,
            "mode": self.mode,
            "workers": self.workers,
            "docs_per_seed_set": self.docs_per_seed_set,
            "provider": self.provider.__dict__,
            "embedder": self.embedder.__dict__ if self.embedder else None,
            "seed_source": self.seed_source.__dict__,
            "engine": {
                key: value
                for key, value in self.engine.__dict__.items()
            },
            "rng_seed": self.rng_seed,
            "token_budget": self.token_budget,
            "length_window": list(self.length_window),
            "source_corpus": self.source_corpus,
            "instructions_corpus": self.instructions_corpus,
            "task_preset": self.task_preset,
            "max_instructions_per_doc": self.max_instructions_per_doc,
        }

        return hashlib.sha256(
            json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        ).hexdigest()

    def resolved_run_id(self) -> str:
        return self.run_id or f"run-{self.config_hash()[:12]}"


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return RunConfig.from_dict(json.load(handle))


class TokenMeter:
    """Run-wide token counter with an optional hard budget stop."""

    def __init__(self, budget: int = 0) -> None:
        self.budget = budget
        self.input_tokens = 0
        self.output_tokens = 0
        self._lock = threading.Lock()

    def add(self, input_tokens: int, output_tokens: int) -> None:
        with self._lock:
            self.input_tokens += input_tokens
            self.output_tokens += output_tokens
            if self.budget and self.input_tokens + self.output_tokens > self.budget:
                raise TokenBudgetExceeded(
                    f"token budget {self.budget} exceeded "
                    f"({self.input_tokens + self.output_tokens} used)"
                )


class MeteredProvider(ChatProvider):
    def __init__(self, inner: ChatProvider, meter: TokenMeter) -> None:
        self._inner = inner
        self._meter = meter

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.complete(request)
        self._meter.add(*response.usage)
        return response


@dataclass
class WorkerReport:
    status: str = "pending"
    accepted: int = 0
    rejected: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    resumed: bool = False

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json_dict(cls, obj: dict) -> "WorkerReport":
        return cls(**obj)


@dataclass
class RunManifest:
    run_id: str
    mode: str
    config_hash: str
    workers: dict[str, WorkerReport] = field(default_factory=dict)
    wall_time_s: float = 0.0
    created_at: str = ""

    def totals(self) -> dict:
        return {
            "accepted": sum(w.accepted for w in self.workers.values()),
            "rejected": sum(w.rejected for w in self.workers.values()),
            "input_tokens": sum(w.input_tokens for w in self.workers.values()),
            "output_tokens": sum(w.output_tokens for w in self.workers.values()),
        }

    def all_completed(self) -> bool:
        return all(w.status == "completed" for w in self.workers.values())

    def to_json_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "mode": self.mode,
            "config_hash": self.config_hash,
            "created_at": self.created_at,
            "wall_time_s": self.wall_time_s,
            "workers": {
                key: report.to_json_dict() for key, report in sorted(self.workers.items())
            },
            "totals": self.totals(),
            "status": "complete" if self.all_completed() else "partial",
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RunManifest":
        try:
            manifest = cls(
                run_id=obj["run_id"],
                mode=obj["mode"],
                config_hash=obj["config_hash"],
                created_at=obj.get("created_at", ""),
                wall_time_s=float(obj.get("wall_time_s", 0.0)),
            )
            for key, entry in obj["workers"].items():
                manifest.workers[key] = WorkerReport.from_json_dict(entry)
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"corrupt manifest: {exc}") from exc
        return manifest


class ManifestWriter:
    """Single-writer manifest persistence; every update is an atomic
    temp-file replace so a crash never leaves a torn manifest."""

    def __init__(self, manifest: RunManifest, path: str) -> None:
        self.manifest = manifest
        self.path = path
        self._lock = threading.Lock()

    def update(self, worker_key: str, report: WorkerReport) -> None:
        with self._lock:
            self.manifest.workers[worker_key] = report
            self._write()

    def finish(self, wall_time_s: float) -> None:
        with self._lock:
            self.manifest.wall_time_s = wall_time_s
            self._write()

    def _write(self) -> None:
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump(self.manifest.to_json_dict(), handle, indent=2, ensure_ascii=False)
            handle.write("\n")
        os.replace(tmp, self.path)


def _worker_key(index: int) -> str:
    return f"{index:02d}"


def _worker_dir(run_dir: str, index: int) -> str:
    return os.path.join(run_dir, f"worker_{_worker_key(index)}")


def _worker_seed_state(config: RunConfig, index: int, provider: ChatProvider) -> SeedState:
    source = config.seed_source
    if source.kind == "keywords":
        if source.keywords:
            return SeedState(keywords=[kw.lower() for kw in source.keywords])
        from .seeds import random_keyword_seeds

        return SeedState(
            keywords=random_keyword_seeds(config.domain, source.count, provider)
        )
    pool = load_corpus(source.path, "document").records
    if not pool:
        raise ConfigError([f"seed document file {source.path} is empty"])
    take = max(1, source.per_worker)
    offset = (index * take) % len(pool)
    chosen = [pool[(offset + i) % len(pool)] for i in range(min(take, len(pool)))]
    return SeedState(keywords=[], seed_documents=chosen)


def _build_worker_provider(
    config: RunConfig, meter: TokenMeter, limiter: RateLimiter
) -> ChatProvider:
    """Each worker gets its own provider instance (scripted scripts are
    consumed independently) but the http rate limiter is shared run-wide."""
    if config.provider.kind == "http_api":
        inner = config.provider.build_chat(rate_limiter=limiter)
    else:
        inner = config.provider.build_chat()
    return MeteredProvider(inner, meter)


def _run_doc_worker(
    config: RunConfig, index: int, run_dir: str, meter: TokenMeter, limiter: RateLimiter
) -> WorkerReport:
    worker_dir = _worker_dir(run_dir, index)
    os.makedirs(worker_dir, exist_ok=True)
    provider = _build_worker_provider(config, meter, limiter)
    prefix = f"{config.resolved_run_id()}-w{_worker_key(index)}"
    report = WorkerReport()
    try:
        seeds = _worker_seed_state(config, index, provider)
        doc_config = DocRunConfig(
            n_documents=config.docs_per_seed_set,
            domain=config.domain,
            length_window=config.length_window,
            engine=config.engine,
            id_prefix=prefix,
        )
        result = synthesize_documents(seeds, doc_config, provider)
        report.status = result.status if result.status in WORKER_STATUSES else "incomplete"
        _write_documents(worker_dir, config, result.accepted, result.rejected)
        save_transcript(result.transcript, os.path.join(worker_dir, "transcript.jsonl"))
        report.accepted = len(result.accepted)
        report.rejected = len(result.rejected)
        report.input_tokens = result.input_tokens
        report.output_tokens = result.output_tokens
    except TokenBudgetExceeded:
        logger.warning("worker %s stopped: token budget exhausted", _worker_key(index))
        report.status = "incomplete"
    return report


def _write_documents(
    worker_dir: str, config: RunConfig, accepted: list[Document], rejected: list[Document]
) -> None:
    config_hash = config.config_hash()
    accepted_path = os.path.join(worker_dir, "accepted.jsonl")
    with CorpusSink(
        accepted_path, "document", length_window=config.length_window, truncate=True
    ) as sink:
        for doc in accepted:
            sink.append(doc)
    write_corpus_meta(accepted_path, config.domain, config_hash)
    rejected_path = os.path.join(worker_dir, "rejected.jsonl")
    with CorpusSink(rejected_path, "document", length_window=None, truncate=True) as sink:
        for doc in rejected:
            sink.append(doc)
    write_corpus_meta(rejected_path, config.domain, config_hash)


def _run_template_worker(
    config: RunConfig, index: int, run_dir: str, meter: TokenMeter, limiter: RateLimiter
) -> WorkerReport:
    worker_dir = _worker_dir(run_dir, index)
    os.makedirs(worker_dir, exist_ok=True)
    provider = _build_worker_provider(config, meter, limiter)
    report = WorkerReport()
    try:
        seeds = _worker_seed_state(config, index, provider)
        if not seeds.seed_documents or len(seeds.seed_documents) != 5:
            raise ConfigError(
                ["template mode needs seed_source kind=documents with per_worker=5"]
            )
        docs = template_generate(
            seeds.seed_documents,
            config.docs_per_seed_set,
            provider,
            domain=config.domain,
            id_prefix=f"{config.resolved_run_id()}-w{_worker_key(index)}",
        )
        _write_documents(worker_dir, config, docs, [])
        report.status = "completed"
        report.accepted = len(docs)
    except TokenBudgetExceeded:
        report.status = "incomplete"
    return report


def _instruction_engine(config: RunConfig) -> EngineConfig:
    """Question-oriented engine defaults when the run config left the
    document-mode ones in place."""
    engine = config.engine
    if engine.answer_tag == "questions":
        return engine
    from dataclasses import replace

    return replace(
        engine,
        answer_tag="questions",
        round_limit=128 if engine.round_limit == 256 else engine.round_limit,
    )


def _run_instruction_worker(
    config: RunConfig, index: int, run_dir: str, meter: TokenMeter, limiter: RateLimiter
) -> WorkerReport:
    worker_dir = _worker_dir(run_dir, index)
    os.makedirs(worker_dir, exist_ok=True)
    provider = _build_worker_provider(config, meter, limiter)
    docs = load_corpus(config.source_corpus, "document").records
    stripe = docs[index :: config.workers]
    report = WorkerReport(status="completed")
    path = os.path.join(worker_dir, "instructions.jsonl")
    try:
        with CorpusSink(path, "instruction", length_window=None, truncate=True) as sink:
            for doc_index, doc in enumerate(stripe):
                instruct_config = InstructRunConfig(
                    task_description=prompts.load_preset(config.task_preset),
                    engine=_instruction_engine(config),
                    max_instructions_per_doc=config.max_instructions_per_doc,
                    id_prefix=(
                        f"{config.resolved_run_id()}-w{_worker_key(index)}-d{doc_index:03d}"
                    ),
                )
                result = synthesize_instructions(doc, instruct_config, provider)
                for instruction in result.instructions:
                    sink.append(instruction)
                report.accepted += len(result.instructions)
                report.rejected += len(result.filtered)
                report.input_tokens += result.input_tokens
                report.output_tokens += result.output_tokens
                if result.status != COMPLETED:
                    report.status = (
                        result.status if result.status in WORKER_STATUSES else "incomplete"
                    )
    except TokenBudgetExceeded:
        report.status = "incomplete"
    return report


def _run_response_worker(
    config: RunConfig, index: int, run_dir: str, meter: TokenMeter, limiter: RateLimiter
) -> WorkerReport:
    worker_dir = _worker_dir(run_dir, index)
    os.makedirs(worker_dir, exist_ok=True)
    provider = _build_worker_provider(config, meter, limiter)
    docs = {doc.id: doc for doc in load_corpus(config.source_corpus, "document").records}
    instructions = load_corpus(config.instructions_corpus, "instruction").records
    by_parent: dict[str, list] = {}
    for instruction in instructions:
        by_parent.setdefault(instruction.parent_document_id, []).append(instruction)
    parents = sorted(by_parent)
    stripe = parents[index :: config.workers]
    report = WorkerReport(status="completed")
    path = os.path.join(worker_dir, "responses.jsonl")
    try:
        with CorpusSink(path, "response", length_window=None, truncate=True) as sink:
            for parent_id in stripe:
                parent = docs.get(parent_id)
                if parent is None:
                    logger.warning("instructions reference missing document %s", parent_id)
                    report.rejected += len(by_parent[parent_id])
                    continue
                records = synthesize_responses(
                    parent,
                    by_parent[parent_id],
                    provider,
                    rng_seed=config.rng_seed + index,
                )
                for record in records:
                    sink.append(record)
                report.accepted += len(records)
    except TokenBudgetExceeded:
        report.status = "incomplete"
    return report


_WORKER_FUNCTIONS = {
    "metasynth_docs": _run_doc_worker,
    "template_docs": _run_template_worker,
    "instructions": _run_instruction_worker,
    "responses": _run_response_worker,
}


def _check_provider_auth(config: RunConfig) -> None:
    for provider_config in (config.provider, config.embedder):
        if provider_config is None or provider_config.kind != "http_api":
            continue
        if not os.environ.get(provider_config.credentials_env_var, ""):
            raise AuthenticationError(
                f"credentials env var {provider_config.credentials_env_var!r} "
                "is not set"
            )


def run(config: RunConfig) -> RunManifest:
    """Execute a synthesis run: validate, fan out workers, write the
    manifest. Partial progress lands on disk as workers finish."""
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    if config.mode not in SYNTHESIS_MODES:
        raise ConfigError(
            [f"mode {config.mode!r} is not a worker-pool mode; use the CLI subcommand"]
        )
    _check_provider_auth(config)
    run_dir = os.path.join(config.output_dir, config.resolved_run_id())
    os.makedirs(run_dir, exist_ok=True)
    manifest = RunManifest(
        run_id=config.resolved_run_id(),
        mode=config.mode,
        config_hash=config.config_hash(),
        created_at=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    )
    for index in range(config.workers):
        manifest.workers[_worker_key(index)] = WorkerReport()
    writer = ManifestWriter(manifest, os.path.join(run_dir, "manifest.json"))
    writer.finish(0.0)
    return _execute(config, run_dir, writer, range(config.workers), resumed=False)


def _execute(
    config: RunConfig,
    run_dir: str,
    writer: ManifestWriter,
    worker_indices,
    resumed: bool,
) -> RunManifest:
    started = time.monotonic()
    meter = TokenMeter(config.token_budget)
    worker_fn = _WORKER_FUNCTIONS[config.mode]
    # one shared limiter keeps the whole run inside the provider's rate cap
    shared_limiter = RateLimiter(config.provider.requests_per_minute)

    def execute(index: int) -> None:
        report = worker_fn(config, index, run_dir, meter, shared_limiter)
        report.resumed = resumed
        writer.update(_worker_key(index), report)

    indices = list(worker_indices)
    max_workers = max(1, min(config.workers, len(indices) or 1))
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(execute, index) for index in indices]
        for future in futures:
            future.result()
    writer.finish(time.monotonic() - started)
    return writer.manifest


def resume(run_dir: str, config: RunConfig) -> RunManifest:
    """Restart only the workers that never completed; completed worker
    output is left untouched."""
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ManifestError(f"no manifest in {run_dir}")
    with open(manifest_path, "r", encoding="utf-8") as handle:
        manifest = RunManifest.from_json_dict(json.load(handle))
    writer = ManifestWriter(manifest, manifest_path)
    pending = [
        int(key) for key, report in manifest.workers.items() if report.status != "completed"
    ]
    if not pending:
        logger.info("all workers already complete; nothing to resume")
        return manifest
    return _execute(config, run_dir, writer, pending, resumed=True)
