import random
import re

import pytest

from metasynth.corpus import Document
from metasynth.engine import EngineConfig
from metasynth.gateway import ScriptedChatProvider
from metasynth.instructions import (
    InstructRunConfig,
    JudgeParseError,
    aggregate_winrates,
    banned_phrase_violation,
    build_response_prompts,
    judge,
    judge_pair_with_swap,
    parse_persona_list,
    parse_questions,
    synthesize_instructions,
    synthesize_responses,
)
from workflows import doc_text, instruction_evolution_script


def source_doc():
    return Document.make(
        id="src1", text=doc_text("agriculture-health", 240), source="metasynth",
        domain="biomedicine",
    )


def instruct_config(**kwargs):
    defaults = dict(engine=EngineConfig(round_limit=128, answer_tag="questions"))
    defaults.update(kwargs)
    return InstructRunConfig(**defaults)


def make_instructions(texts):
    return [
        (lambda t, i: __import__("metasynth").corpus.Instruction.make(
            id=f"i{i}", text=t, parent_document_id="src1"))(t, i)
        for i, t in enumerate(texts)
    ]


# --- parse_questions ------------------------------------------------------------


def test_parse_two_questions_in_order():
    text = "<questions><question>First?</question><question>Second?</question></questions>"
    assert parse_questions(text) == ["First?", "Second?"]


def test_parse_empty_block():
    assert parse_questions("<questions></questions>") == []


def test_parse_skips_unclosed_tail():
    text = "<question>ok?</question><question>never closed"
    assert parse_questions(text) == ["ok?"]


def test_parse_matches_regex_oracle_on_fuzz():
    rng = random.Random(31)
    pieces = [
        "<question>", "</question>", "<questions>", "</questions>",
        "text", "?", " ", "<", ">", "nested <question>", "\n",
    ]
    oracle = re.compile(r"<question>(.*?)</question>", re.DOTALL)
    for _ in range(500):
        blob = "".join(rng.choice(pieces) for _ in range(rng.randrange(0, 40)))
        expected = [m.strip() for m in oracle.findall(blob)]
        assert parse_questions(blob) == expected


# --- banned phrases and persona parsing --------------------------------------------


def test_banned_phrase_detection():
    assert banned_phrase_violation("According to the document, what is X?")
    assert banned_phrase_violation("Something based on the document here")
    assert banned_phrase_violation("As a nurse, what would you do?")
    assert banned_phrase_violation("What drives gut microbiome diversity?") is None
    # mid-sentence "as a" is ordinary language, not a persona leak
    assert banned_phrase_violation("Is this framed as a tradeoff?") is None


def test_parse_persona_list_bullets_and_commas():
    bullets = "- sustainability advocates\n- public health professionals"
    assert parse_persona_list(bullets) == [
        "sustainability advocates", "public health professionals",
    ]
    commas = "Interested readers: farmers, ecologists"
    assert parse_persona_list(commas) == ["farmers", "ecologists"]


# --- scripted synthesis ---------------------------------------------------------------


def test_evolution_replay_produces_traced_instruction():
    script, final_question = instruction_evolution_script()
    provider = ScriptedChatProvider(script)
    result = synthesize_instructions(source_doc(), instruct_config(), provider)
    assert result.status == "completed"
    assert len(result.instructions) == 1
    instruction = result.instructions[0]
    assert instruction.text == final_question
    assert instruction.parent_document_id == "src1"
    trace_names = [name for name, _action in instruction.evolution_trace]
    assert "Complexity Expert" in trace_names
    assert "Question Editor Expert" in trace_names
    # the evaluation rejection that triggered the evolution is recorded
    actions = dict(instruction.evolution_trace)
    assert "rejected" in actions["Evaluation Expert"] or any(
        "rejected" in action for _name, action in instruction.evolution_trace
    )


def test_banned_phrase_filtered_with_reason():
    question = "According to the document, what are the risks?"
    script = [f"<questions><question>{question}</question></questions>", "<END>"]
    provider = ScriptedChatProvider(script)
    result = synthesize_instructions(source_doc(), instruct_config(), provider)
    assert result.instructions == []
    assert len(result.filtered) == 1
    text, reason = result.filtered[0]
    assert text == question and "banned" in reason


def test_three_question_block_yields_three_instructions():
    questions = [f"Question number {i}, requiring thought?" for i in range(3)]
    block = "".join(f"<question>{q}</question>" for q in questions)
    script = [f"<questions>{block}</questions>", "<END>"]
    provider = ScriptedChatProvider(script)
    result = synthesize_instructions(source_doc(), instruct_config(), provider)
    assert [i.text for i in result.instructions] == questions
    assert all(i.word_count <= 120 for i in result.instructions)


def test_overlong_question_filtered():
    long_question = " ".join(["word"] * 130)
    script = [f"<questions><question>{long_question}</question></questions>", "<END>"]
    provider = ScriptedChatProvider(script)
    result = synthesize_instructions(source_doc(), instruct_config(), provider)
    assert result.instructions == []
    assert "exceeds cap" in result.filtered[0][1]


def test_persona_name_leak_filtered():
    script = [
        'Persona Suggestion Expert: """Suggest readers."""',
        "- sustainability advocates",
        "<questions><question>What would sustainability advocates ask here?</question>"
        "</questions>",
        "<END>",
    ]
    provider = ScriptedChatProvider(script)
    result = synthesize_instructions(source_doc(), instruct_config(), provider)
    assert result.instructions == []
    assert "persona name" in result.filtered[0][1]


def test_per_document_cap():
    questions = "".join(
        f"<question>Question {i} with enough substance?</question>" for i in range(8)
    )
    script = [f"<questions>{questions}</questions>", "<END>"]
    provider = ScriptedChatProvider(script)
    config = instruct_config(max_instructions_per_doc=5)
    result = synthesize_instructions(source_doc(), config, provider)
    assert len(result.instructions) == 5
    assert any("cap" in reason for _text, reason in result.filtered)


# --- build_response_prompts --------------------------------------------------------


def instructions_of(n):
    from metasynth.corpus import Instruction

    return [
        Instruction.make(
            id=f"i{k}", text=f"Instruction {k}: analyze scenario {k}?",
            parent_document_id="src1",
        )
        for k in range(n)
    ]


def test_single_instruction_single_prompt():
    context = source_doc()
    prompts_out = build_response_prompts(context, instructions_of(1), rng_seed=7)
    assert len(prompts_out) == 1
    rp = prompts_out[0]
    assert context.text in rp.prompt
    assert "Instruction 0" in rp.prompt
    assert rp.prompt_format in ("free_form", "cot", "constrained_cot")


def test_constrained_cot_limits_are_valid_multiples():
    context = source_doc()
    seen_limits = set()
    for seed in range(400):
        for rp in build_response_prompts(context, instructions_of(3), rng_seed=seed):
            if rp.prompt_format == "constrained_cot":
                assert rp.word_limit is not None
                assert rp.word_limit % 50 == 0
                assert 50 <= rp.word_limit <= 500
                assert str(rp.word_limit) in rp.prompt
                seen_limits.add(rp.word_limit)
            else:
                assert rp.word_limit is None
    assert len(seen_limits) > 3  # the sampler actually spans the range


def test_every_instruction_covered_across_seeds():
    context = source_doc()
    instructions = instructions_of(10)
    for seed in range(100):
        prompts_out = build_response_prompts(context, instructions, rng_seed=seed)
        covered = {rp.instruction_id for rp in prompts_out}
        assert covered == {f"i{k}" for k in range(10)}


def test_prompt_building_is_pure():
    context = source_doc()
    instructions = instructions_of(5)
    first = build_response_prompts(context, instructions, rng_seed=11)
    second = build_response_prompts(context, instructions, rng_seed=11)
    assert first == second


def test_empty_instructions_rejected():
    with pytest.raises(ValueError):
        build_response_prompts(source_doc(), [], rng_seed=0)


def test_synthesize_responses_records():
    instructions = instructions_of(2)
    provider = ScriptedChatProvider(["answer one", "answer two"])
    records = synthesize_responses(source_doc(), instructions, provider, rng_seed=3)
    assert len(records) == 2
    assert {r.instruction_id for r in records} == {"i0", "i1"}
    for record in records:
        if record.prompt_format == "constrained_cot":
            assert record.word_limit in range(50, 501, 50)
        else:
            assert record.word_limit is None


# --- judges -------------------------------------------------------------------------


def judge_inputs():
    return {"context": "ctx", "instruction": "instr", "response": "resp"}


def test_accuracy_judge_strict_one():
    provider = ScriptedChatProvider(["1"])
    verdict = judge("accuracy", judge_inputs(), provider)
    assert verdict.kind == "accuracy" and verdict.value == "1"


def test_accuracy_judge_reasks_on_prose():
    provider = ScriptedChatProvider(["The answer is correct: 1", "1"])
    verdict = judge("accuracy", judge_inputs(), provider)
    assert verdict.value == "1"
    assert provider.remaining == 0


def test_accuracy_judge_fails_after_reask():
    provider = ScriptedChatProvider(["The answer is correct: 1", "definitely 1"])
    with pytest.raises(JudgeParseError):
        judge("accuracy", judge_inputs(), provider)


def test_relevance_judge_zero():
    provider = ScriptedChatProvider(["0"])
    assert judge("relevance", judge_inputs(), provider).value == "0"


def test_category_judge_membership():
    provider = ScriptedChatProvider(["sentiment analysis"])
    verdict = judge(
        "category",
        {"instruction": "instr", "response": "resp"},
        provider,
        categories=["question answering", "sentiment analysis"],
    )
    assert verdict.value == "sentiment analysis"


def test_category_judge_rejects_nonmember():
    provider = ScriptedChatProvider(["alchemy", "alchemy"])
    with pytest.raises(JudgeParseError):
        judge(
            "category",
            {"instruction": "i", "response": "r"},
            provider,
            categories=["question answering"],
        )


def test_judge_runs_at_temperature_zero():
    provider = ScriptedChatProvider(["1"])
    judge("accuracy", judge_inputs(), provider)
    # temperature is part of the request, not the rendered prompt; check via a
    # wrapper provider instead
    class Capture:
        def __init__(self):
            self.temps = []

        def complete(self, request):
            self.temps.append(request.temperature)
            from metasynth.gateway import ChatResponse

            return ChatResponse(content="1")

    capture = Capture()
    judge("accuracy", judge_inputs(), capture)
    assert capture.temps == [0.0]


def test_winrate_judge_strict_format():
    provider = ScriptedChatProvider(["[[A]]"])
    verdict = judge(
        "winrate", {"question": "q", "answer_a": "a", "answer_b": "b"}, provider
    )
    assert verdict.value == "A"


def test_pair_swap_consistent_win():
    # first call says A; swapped call says B, which maps back to the same winner
    provider = ScriptedChatProvider(["[[A]]", "[[B]]"])
    assert judge_pair_with_swap("q", "ans1", "ans2", provider) == "A"


def test_pair_swap_inconsistent_is_tie():
    # both calls prefer the first-listed answer: position bias, scored as tie
    provider = ScriptedChatProvider(["[[A]]", "[[A]]"])
    assert judge_pair_with_swap("q", "ans1", "ans2", provider) == "tie"


def test_pair_swap_double_tie():
    provider = ScriptedChatProvider(["[[C]]", "[[C]]"])
    assert judge_pair_with_swap("q", "ans1", "ans2", provider) == "tie"


def test_winrate_aggregation_counts():
    verdicts = ["A"] * 40 + ["B"] * 35 + ["tie"] * 25
    report = aggregate_winrates(verdicts)
    assert report == {"A": 0.40, "B": 0.35, "tie": 0.25}


def test_winrate_fractions_sum_exactly_one():
    rng = random.Random(2)
    for _ in range(50):
        n = rng.randrange(1, 60)
        verdicts = [rng.choice(["A", "B", "tie"]) for _ in range(n)]
        report = aggregate_winrates(verdicts)
        assert report["A"] + report["B"] + report["tie"] == 1.0


def test_judgements_jsonl_round_trip(tmp_path):
    import json

    from metasynth.instructions import JudgeVerdict, write_judgements

    verdicts = [JudgeVerdict("accuracy", "1"), JudgeVerdict("winrate", "A")]
    path = str(tmp_path / "judgements.jsonl")
    write_judgements(verdicts, path)
    lines = [json.loads(line) for line in open(path, encoding="utf-8")]
    assert lines == [{"kind": "accuracy", "value": "1"}, {"kind": "winrate", "value": "A"}]
