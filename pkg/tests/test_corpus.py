import json
import random
import threading

import pytest

from metasynth.corpus import (
    CorpusFormatError,
    CorpusSink,
    Document,
    Instruction,
    RecordValidationError,
    ResponseRecord,
    count_words,
    load_corpus,
    parse_record,
    read_corpus_meta,
    serialize_record,
    validate_length,
    validate_record,
    write_corpus_meta,
)


def make_doc(i=1, words=250, **kwargs):
    text = " ".join(f"w{k}" for k in range(words))
    return Document.make(id=f"d{i}", text=text, source="metasynth", domain="finance", **kwargs)


# --- round trips -------------------------------------------------------------


def test_document_round_trip():
    doc = make_doc(summary="L1\nL2\nL3", category="fintech", seed_snapshot=["a", "b"])
    assert parse_record(serialize_record(doc), "document") == doc


def test_instruction_round_trip():
    inst = Instruction.make(
        id="i1",
        text="What happens when rates rise?",
        parent_document_id="d1",
        evolution_trace=[("Complexity Expert", "suggested"), ("Question Editor Expert", "rewrote")],
    )
    assert parse_record(serialize_record(inst), "instruction") == inst


def test_response_round_trip():
    rec = ResponseRecord(
        instruction_id="i1", prompt_format="constrained_cot", word_limit=150, response_text="..."
    )
    assert parse_record(serialize_record(rec), "response") == rec


def test_rejected_document_keeps_feedback():
    doc = make_doc(words=10, rejection_reason="too similar to document 1")
    parsed = parse_record(serialize_record(doc), "document")
    assert parsed.rejection_reason == "too similar to document 1"


def test_accepted_wire_format_has_exact_fields():
    obj = json.loads(serialize_record(make_doc()))
    assert set(obj) == {
        "id", "text", "word_count", "source", "domain",
        "seed_snapshot", "summary", "category", "created_round",
    }


# --- load_corpus -------------------------------------------------------------


def test_load_three_documents_order_preserved(tmp_path):
    path = tmp_path / "c.jsonl"
    docs = [make_doc(i) for i in range(3)]
    path.write_text("".join(serialize_record(d) + "\n" for d in docs), encoding="utf-8")
    corpus = load_corpus(str(path), "document")
    assert [d.id for d in corpus.records] == ["d0", "d1", "d2"]
    assert corpus.errors == []


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    corpus = load_corpus(str(path), "document")
    assert len(corpus) == 0 and corpus.errors == []


def test_load_truncated_line_reports_line_number(tmp_path):
    path = tmp_path / "c.jsonl"
    good = serialize_record(make_doc())
    path.write_text(good + "\n" + good[: len(good) // 2] + "\n", encoding="utf-8")
    corpus = load_corpus(str(path), "document", strict=False)
    assert len(corpus) == 1
    assert len(corpus.errors) == 1
    assert "line 2" in corpus.errors[0]


def test_load_strict_raises(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        load_corpus(str(path), "document", strict=True)


def test_load_missing_file():
    with pytest.raises(FileNotFoundError):
        load_corpus("/nonexistent/abc.jsonl")


def test_duplicate_id_reported(tmp_path):
    path = tmp_path / "c.jsonl"
    doc = make_doc()
    path.write_text(serialize_record(doc) + "\n" + serialize_record(doc) + "\n", encoding="utf-8")
    corpus = load_corpus(str(path), "document")
    assert len(corpus) == 1
    assert "duplicate id" in corpus.errors[0]


# --- append ------------------------------------------------------------------


def test_append_round_trip(tmp_path):
    path = tmp_path / "c.jsonl"
    doc = make_doc()
    with CorpusSink(str(path), "document") as sink:
        sink.append(doc)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1
    assert parse_record(lines[0], "document") == doc


def test_append_rejects_word_count_mismatch(tmp_path):
    doc = make_doc()
    doc.word_count += 1
    with CorpusSink(str(tmp_path / "c.jsonl"), "document") as sink:
        with pytest.raises(RecordValidationError):
            sink.append(doc)


def test_append_rejects_out_of_window(tmp_path):
    with CorpusSink(str(tmp_path / "c.jsonl"), "document") as sink:
        with pytest.raises(RecordValidationError):
            sink.append(make_doc(words=10))


def test_window_disabled_sink_accepts_short_drafts(tmp_path):
    with CorpusSink(str(tmp_path / "rej.jsonl"), "document", length_window=None) as sink:
        sink.append(make_doc(words=10))


def test_append_rejects_duplicate_id(tmp_path):
    with CorpusSink(str(tmp_path / "c.jsonl"), "document") as sink:
        sink.append(make_doc(1))
        with pytest.raises(RecordValidationError):
            sink.append(make_doc(1))


def test_concurrent_appenders_never_interleave(tmp_path):
    path = tmp_path / "c.jsonl"
    sink = CorpusSink(str(path), "document")
    writers, per_writer = 64, 5

    def work(w):
        for j in range(per_writer):
            sink.append(make_doc(f"{w}-{j}"))

    threads = [threading.Thread(target=work, args=(w,)) for w in range(writers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    sink.close()
    corpus = load_corpus(str(path), "document")
    assert corpus.errors == []
    assert len(corpus) == writers * per_writer
    ids = {d.id for d in corpus.records}
    assert len(ids) == writers * per_writer


# --- validate_length and word counting ----------------------------------------


def test_validate_length_at_target():
    text = " ".join(["word"] * 400)
    check = validate_length(text, 400, (200, 520))
    assert check.ok and check.count == 400


def test_validate_length_empty():
    check = validate_length("", 400, (200, 520))
    assert not check.ok and check.count == 0


def test_validate_length_521_words():
    text = " ".join(f"t{i}" for i in range(521))
    assert len(text.split()) == 521
    check = validate_length(text, 400, (200, 520))
    assert not check.ok and check.count == 521


def test_validate_length_bad_target():
    with pytest.raises(ValueError):
        validate_length("x", 600, (200, 520))


def _reference_word_count(text):
    # independent scanner: count maximal runs of non-whitespace characters
    count, in_token = 0, False
    for ch in text:
        if ch.isspace():
            in_token = False
        elif not in_token:
            in_token = True
            count += 1
    return count


def test_word_count_fuzz_against_reference_scanner():
    rng = random.Random(20240811)
    alphabet = "abcXYZ019 \t\n\r  　,.;:!?'\"-_()[]éü中文\U0001f600"
    for _ in range(1000):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 120)))
        assert count_words(text) == _reference_word_count(text)


def test_validate_record_response_word_limit_rules():
    ok = ResponseRecord("i", "constrained_cot", 200, "x")
    assert validate_record(ok) == []
    bad = ResponseRecord("i", "constrained_cot", 201, "x")
    assert validate_record(bad)
    missing = ResponseRecord("i", "constrained_cot", None, "x")
    assert validate_record(missing)
    extraneous = ResponseRecord("i", "free_form", 100, "x")
    assert validate_record(extraneous)


def test_instruction_slack_window():
    text_ok = " ".join(["w"] * 120)
    text_bad = " ".join(["w"] * 121)
    ok = Instruction.make(id="i", text=text_ok, parent_document_id="d")
    bad = Instruction.make(id="i", text=text_bad, parent_document_id="d")
    assert validate_record(ok) == []
    assert validate_record(bad)


# --- sidecar metadata ---------------------------------------------------------


def test_corpus_meta_sidecar(tmp_path):
    corpus_path = str(tmp_path / "accepted.jsonl")
    with CorpusSink(corpus_path, "document") as sink:
        sink.append(make_doc())
    write_corpus_meta(corpus_path, "finance", "abc123")
    meta = read_corpus_meta(corpus_path)
    assert meta["domain"] == "finance"
    assert meta["config_hash"] == "abc123"
    assert "created_at" in meta
