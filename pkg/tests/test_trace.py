from __future__ import annotations

import json
import random

import pytest

from eatstop.trace import (
    DecodingConfig,
    LineRecord,
    ReasoningTrace,
    RolloutRecord,
    TraceDataError,
    TraceFormatError,
    TraceInvariantError,
    TraceSchemaError,
    cumulative_tokens,
    dump_traces_jsonl,
    load_traces,
    parse_trace,
    parse_traces_jsonl,
    pass1_at,
    serialize_trace,
    trace_to_obj,
    truncate_trace,
)


def make_trace(
    token_counts=(12, 40, 9),
    *,
    probes=None,
    rollouts=None,
    pass1=None,
    ended=False,
    qid="q-1",
):
    lines = []
    for i, tc in enumerate(token_counts):
        lines.append(
            LineRecord(
                index=i,
                text=f"step {i}.\n\n",
                token_count=tc,
                probes=probes[i] if probes else {("probe-m", "eat"): 1.5 - 0.1 * i},
                rollouts=rollouts[i] if rollouts else None,
                pass1=pass1[i] if pass1 else None,
            )
        )
    return ReasoningTrace(
        schema_version=1,
        question_id=qid,
        dataset="unit",
        question="What is 6 times 7?",
        reasoning_model_id="reasoner-8b",
        decoding=DecodingConfig(temperature=0.6, top_p=0.95),
        lines=tuple(lines),
        ended_with_end_think=ended,
        meta={"producer": "unit-test"},
    )


# -- round trips -----------------------------------------------------------


def test_round_trip_equality():
    t = make_trace(ended=True)
    assert parse_trace(serialize_trace(t)) == t


def test_round_trip_with_rollouts_and_pass1():
    rollouts = [
        (
            RolloutRecord("\\boxed{42}", "42", True, token_count=7),
            RolloutRecord("\\boxed{41}", "41", False, token_count=9),
        )
    ] * 3
    t = make_trace(rollouts=rollouts, pass1=[0.5, 0.5, 0.5])
    back = parse_trace(serialize_trace(t))
    assert back == t
    assert back.lines[0].rollouts[0].token_count == 7


def test_serialization_is_byte_stable():
    t = make_trace()
    one = serialize_trace(t)
    two = serialize_trace(parse_trace(one))
    assert one == two


def test_serialization_canonicalizes_key_order():
    t = make_trace()
    obj = trace_to_obj(t)
    scrambled = json.dumps(obj, sort_keys=True)  # different key order
    assert serialize_trace(parse_trace(scrambled)) == serialize_trace(t)


def test_probe_keys_sorted_in_output():
    probes = [{("zeta", "eat"): 1.0, ("alpha", "eat"): 2.0, ("alpha", "aat"): 3.0}] * 2
    t = make_trace(token_counts=(5, 5), probes=probes)
    raw = serialize_trace(t)
    assert raw.index('"alpha"') < raw.index('"zeta"')
    back = parse_trace(raw)
    assert back.lines[0].probes[("alpha", "eat")] == 2.0


def test_float_precision_survives_round_trip():
    value = 1.2345678901234567
    probes = [{("m", "eat"): value}]
    t = make_trace(token_counts=(3,), probes=probes)
    back = parse_trace(serialize_trace(t))
    assert back.lines[0].probes[("m", "eat")] == value  # bit-exact


def test_unknown_top_level_field_preserved_in_meta():
    obj = trace_to_obj(make_trace())
    obj["custom_field"] = {"a": 1}
    back = parse_trace(json.dumps(obj))
    assert back.meta["custom_field"] == json.dumps({"a": 1}, sort_keys=True)
    again = parse_trace(serialize_trace(back))
    assert again.meta["custom_field"] == back.meta["custom_field"]


# -- validation ------------------------------------------------------------


def test_malformed_json_is_format_error():
    with pytest.raises(TraceFormatError) as err:
        parse_trace("{not json")
    assert "JSON" in str(err.value)


def test_missing_field_names_the_field():
    obj = trace_to_obj(make_trace())
    del obj["question_id"]
    with pytest.raises(TraceSchemaError) as err:
        parse_trace(json.dumps(obj))
    assert "question_id" in str(err.value)


def test_wrong_type_names_the_path():
    obj = trace_to_obj(make_trace())
    obj["lines"][1]["token_count"] = "twelve"
    with pytest.raises(TraceSchemaError) as err:
        parse_trace(json.dumps(obj))
    assert "lines[1].token_count" in str(err.value)


def test_zero_token_count_rejected_naming_line():
    obj = trace_to_obj(make_trace())
    obj["lines"][1]["token_count"] = 0
    with pytest.raises(TraceInvariantError) as err:
        parse_trace(json.dumps(obj))
    assert "line 1" in str(err.value)
    assert "token_count" in str(err.value)


def test_noncontiguous_line_indices_rejected():
    obj = trace_to_obj(make_trace())
    obj["lines"][2]["index"] = 5
    with pytest.raises(TraceInvariantError):
        parse_trace(json.dumps(obj))


def test_pass1_rollout_disagreement_rejected():
    obj = trace_to_obj(make_trace())
    obj["lines"][0]["rollouts"] = [
        {"answer_text": "\\boxed{42}", "extracted_answer": "42", "correct": True},
        {"answer_text": "\\boxed{41}", "extracted_answer": "41", "correct": False},
    ]
    obj["lines"][0]["pass1"] = 0.9
    with pytest.raises(TraceInvariantError) as err:
        parse_trace(json.dumps(obj))
    assert "pass1" in str(err.value)


def test_negative_probe_rejected():
    obj = trace_to_obj(make_trace())
    obj["lines"][0]["probes"] = {"m": {"eat": -0.5}}
    with pytest.raises(TraceInvariantError):
        parse_trace(json.dumps(obj))


def test_unsupported_schema_version_rejected():
    obj = trace_to_obj(make_trace())
    obj["schema_version"] = 2
    with pytest.raises(TraceSchemaError) as err:
        parse_trace(json.dumps(obj))
    assert "schema_version" in str(err.value)


def test_bool_is_not_an_int():
    obj = trace_to_obj(make_trace())
    obj["lines"][0]["token_count"] = True
    with pytest.raises(TraceSchemaError):
        parse_trace(json.dumps(obj))


def test_empty_lines_rejected():
    obj = trace_to_obj(make_trace())
    obj["lines"] = []
    with pytest.raises(TraceInvariantError):
        parse_trace(json.dumps(obj))


def test_pass1_out_of_range_rejected():
    obj = trace_to_obj(make_trace())
    obj["lines"][0]["pass1"] = 1.5
    with pytest.raises(TraceInvariantError):
        parse_trace(json.dumps(obj))


# -- derived quantities ------------------------------------------------------


def test_cumulative_tokens_worked_example():
    t = make_trace((12, 40, 9))
    assert cumulative_tokens(t, 0) == 12
    assert cumulative_tokens(t, 1) == 52
    assert cumulative_tokens(t, 2) == 61


def test_cumulative_tokens_out_of_range():
    t = make_trace()
    with pytest.raises(IndexError):
        cumulative_tokens(t, 3)
    with pytest.raises(IndexError):
        cumulative_tokens(t, -1)


def test_cumulative_tokens_random_against_fold():
    rng = random.Random(77)
    counts = tuple(rng.randint(1, 50) for _ in range(30))
    t = make_trace(counts, probes=[{}] * 30)
    running = 0
    for i, c in enumerate(counts):
        running += c
        assert cumulative_tokens(t, i) == running


def test_pass1_at_prefers_stored_value():
    t = make_trace(pass1=[0.25, 0.5, 0.75])
    assert pass1_at(t, 2) == 0.75


def test_pass1_at_falls_back_to_rollout_fraction():
    pool = tuple(
        RolloutRecord("\\boxed{42}", "42", i < 6, token_count=5) for i in range(8)
    )
    t = make_trace(token_counts=(4,), rollouts=[pool])
    assert pass1_at(t, 0) == pytest.approx(0.75)


def test_pass1_at_missing_both_is_data_error():
    t = make_trace()
    with pytest.raises(TraceDataError) as err:
        pass1_at(t, 1)
    assert "line 1" in str(err.value)


def test_truncate_trace_drops_end_flag_unless_last_line():
    t = make_trace(ended=True)
    head = truncate_trace(t, 1)
    assert len(head.lines) == 2
    assert head.ended_with_end_think is False
    full = truncate_trace(t, 2)
    assert full.ended_with_end_think is True
    assert parse_trace(serialize_trace(head)) == head


# -- corpus files --------------------------------------------------------------


def test_jsonl_corpus_round_trip(tmp_path):
    traces = [make_trace(qid=f"q-{i}") for i in range(3)]
    path = tmp_path / "corpus.jsonl"
    path.write_text(dump_traces_jsonl(traces), encoding="utf-8")
    assert load_traces(str(path)) == traces


def test_corpus_accepts_single_object_and_array():
    t = make_trace()
    single = serialize_trace(t)
    assert parse_traces_jsonl(single) == [t]
    array = json.dumps([trace_to_obj(t), trace_to_obj(make_trace(qid="q-2"))])
    assert [x.question_id for x in parse_traces_jsonl(array)] == ["q-1", "q-2"]


def test_corpus_skips_blank_lines():
    t = make_trace()
    data = "\n" + serialize_trace(t) + "\n\n"
    assert parse_traces_jsonl(data) == [t]


def test_corpus_error_names_line_number():
    t = make_trace()
    data = serialize_trace(t) + "\n{broken\n"
    with pytest.raises(TraceFormatError) as err:
        parse_traces_jsonl(data, "corpus.jsonl")
    assert "line 2" in str(err.value)


def test_empty_corpus_rejected():
    with pytest.raises(TraceFormatError):
        parse_traces_jsonl("   \n  ")


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(TraceFormatError):
        load_traces(str(tmp_path / "absent.jsonl"))
