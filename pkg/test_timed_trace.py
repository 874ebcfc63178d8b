"""
Test Timed Traces - parsing, pairing, validation and normalization
"""

import pytest
from hypothesis import given, settings

from timed_trace import (
    EventType,
    TimedEvent,
    TimedTrace,
    TraceError,
    TraceFormatError,
    ViolationKind,
    format_corpus,
    format_trace,
    is_well_formed,
    load_corpus,
    normalize,
    parse_corpus,
    parse_trace,
    validate,
    write_corpus,
)
from trace_strategies import timed_traces


def _trace(*events):
    """('B', 'f', 0), ... -> trace, pairing resolved"""
    return TimedTrace.from_events(TimedEvent(EventType(k), op, ts) for k, op, ts in events)


def test_parse_minimal_trace():
    """Test parsing a single operation"""
    trace = parse_trace("B f 0\nE f 3")

    assert len(trace) == 2
    assert trace.pairing == (1, 0)
    assert trace[1].timestamp == 3
    assert trace.duration(0) == 3


def test_parse_nested_pairing():
    """Test begin/end pairing of nested calls"""
    trace = parse_trace("B f 0\nB g 1\nE g 2\nE f 3")

    assert trace.pairing == (3, 2, 1, 0)
    assert trace.operations == ["f", "g"]


def test_repeated_label_pairs_with_most_recent_begin():
    """Test pairing of recursive calls"""
    trace = parse_trace("B f 0\nB f 1\nE f 2\nE f 3")

    assert trace.pairing == (3, 2, 1, 0)


def test_unmatched_end_is_reported():
    """Test unmatched End"""
    with pytest.raises(TraceFormatError, match="unmatched End for g") as excinfo:
        parse_trace("B f 0\nE g 1")
    assert excinfo.value.line_number == 2


def test_unmatched_begin_is_reported_with_line():
    """Test unmatched Begin line number"""
    with pytest.raises(TraceFormatError, match="unmatched Begin for f") as excinfo:
        parse_trace("# header\nB f 0\nB g 1\nE g 2")
    assert excinfo.value.line_number == 2


@pytest.mark.parametrize(
    "text, message",
    [
        ("B f -3", "negative timestamp"),
        ("B f 1.5", "non-integer timestamp"),
        ("X f 1", "event type must be B or E"),
        ("B f  1", "expected"),
        ("B f@ 1", "invalid operation label"),
        ("B f 18446744073709551616", "exceeds 64 bits"),
    ],
)
def test_syntax_errors_carry_line_numbers(text, message):
    """Test syntax error reporting"""
    with pytest.raises(TraceFormatError, match=message) as excinfo:
        parse_trace(text)
    assert excinfo.value.line_number == 1


def test_empty_trace_rejected():
    """Test empty trace"""
    with pytest.raises(TraceFormatError, match="empty trace"):
        parse_trace("# only a comment\n\n")
    with pytest.raises(TraceFormatError):
        TimedTrace.from_events([])


def test_open_trace_allowed_on_request():
    """Test open traces"""
    trace = parse_trace("B f 0\nB g 1\nE g 2", allow_open=True)

    assert trace.is_open
    assert trace.pair(0) is None
    assert trace.duration(0) is None
    kinds = [v.kind for v in validate(trace)]
    assert kinds == [ViolationKind.PAIRING]


def test_validate_time_decrease():
    """Test decreasing timestamps"""
    violations = validate(_trace(("B", "f", 5), ("E", "f", 3)))

    assert [(v.kind, v.index) for v in violations] == [(ViolationKind.TIME_DECREASE, 1)]


def test_validate_interleaved_operations():
    """Test interleaved operations"""
    violations = validate(_trace(("B", "f", 0), ("B", "g", 1), ("E", "f", 2), ("E", "g", 3)))

    assert [(v.kind, v.index) for v in violations] == [(ViolationKind.NESTING, 2)]
    assert "g started at index 1" in violations[0].message


def test_validate_well_formed():
    """Test well-formed traces"""
    trace = _trace(("B", "f", 0), ("B", "g", 1), ("E", "g", 2), ("E", "f", 3))

    assert validate(trace) == []
    assert is_well_formed(trace)


def test_validate_inconsistent_pairing():
    """Test inconsistent pairing"""
    events = (TimedEvent(EventType.BEGIN, "f", 0), TimedEvent(EventType.END, "f", 1))
    broken = TimedTrace(events, (1, 1))

    kinds = {v.kind for v in validate(broken)}
    assert kinds == {ViolationKind.PAIRING}


def test_zero_duration_operation_is_legal():
    """Test zero duration operations"""
    assert validate(parse_trace("B f 4\nE f 4")) == []


@pytest.mark.parametrize(
    "stamps, expected",
    [
        ((98483940, 98483943), (0, 3)),
        ((0, 3), (0, 3)),
        ((100, 150), (0, 50)),
    ],
)
def test_normalize_examples(stamps, expected):
    """Test normalization"""
    trace = _trace(("B", "f", stamps[0]), ("E", "f", stamps[1]))

    assert normalize(trace).timestamps == expected


def test_normalize_equal_first_timestamps():
    """Test normalization with equal leading timestamps"""
    trace = _trace(("B", "f", 100), ("B", "g", 100), ("E", "g", 150), ("E", "f", 150))

    assert normalize(trace).timestamps == (0, 0, 50, 50)


@settings(max_examples=200, deadline=None)
@given(timed_traces())
def test_normalize_is_idempotent_and_preserves_differences(trace):
    """Test normalization properties"""
    once = normalize(trace)

    assert once[0].timestamp == 0
    assert normalize(once) == once
    base = trace[0].timestamp
    assert all(a == b - base for a, b in zip(once.timestamps, trace.timestamps))
    assert once.pairing == trace.pairing


@settings(max_examples=200, deadline=None)
@given(timed_traces())
def test_generated_traces_are_well_formed(trace):
    """Test generated traces"""
    assert validate(trace) == []
    assert len(trace) % 2 == 0


def test_format_round_trips_canonical_text():
    """Test trace formatting"""
    text = "B f 0\nB g 1\nE g 2\nE f 3\n"

    assert format_trace(parse_trace(text)) == text


def test_corpus_with_comments_and_blank_lines():
    """Test corpus comments and separators"""
    text = "# first\nB f 0\nE f 3\n\n\n# second\nB g 10\nE g 12\n"
    traces = parse_corpus(text)

    assert [t.operations for t in traces] == [["f"], ["g"]]
    assert format_corpus(traces) == "B f 0\nE f 3\n\nB g 10\nE g 12\n"


def test_corpus_errors_point_at_the_right_line():
    """Test corpus error line numbers"""
    with pytest.raises(TraceFormatError) as excinfo:
        parse_corpus("B f 0\nE f 1\n\nB g 0\nE h 2\n")
    assert excinfo.value.line_number == 5


def test_empty_corpus_rejected():
    """Test empty corpus"""
    with pytest.raises(TraceFormatError, match="no traces"):
        parse_corpus("\n# nothing\n")


def test_write_and_load_corpus(tmp_path):
    """Test corpus file writing and loading"""
    traces = parse_corpus("B f 0\nE f 3\n\nB f 5\nB g 6\nE g 7\nE f 9\n")
    path = tmp_path / "corpus.trace"
    write_corpus(path, traces)

    assert load_corpus(path) == traces


def test_load_missing_corpus(tmp_path):
    """Test loading an absent corpus"""
    with pytest.raises(TraceError, match="cannot read corpus"):
        load_corpus(tmp_path / "missing.trace")
