import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depsolar.metrics import (
    MetricsIOError, MetricsLog, csv_to_records, export_metrics, import_metrics, records_to_csv,
)

# Text cells must not read back as numbers, booleans or blanks.
_RESERVED = {"true", "false", "nan", "inf", "infinity", "+inf", "-inf"}
words = st.text(alphabet=string.ascii_letters + " _-", min_size=1, max_size=12).filter(
    lambda s: s.strip() != "" and s.strip().lower() not in _RESERVED
)
cells = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(-10**9, 10**9),
    st.floats(allow_nan=False, allow_infinity=True),
    words,
)


@st.composite
def logs(draw):
    cols = draw(st.lists(st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True),
                         min_size=1, max_size=6, unique=True))
    rows = draw(st.lists(st.fixed_dictionaries({c: cells for c in cols}), max_size=8))
    return MetricsLog(rows, {"records": len(rows)}, [], cols)


@settings(max_examples=200, deadline=None)
@given(logs())
def test_csv_table_round_trip(log):
    cols, rows = csv_to_records(records_to_csv(log.columns, log.records))
    assert cols == log.columns
    assert rows == log.records


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_export_import_round_trip(tmp_path, fmt):
    recs = [{"step": k, "t": k * 1.0, "y": 0.45 * k, "flag": k % 2 == 0, "note": None} for k in range(5)]
    events = [{"t": 900.5, "node": 2, "plant": 1, "kind": "token_claim", "epoch": 2, "detail": "COMM_TIMEOUT"}]
    log = MetricsLog(recs, {"settling_time_s": 98.0, "stable": True}, events, list(recs[0]))
    path = export_metrics(log, tmp_path / f"run.{fmt}", fmt)
    back = import_metrics(path)
    assert back.records == recs
    assert back.summary == log.summary
    assert back.events == events
    assert back.columns == log.columns


def test_csv_sidecar_files(tmp_path):
    export_metrics(MetricsLog([{"a": 1}], {"x": 1}), tmp_path / "m.csv")
    assert (tmp_path / "m.summary.json").exists()
    assert (tmp_path / "m.events.csv").exists()


def test_empty_log_writes_header_only(tmp_path):
    log = MetricsLog([], {}, [], ["step", "t", "y"])
    path = export_metrics(log, tmp_path / "empty.csv")
    assert path.read_bytes() == b"step,t,y\r\n"
    assert import_metrics(path).records == []


def test_nan_written_as_blank():
    text = records_to_csv(["v"], [{"v": float("nan")}])
    assert text == 'v\r\n""\r\n'
    assert csv_to_records(text)[1] == [{"v": None}]


def test_unwritable_path_names_the_path(tmp_path):
    target = tmp_path / "missing_dir" / "m.csv"
    with pytest.raises(MetricsIOError) as info:
        export_metrics(MetricsLog([{"a": 1}]), target)
    assert str(target) in str(info.value)


def test_missing_file_on_import(tmp_path):
    with pytest.raises(MetricsIOError) as info:
        import_metrics(tmp_path / "nope.csv")
    assert "nope.csv" in str(info.value)


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        export_metrics(MetricsLog(), tmp_path / "m.xml", "xml")
