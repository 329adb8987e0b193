import numpy as np
import pytest

from pptrial.data import LongitudinalDataset, load_dataset, validate_dataset
from pptrial.errors import DataError

from fixtures import SCHEMA, subject_rows

HEADER = "subject_id,visit,arm,treatment,outcome,competing,ltfu,B,L\n"


def write(tmp_path, body, header=HEADER):
    p = tmp_path / "d.csv"
    p.write_text(header + body)
    return p


def test_load_two_subjects(tmp_path):
    body = ("s1,0,1,1,0,0,0,1,0.5\ns1,1,1,1,0,0,0,1,0.7\ns1,2,1,1,1,0,0,1,0.9\n"
            "s2,0,0,0,0,0,0,0,1.0\ns2,1,0,0,0,0,0,0,\n")
    ds = load_dataset(write(tmp_path, body), SCHEMA)
    assert ds.n_subjects == 2
    assert ds.n_rows == 5
    assert ds.horizon == 2
    s2 = ds.subject(1)
    assert s2.visits[1].covariates["L"] is None
    assert ds.subject(0).terminal_status == "event"


def test_records_after_terminal_event_rejected(tmp_path):
    body = "s1,0,1,1,1,0,0,0,0\ns1,1,1,1,0,0,0,0,0\n"
    with pytest.raises(DataError, match="after terminal"):
        load_dataset(write(tmp_path, body), SCHEMA)


def test_duplicate_visit_rejected(tmp_path):
    body = "s1,0,1,1,0,0,0,0,0\ns1,1,1,1,0,0,0,0,0\ns1,1,1,1,0,0,0,0,0\n"
    with pytest.raises(DataError, match=r"duplicate.*s1, 1"):
        load_dataset(write(tmp_path, body), SCHEMA)


@pytest.mark.parametrize("body, pattern", [
    ("s1,0,1,2,0,0,0,0,0\n", "must be 0 or 1"),
    ("s1,0,1,1,0,0\n", "malformed row"),
    ("s1,0,1,1,0,0,0,0,abc\n", "malformed row"),
])
def test_malformed_rows(tmp_path, body, pattern):
    with pytest.raises(DataError, match=pattern):
        load_dataset(write(tmp_path, body), SCHEMA)


def test_header_must_match_schema(tmp_path):
    with pytest.raises(DataError, match="do not match schema"):
        load_dataset(write(tmp_path, "s1,0,1,1,0,0,0,0\n", header=HEADER.replace(",L", "")), SCHEMA)
    with pytest.raises(DataError, match="not found"):
        load_dataset(tmp_path / "nope.csv", SCHEMA)


def test_first_event_convention():
    rows = subject_rows("s1", 1, [1], competing=[1])
    with pytest.raises(DataError, match="first-event"):
        LongitudinalDataset.from_records(rows, SCHEMA)
    ds = LongitudinalDataset.from_records(rows, SCHEMA, check=False)
    assert [i.code for i in validate_dataset(ds)] == ["first-event"]


def test_noncontiguous_and_varying_arm():
    rows = subject_rows("s1", 1, [0, 0, 0])
    rows[2]["visit"] = 3
    ds = LongitudinalDataset.from_records(rows, SCHEMA, check=False)
    assert "non-contiguous" in {i.code for i in validate_dataset(ds)}
    rows = subject_rows("s1", 1, [0, 0])
    rows[1]["arm"] = 0
    ds = LongitudinalDataset.from_records(rows, SCHEMA, check=False)
    issue = [i for i in validate_dataset(ds) if i.code == "arm-varies"][0]
    assert (issue.subject, issue.visit) == ("s1", 1)


def test_unmeasured_predictor_warning():
    rows = subject_rows("s1", 1, [0, 0]) + subject_rows("s2", 0, [0, 0])
    for r in rows:
        r["L"] = ""
    ds = LongitudinalDataset.from_records(rows, SCHEMA)
    issues = validate_dataset(ds)
    assert [i.level for i in issues] == ["warning"]
    assert "adherence predictors unmeasured" in issues[0].message


def test_csv_round_trip(tmp_path):
    rows = subject_rows("a", 1, [0, 0, 1], treatment=[1, "", 1], L=[0.25, 1.5, -3.0], B=1)
    rows += subject_rows("b", 0, [0, 0], ltfu_last=True)
    ds = LongitudinalDataset.from_records(rows, SCHEMA)
    ds.to_csv(tmp_path / "x.csv")
    back = load_dataset(tmp_path / "x.csv", SCHEMA)
    np.testing.assert_array_equal(back.treatment, ds.treatment)
    np.testing.assert_array_equal(back.covariates["L"], ds.covariates["L"])
    np.testing.assert_array_equal(back.ltfu, ds.ltfu)
    assert list(back.subject_ids) == ["a", "b"]


def test_dataset_is_immutable():
    ds = LongitudinalDataset.from_records(subject_rows("s", 1, [0, 0]), SCHEMA)
    with pytest.raises(ValueError):
        ds.treatment[0] = 0
