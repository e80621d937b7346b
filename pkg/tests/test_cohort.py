from datetime import date, timedelta
import io

from hypothesis import given, strategies as st
import pytest

from bacsurv.cohort import (
    DAYS_PER_YEAR,
    MACE_CODE_SETS,
    DiagnosisRecord,
    Endpoint,
    IcdCodeSet,
    SchemaError,
    SubjectRecord,
    TimeToEvent,
    apply_eligibility,
    assemble_cohort,
    build_time_to_event,
    frame_from_table,
    match_code,
    parse_cohort,
    parse_diagnoses,
    write_cohort_table,
)

HEADER = "subject_id,index_date,age,race,diabetes,egfr,bac_area_mm2,last_followup_date\n"
INDEX = date(2010, 1, 1)


def subject(sid="A", followup_days=2000, death=None, **kw):
    return SubjectRecord(
        subject_id=sid,
        index_date=INDEX,
        age_at_index=kw.pop("age", 55.0),
        bac_area_mm2=kw.pop("bac", 3.0),
        last_followup_date=INDEX + timedelta(days=followup_days),
        death_date=None if death is None else INDEX + timedelta(days=death),
        **kw,
    )


def dx(sid, code, days):
    return DiagnosisRecord(sid, code, INDEX + timedelta(days=days))


# --- parse_cohort -----------------------------------------------------------


def test_parse_row_window():
    res = parse_cohort(HEADER + "S1,2010-01-02,55,White,0,70,3.4,2018-03-04\n")
    assert not res.errors
    (rec,) = res.records
    assert rec.age_at_index == 55 and rec.bac_area_mm2 == 3.4
    # exclusive day count: 2010-01-02 + 2983 days = 2018-03-04
    assert rec.followup_days == 2983


def test_parse_rejects_minor():
    res = parse_cohort(HEADER + "S1,2010-01-02,17,White,0,70,3.4,2018-03-04\n")
    assert res.records == []
    (err,) = res.errors
    assert err.reason == "age" and err.line == 2


def test_parse_missing_egfr_is_none():
    res = parse_cohort(HEADER + "S1,2010-01-02,55,White,0,,3.4,2018-03-04\n")
    assert res.records[0].egfr is None


def test_parse_malformed_date_has_line_number():
    text = HEADER + "S1,2010-01-02,55,White,0,70,3.4,2018-03-04\nS2,2010-13-02,60,White,0,70,1,2018-03-04\n"
    res = parse_cohort(text)
    assert [r.subject_id for r in res.records] == ["S1"]
    assert res.errors[0].line == 3 and res.errors[0].reason == "malformed_date"


def test_parse_missing_required_column():
    with pytest.raises(SchemaError, match="index_date"):
        parse_cohort("subject_id,age,bac_area_mm2,last_followup_date\nS1,55,1,2018-01-01\n")


def test_parse_column_mapping_and_mask_area():
    text = "id,screen,years,px,dr,dc,last\nS1,2010-01-02,55,400,0.05,0.05,2016-01-01\n"
    schema = {"subject_id": "id", "index_date": "screen", "age": "years", "positive_pixel_count": "px",
              "pixel_spacing_row": "dr", "pixel_spacing_col": "dc", "last_followup_date": "last"}
    (rec,) = parse_cohort(text, schema).records
    assert rec.bac_area_mm2 == pytest.approx(1.0)


def test_parse_area_and_mask_conflict():
    text = "subject_id,index_date,age,bac_area_mm2,positive_pixel_count,pixel_spacing_row,pixel_spacing_col,last_followup_date\n"
    text += "S1,2010-01-02,55,1.0,400,0.05,0.05,2016-01-01\n"
    assert parse_cohort(text).errors[0].reason == "bac_conflict"


def test_parse_diagnoses_normalizes_codes():
    res = parse_diagnoses("subject_id,code,code_date\nS1, i21.0 ,2011-01-01\nS1,,2011-01-01\n")
    assert res.records[0].code == "I21.0"
    assert res.errors[0].reason == "missing_code"


# --- match_code -------------------------------------------------------------


@pytest.mark.parametrize(
    "code,endpoint,expected",
    [
        ("I21.0", Endpoint.AMI, True),
        ("I63.42", Endpoint.Stroke, True),
        ("i63.9 ", Endpoint.Stroke, True),
        ("I630", Endpoint.Stroke, False),
        ("410.71", Endpoint.AMI, True),
        ("I50.9", Endpoint.HF, False),
    ],
)
def test_match_code(code, endpoint, expected):
    assert match_code(code, MACE_CODE_SETS[endpoint]) is expected


def test_unknown_code_matches_nothing():
    assert not any(match_code("Z99.9", cs) for cs in MACE_CODE_SETS.values())


def test_code_sets_reject_overlap():
    with pytest.raises(ValueError):
        IcdCodeSet(Endpoint.Stroke, frozenset(["I63"]), frozenset(["I63"]))


codes = st.text(alphabet="I0123456789.", min_size=1, max_size=7)


@given(code=codes, exact=st.lists(codes, max_size=8), stems=st.lists(st.text("I0123456789", min_size=1, max_size=4), max_size=4))
def test_match_code_order_independent(code, exact, stems):
    stems = [s for s in stems if s not in exact]
    a = IcdCodeSet(Endpoint.AMI, frozenset(exact), frozenset(stems))
    b = IcdCodeSet(Endpoint.AMI, frozenset(reversed(exact)), frozenset(reversed(stems)))
    assert match_code(code, a) == match_code(code, b) == match_code(code, a)
    expected = code in exact or code.split(".", 1)[0] in stems
    assert match_code(code, a) == expected


# --- build_time_to_event ----------------------------------------------------


def test_first_event_rule():
    out = build_time_to_event(subject(), [dx("A", "I21.0", 400), dx("A", "I21.0", 800)]).outcomes
    assert out[Endpoint.AMI] == TimeToEvent("A", Endpoint.AMI, 400, True)
    assert out[Endpoint.Stroke] == TimeToEvent("A", Endpoint.Stroke, 2000, False)
    assert out[Endpoint.CompositeMACE].duration == 400 and out[Endpoint.CompositeMACE].event


def test_prior_event_excludes():
    res = build_time_to_event(subject(), [dx("A", "I63.9", -100), dx("A", "I21.0", 300)])
    assert res.excluded_prior_event and res.outcomes == {}


def test_death_is_an_event():
    out = build_time_to_event(subject(death=900), []).outcomes
    assert out[Endpoint.Death] == TimeToEvent("A", Endpoint.Death, 900, True)
    assert out[Endpoint.CompositeMACE] == TimeToEvent("A", Endpoint.CompositeMACE, 900, True)
    # non-fatal endpoints are censored at death
    assert out[Endpoint.HF] == TimeToEvent("A", Endpoint.HF, 900, False)


def test_foreign_diagnosis_rejected():
    with pytest.raises(ValueError):
        build_time_to_event(subject(), [dx("B", "I21.0", 10)])


@given(
    ami=st.none() | st.integers(1, 3000),
    stroke=st.none() | st.integers(1, 3000),
    hf=st.none() | st.integers(1, 3000),
    death=st.none() | st.integers(1, 3000),
)
def test_composite_is_min_of_components(ami, stroke, hf, death):
    diags = [dx("A", c, d) for c, d in (("I21.0", ami), ("I63.1", stroke), ("I50.21", hf)) if d is not None]
    out = build_time_to_event(subject(followup_days=3000, death=death), diags).outcomes
    events = [o.duration for ep, o in out.items() if ep != Endpoint.CompositeMACE and o.event]
    if events:
        assert out[Endpoint.CompositeMACE].event
        assert out[Endpoint.CompositeMACE].duration == min(events)
    else:
        assert not out[Endpoint.CompositeMACE].event


# --- eligibility ------------------------------------------------------------


@pytest.mark.parametrize("years,event,kept", [(2.0, True, True), (4.9, False, False), (6.0, False, True)])
def test_eligibility(years, event, kept):
    tte = TimeToEvent("A", Endpoint.CompositeMACE, int(years * DAYS_PER_YEAR), event)
    eligible, report = apply_eligibility([(subject(), tte)])
    assert (len(eligible) == 1) is kept
    assert report["eligible"] + report["excluded_short_followup"] == 1


def _table(rows):
    lines = ["subject_id,index_date,age,bac_area_mm2,last_followup_date"]
    for sid, age, follow in rows:
        lines.append(f"{sid},2010-01-01,{age},1.0,{(INDEX + timedelta(days=follow)).isoformat()}")
    return "\n".join(lines) + "\n"


cohort_rows = st.lists(
    st.tuples(st.sampled_from([15, 40, 70]), st.integers(1, 4000), st.sampled_from([None, -5, 0, 500, 5000])),
    min_size=0,
    max_size=12,
)


@given(rows=cohort_rows, years=st.floats(0, 10), extra=st.floats(0, 5))
def test_partition_and_monotonicity(rows, years, extra):
    subjects = parse_cohort(_table([(f"S{i:02d}", age, f) for i, (age, f, _) in enumerate(rows)]))
    diag_lines = ["subject_id,code,code_date"]
    for i, (_, _, d) in enumerate(rows):
        if d is not None:
            diag_lines.append(f"S{i:02d},I21.0,{(INDEX + timedelta(days=d)).isoformat()}")
    diagnoses = parse_diagnoses("\n".join(diag_lines) + "\n")
    strict = assemble_cohort(subjects, diagnoses, years + extra)
    loose = assemble_cohort(subjects, diagnoses, years)
    r = strict.report
    assert r.eligible + r.excluded_prior_event + r.excluded_short_followup + r.excluded_parse_error == len(rows)
    assert {s.subject_id for s in strict.subjects} <= {s.subject_id for s in loose.subjects}


def test_cohort_table_round_trip():
    text = HEADER + "S2,2010-01-02,61,Black,1,,12.5,2018-03-04\nS1,2010-01-02,55,White,0,70,3.4,2018-03-04\n"
    cohort = assemble_cohort(parse_cohort(text), parse_diagnoses("subject_id,code,code_date\nS1,I21.0,2012-01-01\n"))
    buf = io.StringIO()
    write_cohort_table(cohort.to_frame(), buf)
    frame = frame_from_table(io.StringIO(buf.getvalue()))
    assert list(frame["subject_id"]) == ["S1", "S2"]
    assert frame["ami_event"].tolist() == [True, False]
    assert frame["egfr"].isna().tolist() == [False, True]
    again = io.StringIO()
    write_cohort_table(frame, again)
    assert again.getvalue() == buf.getvalue()
