"""Cohort ingestion, MACE endpoint construction and eligibility rules."""

from collections import Counter, defaultdict
import csv
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
import io
import json
import math

import numpy as np
import pandas as pd

from .bac import MaskSummary, area_from_mask

DAYS_PER_YEAR = 365.25
MIN_AGE_EXCLUSIVE = 18.0


class Endpoint(str, Enum):
    AMI = "AMI"
    Stroke = "Stroke"
    HF = "HF"
    Death = "Death"
    CompositeMACE = "CompositeMACE"

    @property
    def column_prefix(self):
        return {"AMI": "ami", "Stroke": "stroke", "HF": "hf", "Death": "death", "CompositeMACE": "mace"}[self.value]


COMPONENT_ENDPOINTS = (Endpoint.AMI, Endpoint.Stroke, Endpoint.HF, Endpoint.Death)
CODED_ENDPOINTS = (Endpoint.AMI, Endpoint.Stroke, Endpoint.HF)
ALL_ENDPOINTS = (Endpoint.CompositeMACE,) + COMPONENT_ENDPOINTS

RACES = ("Asian", "Black", "White", "Other")
_RACE_ALIASES = {
    "asian": "Asian",
    "black": "Black",
    "african american": "Black",
    "black or african american": "Black",
    "white": "White",
    "caucasian": "White",
    "other": "Other",
}
_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


class SchemaError(ValueError):
    """A required column is missing from an input table."""


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    index_date: date
    age_at_index: float
    bac_area_mm2: float
    last_followup_date: date
    race: str = "Other"
    hispanic: bool = False
    diabetes: bool = False
    smoking: bool = False
    on_statin: bool = False
    on_antihypertensive: bool = False
    systolic_bp: float = None
    total_cholesterol: float = None
    hdl: float = None
    bmi: float = None
    egfr: float = None
    a1c: float = None
    death_date: date = None

    @property
    def followup_days(self):
        return (self.last_followup_date - self.index_date).days


@dataclass(frozen=True)
class DiagnosisRecord:
    subject_id: str
    code: str
    code_date: date


@dataclass(frozen=True)
class EndpointEvent:
    subject_id: str
    endpoint: Endpoint
    event_date: date


@dataclass(frozen=True)
class TimeToEvent:
    subject_id: str
    endpoint: Endpoint
    duration: int
    event: bool

    @property
    def status(self):
        return "event" if self.event else "censored"


@dataclass(frozen=True)
class IcdCodeSet:
    """Exact ICD codes plus wildcard stems (``"I63"`` for ``I63.*``) for one endpoint."""

    endpoint: Endpoint
    exact_codes: frozenset
    prefix_codes: frozenset = frozenset()

    def __post_init__(self):
        if self.exact_codes & self.prefix_codes:
            raise ValueError("exact and prefix code sets must be disjoint")


@dataclass(frozen=True)
class RowError:
    line: int
    subject_id: str
    reason: str
    message: str


@dataclass
class ParseResult:
    records: list
    errors: list = field(default_factory=list)


def _icd9_ami():
    codes = []
    for k in range(10):
        codes += [f"410.{k}", f"410.{k}0", f"410.{k}1"]
    return codes


# ICD-9 and ICD-10 codes defining each MACE component.
MACE_CODE_SETS = {
    Endpoint.AMI: IcdCodeSet(
        Endpoint.AMI,
        frozenset(
            _icd9_ami()
            + ["I21.0", "I21.01", "I21.02", "I21.09", "I21.1", "I21.11", "I21.19",
               "I21.2", "I21.21", "I21.29", "I21.3", "I21.4", "I21.9"]
        ),
    ),
    Endpoint.Stroke: IcdCodeSet(
        Endpoint.Stroke,
        frozenset(["433.01", "433.11", "433.21", "433.31", "433.81", "433.91", "434.01", "434.11", "434.91"]),
        frozenset(["I63"]),
    ),
    Endpoint.HF: IcdCodeSet(
        Endpoint.HF,
        frozenset(["428.43", "428.33", "428.23", "428.41", "I50.813", "I50.43", "I50.33", "I50.23", "I50.21"]),
    ),
}


def normalize_code(code):
    return code.strip().upper()


def match_code(code, code_set):
    """True if ``code`` is one of the exact codes or its dotted stem is a wildcard stem."""
    code = normalize_code(code)
    if code in code_set.exact_codes:
        return True
    return code.split(".", 1)[0] in code_set.prefix_codes


# ---------------------------------------------------------------------------
# Table parsing

SUBJECT_COLUMNS = (
    "subject_id", "index_date", "age", "race", "hispanic", "diabetes", "smoking", "on_statin",
    "on_antihypertensive", "systolic_bp", "total_cholesterol", "hdl", "bmi", "egfr", "a1c",
    "bac_area_mm2", "positive_pixel_count", "pixel_spacing_row", "pixel_spacing_col",
    "last_followup_date", "death_date",
)
REQUIRED_SUBJECT_COLUMNS = ("subject_id", "index_date", "age", "last_followup_date")
MASK_COLUMNS = ("positive_pixel_count", "pixel_spacing_row", "pixel_spacing_col")
DIAGNOSIS_COLUMNS = ("subject_id", "code", "code_date")
_BOOL_FIELDS = ("hispanic", "diabetes", "smoking", "on_statin", "on_antihypertensive")
_OPTIONAL_FLOATS = ("systolic_bp", "total_cholesterol", "hdl", "bmi", "egfr", "a1c")


class _RowProblem(Exception):
    def __init__(self, reason, message):
        self.reason = reason
        super().__init__(message)


def load_schema(path):
    """Column mapping (canonical name -> source column) from a JSON config file."""
    with open(path) as fh:
        data = json.load(fh)
    return data.get("columns", data)


def _resolve_columns(header, schema, canonical, required):
    schema = schema or {}
    mapping = {}
    for name in canonical:
        source = schema.get(name, name)
        if source in header:
            mapping[name] = header.index(source)
    missing = [name for name in required if name not in mapping]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    return mapping


def _parse_date(text, name):
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise _RowProblem("malformed_date", f"{name}: malformed date {text!r}") from None


def _parse_float(text, name, optional=False):
    text = text.strip()
    if not text or text.upper() in ("NA", "NAN", "NULL"):
        if optional:
            return None
        raise _RowProblem("missing_value", f"{name}: required value missing")
    try:
        value = float(text)
    except ValueError:
        raise _RowProblem("malformed_number", f"{name}: not a number {text!r}") from None
    if not math.isfinite(value):
        raise _RowProblem("malformed_number", f"{name}: non-finite value {text!r}")
    return value


def _parse_bool(text, name):
    key = text.strip().lower()
    if key in _TRUE:
        return True
    if key in _FALSE:
        return False
    raise _RowProblem("malformed_boolean", f"{name}: not a boolean {text!r}")


def _parse_race(text):
    key = text.strip().lower()
    if not key:
        return "Other"
    if key in _RACE_ALIASES:
        return _RACE_ALIASES[key]
    raise _RowProblem("unknown_race", f"race: unrecognized value {text!r}")


def _subject_from_row(row, cols):
    def get(name):
        j = cols.get(name)
        return row[j] if j is not None and j < len(row) else ""

    subject_id = get("subject_id").strip()
    if not subject_id:
        raise _RowProblem("missing_id", "subject_id is empty")
    index_date = _parse_date(get("index_date"), "index_date")
    last_followup = _parse_date(get("last_followup_date"), "last_followup_date")
    age = _parse_float(get("age"), "age")
    if not age > MIN_AGE_EXCLUSIVE:
        raise _RowProblem("age", f"age {age} not above {MIN_AGE_EXCLUSIVE:g}; ineligible")

    has_area = bool(get("bac_area_mm2").strip())
    has_mask = any(get(c).strip() for c in MASK_COLUMNS)
    if has_area and has_mask:
        raise _RowProblem("bac_conflict", "both bac_area_mm2 and mask columns given")
    if has_area:
        bac = _parse_float(get("bac_area_mm2"), "bac_area_mm2")
    elif has_mask:
        try:
            summary = MaskSummary(
                int(_parse_float(get("positive_pixel_count"), "positive_pixel_count")),
                _parse_float(get("pixel_spacing_row"), "pixel_spacing_row"),
                _parse_float(get("pixel_spacing_col"), "pixel_spacing_col"),
            )
        except ValueError as exc:
            if isinstance(exc, _RowProblem):
                raise
            raise _RowProblem("bad_mask", str(exc)) from None
        bac = area_from_mask(summary)
    else:
        raise _RowProblem("missing_value", "no BAC measurement")
    if bac < 0:
        raise _RowProblem("negative_bac", f"negative BAC area {bac}")
    if last_followup < index_date:
        raise _RowProblem("followup_before_index", "last_followup_date precedes index_date")
    if last_followup == index_date:
        raise _RowProblem("no_followup", "last_followup_date equals index_date")
    death_text = get("death_date").strip()
    death = _parse_date(death_text, "death_date") if death_text else None
    if death is not None and death <= index_date:
        raise _RowProblem("death_before_index", "death_date on or before index_date")

    kwargs = {name: _parse_bool(get(name), name) for name in _BOOL_FIELDS}
    kwargs.update({name: _parse_float(get(name), name, optional=True) for name in _OPTIONAL_FLOATS})
    return SubjectRecord(
        subject_id=subject_id,
        index_date=index_date,
        age_at_index=age,
        bac_area_mm2=bac,
        last_followup_date=last_followup,
        race=_parse_race(get("race")),
        death_date=death,
        **kwargs,
    )


def parse_cohort(table_source, schema=None, delimiter=","):
    """Parse a subjects table into :class:`SubjectRecord` objects.

    Parameters
    ----------
    table_source : file-like or str
        Delimited text with a header row. A ``str`` is treated as the table
        contents.
    schema : dict, optional
        Canonical column name -> column name in the file.

    Returns
    -------
    ParseResult
        Accepted records plus one :class:`RowError` per rejected row. Line
        numbers count the header as line 1.

    Raises
    ------
    SchemaError
        If a required column cannot be found.
    """
    if isinstance(table_source, str):
        table_source = io.StringIO(table_source)
    reader = csv.reader(table_source, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty table: header row missing") from None
    cols = _resolve_columns(header, schema, SUBJECT_COLUMNS, REQUIRED_SUBJECT_COLUMNS)
    if "bac_area_mm2" not in cols and not all(c in cols for c in MASK_COLUMNS):
        raise SchemaError("missing required column(s): bac_area_mm2 (or all of the mask columns)")
    result = ParseResult(records=[])
    seen = set()
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        sid = row[cols["subject_id"]].strip() if cols["subject_id"] < len(row) else ""
        try:
            record = _subject_from_row(row, cols)
            if record.subject_id in seen:
                raise _RowProblem("duplicate_id", f"duplicate subject_id {record.subject_id!r}")
        except _RowProblem as problem:
            result.errors.append(RowError(line, sid, problem.reason, str(problem)))
            continue
        seen.add(record.subject_id)
        result.records.append(record)
    return result


def parse_diagnoses(table_source, schema=None, delimiter=","):
    """Parse a diagnoses table (subject_id, code, code_date) into :class:`DiagnosisRecord`."""
    if isinstance(table_source, str):
        table_source = io.StringIO(table_source)
    reader = csv.reader(table_source, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty table: header row missing") from None
    cols = _resolve_columns(header, schema, DIAGNOSIS_COLUMNS, DIAGNOSIS_COLUMNS)
    result = ParseResult(records=[])
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        sid = row[cols["subject_id"]].strip()
        code = normalize_code(row[cols["code"]])
        try:
            if not code:
                raise _RowProblem("missing_code", "empty diagnosis code")
            when = _parse_date(row[cols["code_date"]], "code_date")
        except _RowProblem as problem:
            result.errors.append(RowError(line, sid, problem.reason, str(problem)))
            continue
        result.records.append(DiagnosisRecord(sid, code, when))
    return result


# ---------------------------------------------------------------------------
# Endpoint construction


@dataclass
class EventAssembly:
    subject_id: str
    outcomes: dict
    events: list
    excluded_prior_event: bool = False


def build_time_to_event(subject, diagnoses, death_date=None, code_sets=None):
    """Per-endpoint time-to-event outcomes for one subject.

    Durations are days from the index date. A coded endpoint is an event at its
    first qualifying code after the index date; otherwise it is censored at the
    earlier of death and last follow-up. Death is an event on the death date.
    The composite is the earliest component event.

    Any qualifying code dated on or before the index date marks the subject as
    excluded (pre-existing disease) and no outcomes are returned, even if
    later events exist.
    """
    code_sets = MACE_CODE_SETS if code_sets is None else code_sets
    death = death_date if death_date is not None else subject.death_date
    first = {}
    for dx in diagnoses:
        if dx.subject_id != subject.subject_id:
            raise ValueError(f"diagnosis for {dx.subject_id!r} passed with subject {subject.subject_id!r}")
        for endpoint, code_set in code_sets.items():
            if not match_code(dx.code, code_set):
                continue
            if dx.code_date <= subject.index_date:
                return EventAssembly(subject.subject_id, {}, [], excluded_prior_event=True)
            if death is not None and dx.code_date > death:
                continue
            if endpoint not in first or dx.code_date < first[endpoint]:
                first[endpoint] = dx.code_date

    events = [EndpointEvent(subject.subject_id, ep, d) for ep, d in sorted(first.items(), key=lambda kv: kv[0].value)]
    if death is not None:
        first[Endpoint.Death] = death
        events.append(EndpointEvent(subject.subject_id, Endpoint.Death, death))

    end = subject.last_followup_date
    censor_at = min(end, death) if death is not None else end
    outcomes = {}
    for endpoint in code_sets:
        if endpoint in first:
            outcomes[endpoint] = TimeToEvent(subject.subject_id, endpoint, (first[endpoint] - subject.index_date).days, True)
        else:
            outcomes[endpoint] = TimeToEvent(subject.subject_id, endpoint, (censor_at - subject.index_date).days, False)
    if death is not None:
        outcomes[Endpoint.Death] = TimeToEvent(subject.subject_id, Endpoint.Death, (death - subject.index_date).days, True)
    else:
        outcomes[Endpoint.Death] = TimeToEvent(subject.subject_id, Endpoint.Death, (end - subject.index_date).days, False)
    if first:
        when = min(first.values())
        outcomes[Endpoint.CompositeMACE] = TimeToEvent(
            subject.subject_id, Endpoint.CompositeMACE, (when - subject.index_date).days, True
        )
    else:
        outcomes[Endpoint.CompositeMACE] = TimeToEvent(
            subject.subject_id, Endpoint.CompositeMACE, (end - subject.index_date).days, False
        )
    return EventAssembly(subject.subject_id, outcomes, events)


def is_eligible(outcome, min_followup_years=5.0):
    """Events are always kept; censored subjects need the minimum follow-up."""
    return outcome.event or outcome.duration >= DAYS_PER_YEAR * min_followup_years


def apply_eligibility(records, min_followup_years=5.0):
    """Split ``(subject, composite TimeToEvent)`` pairs by the follow-up rule.

    Returns
    -------
    eligible : list
        The kept pairs, in input order.
    report : dict
        ``{"eligible": k, "excluded_short_followup": m}``.
    """
    eligible = []
    short = 0
    for subject, outcome in records:
        if is_eligible(outcome, min_followup_years):
            eligible.append((subject, outcome))
        else:
            short += 1
    return eligible, {"eligible": len(eligible), "excluded_short_followup": short}


@dataclass
class ExclusionReport:
    input_rows: int = 0
    parse_errors: dict = field(default_factory=dict)
    excluded_prior_event: int = 0
    excluded_short_followup: int = 0
    eligible: int = 0
    diagnosis_rows: int = 0
    diagnosis_errors: int = 0
    diagnoses_unmatched_subject: int = 0
    min_followup_years: float = 5.0

    @property
    def excluded_parse_error(self):
        return sum(self.parse_errors.values())

    def to_dict(self):
        return {
            "schema": "bacsurv.exclusions/1",
            "input_rows": self.input_rows,
            "excluded_parse_error": self.excluded_parse_error,
            "parse_errors_by_reason": dict(sorted(self.parse_errors.items())),
            "excluded_prior_event": self.excluded_prior_event,
            "excluded_short_followup": self.excluded_short_followup,
            "eligible": self.eligible,
            "min_followup_years": self.min_followup_years,
            "diagnosis_rows": self.diagnosis_rows,
            "diagnosis_errors": self.diagnosis_errors,
            "diagnoses_unmatched_subject": self.diagnoses_unmatched_subject,
        }


@dataclass
class Cohort:
    """Eligible subjects with their per-endpoint outcomes, ordered by subject id."""

    subjects: list
    outcomes: list
    report: ExclusionReport

    def __len__(self):
        return len(self.subjects)

    def to_frame(self):
        return cohort_frame(self.subjects, self.outcomes)


def assemble_cohort(subjects, diagnoses, min_followup_years=5.0, code_sets=None):
    """Build the eligible cohort from parsed subject and diagnosis tables.

    Every input row lands in exactly one of: parse error, prior event,
    short follow-up, eligible.
    """
    report = ExclusionReport(min_followup_years=min_followup_years)
    report.input_rows = len(subjects.records) + len(subjects.errors)
    report.parse_errors = dict(Counter(e.reason for e in subjects.errors))
    report.diagnosis_rows = len(diagnoses.records) + len(diagnoses.errors)
    report.diagnosis_errors = len(diagnoses.errors)

    by_subject = defaultdict(list)
    known = {s.subject_id for s in subjects.records}
    for dx in diagnoses.records:
        if dx.subject_id in known:
            by_subject[dx.subject_id].append(dx)
        else:
            report.diagnoses_unmatched_subject += 1

    kept_subjects, kept_outcomes = [], []
    for subject in sorted(subjects.records, key=lambda s: s.subject_id):
        assembly = build_time_to_event(subject, by_subject.get(subject.subject_id, ()), code_sets=code_sets)
        if assembly.excluded_prior_event:
            report.excluded_prior_event += 1
            continue
        if not is_eligible(assembly.outcomes[Endpoint.CompositeMACE], min_followup_years):
            report.excluded_short_followup += 1
            continue
        kept_subjects.append(subject)
        kept_outcomes.append(assembly.outcomes)
    report.eligible = len(kept_subjects)
    return Cohort(kept_subjects, kept_outcomes, report)


# ---------------------------------------------------------------------------
# Canonical cohort table

FRAME_SUBJECT_COLUMNS = (
    "subject_id", "index_date", "age_at_index", "race", "hispanic", "diabetes", "smoking", "on_statin",
    "on_antihypertensive", "systolic_bp", "total_cholesterol", "hdl", "bmi", "egfr", "a1c",
    "bac_area_mm2", "last_followup_date", "death_date",
)


def outcome_columns():
    cols = []
    for ep in ALL_ENDPOINTS:
        cols += [f"{ep.column_prefix}_days", f"{ep.column_prefix}_event"]
    return cols


def cohort_frame(subjects, outcomes):
    """Analysis frame: one row per subject, subject fields plus ``<endpoint>_days/_event``."""
    data = {c: [] for c in FRAME_SUBJECT_COLUMNS}
    for s in subjects:
        for c in FRAME_SUBJECT_COLUMNS:
            data[c].append(getattr(s, c))
    frame = pd.DataFrame(data, columns=list(FRAME_SUBJECT_COLUMNS))
    for c in _OPTIONAL_FLOATS:
        frame[c] = pd.to_numeric(frame[c], errors="coerce").astype(float)
    frame["age_at_index"] = frame["age_at_index"].astype(float)
    frame["bac_area_mm2"] = frame["bac_area_mm2"].astype(float)
    for c in _BOOL_FIELDS:
        frame[c] = frame[c].astype(bool)
    for ep in ALL_ENDPOINTS:
        frame[f"{ep.column_prefix}_days"] = np.array([o[ep].duration for o in outcomes], dtype=np.int64)
        frame[f"{ep.column_prefix}_event"] = np.array([o[ep].event for o in outcomes], dtype=bool)
    return frame


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    if isinstance(value, (np.floating,)):
        return "" if np.isnan(value) else repr(float(value))
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def write_cohort_table(frame, stream, extra_columns=()):
    """Write the canonical cohort table (comma separated, fixed column order)."""
    columns = list(FRAME_SUBJECT_COLUMNS) + outcome_columns() + [c for c in extra_columns if c in frame]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    values = [frame[c].tolist() for c in columns]
    for row in zip(*values):
        writer.writerow([_fmt(v) for v in row])


def read_cohort_table(table_source):
    """Read a canonical cohort table back into ``(subjects, outcomes)``."""
    if isinstance(table_source, str):
        table_source = io.StringIO(table_source)
    reader = csv.DictReader(table_source)
    missing = [c for c in list(FRAME_SUBJECT_COLUMNS) + outcome_columns() if c not in (reader.fieldnames or [])]
    if missing:
        raise SchemaError(f"canonical cohort table missing column(s): {', '.join(missing)}")
    subjects, outcomes = [], []
    for row in reader:
        opt = {c: (float(row[c]) if row[c] else None) for c in _OPTIONAL_FLOATS}
        s = SubjectRecord(
            subject_id=row["subject_id"],
            index_date=date.fromisoformat(row["index_date"]),
            age_at_index=float(row["age_at_index"]),
            bac_area_mm2=float(row["bac_area_mm2"]),
            last_followup_date=date.fromisoformat(row["last_followup_date"]),
            race=row["race"],
            death_date=date.fromisoformat(row["death_date"]) if row["death_date"] else None,
            **{c: row[c] == "1" for c in _BOOL_FIELDS},
            **opt,
        )
        subjects.append(s)
        outcomes.append(
            {
                ep: TimeToEvent(s.subject_id, ep, int(row[f"{ep.column_prefix}_days"]), row[f"{ep.column_prefix}_event"] == "1")
                for ep in ALL_ENDPOINTS
            }
        )
    return subjects, outcomes


def frame_from_table(table_source):
    subjects, outcomes = read_cohort_table(table_source)
    return cohort_frame(subjects, outcomes)
