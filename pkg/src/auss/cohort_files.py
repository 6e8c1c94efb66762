"""Cohort interchange files: students.csv, resources.csv, events.jsonl,
assessments.csv, and ground_truth.json.

Column and field names are frozen (documented in FORMATS.md); unknown
event fields and malformed values are rejected with the offending line.
Floats are written with repr so a round-trip reproduces them exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping

from .domain import (
    AssessmentRecord,
    Cohort,
    EngagementEvent,
    EventKind,
    GroundTruth,
    LearningResource,
    StudentRecord,
)
from .errors import CohortFormatError

STUDENTS_FILE = "students.csv"
RESOURCES_FILE = "resources.csv"
EVENTS_FILE = "events.jsonl"
ASSESSMENTS_FILE = "assessments.csv"
GROUND_TRUTH_FILE = "ground_truth.json"

_EVENT_FIELDS = {"student_id", "tick", "kind", "value", "resource_id"}
_ASSESSMENT_COLUMNS = ["student_id", "item_id", "response", "score"]
_RESOURCE_COLUMNS = ["resource_id", "topic_tag", "difficulty"]


def write_cohort(cohort: Cohort, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    feature_names = sorted({name for s in cohort.students for name in s.static_features})
    with (directory / STUDENTS_FILE).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "enrollment_tick", *feature_names])
        for student in cohort.students:
            row = [student.student_id, str(student.enrollment_tick)]
            for name in feature_names:
                value = student.static_features.get(name)
                row.append("" if value is None else repr(float(value)))
            writer.writerow(row)

    with (directory / RESOURCES_FILE).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RESOURCE_COLUMNS)
        for resource in cohort.resources:
            writer.writerow([resource.resource_id, resource.topic_tag, repr(resource.difficulty)])

    with (directory / EVENTS_FILE).open("w", encoding="utf-8", newline="\n") as fh:
        for event in cohort.events:
            fh.write(
                json.dumps(
                    {
                        "student_id": event.student_id,
                        "tick": event.tick,
                        "kind": event.kind.value,
                        "value": event.value,
                        "resource_id": event.resource_id,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )

    with (directory / ASSESSMENTS_FILE).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_ASSESSMENT_COLUMNS)
        for assessment in cohort.assessments:
            writer.writerow(
                [
                    assessment.student_id,
                    assessment.item_id,
                    assessment.response,
                    "" if assessment.score is None else repr(assessment.score),
                ]
            )

    if cohort.ground_truth is not None:
        write_ground_truth(cohort.ground_truth, directory / GROUND_TRUTH_FILE)


def write_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    data = {
        "abilities": {sid: value for sid, value in truth.abilities.items()},
        "preference_rankings": {sid: list(r) for sid, r in truth.preference_rankings.items()},
        "dropout_ticks": {sid: tick for sid, tick in truth.dropout_ticks.items()},
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")


def read_ground_truth(path: str | Path) -> GroundTruth:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CohortFormatError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from exc
    unknown = set(data) - {"abilities", "preference_rankings", "dropout_ticks"}
    if unknown:
        raise CohortFormatError(f"unknown ground-truth keys {sorted(unknown)}", path=str(path))
    return GroundTruth(
        abilities={sid: float(v) for sid, v in data["abilities"].items()},
        preference_rankings={
            sid: tuple(r) for sid, r in data["preference_rankings"].items()
        },
        dropout_ticks={
            sid: (None if t is None else int(t)) for sid, t in data["dropout_ticks"].items()
        },
    )


def _parse_float(text: str, *, path: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise CohortFormatError(
            f"column {column!r}: {text!r} is not a number", path=path, line=line
        ) from exc
    if not math.isfinite(value):
        raise CohortFormatError(f"column {column!r}: {text!r} is not finite", path=path, line=line)
    return value


def read_cohort(directory: str | Path) -> Cohort:
    directory = Path(directory)
    for required in (STUDENTS_FILE, RESOURCES_FILE, EVENTS_FILE, ASSESSMENTS_FILE):
        if not (directory / required).exists():
            raise CohortFormatError(f"missing required file {required}", path=str(directory))

    students = []
    students_path = directory / STUDENTS_FILE
    with students_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["student_id", "enrollment_tick"]:
            raise CohortFormatError(
                "header must start with student_id,enrollment_tick",
                path=str(students_path),
                line=1,
            )
        feature_names = header[2:]
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CohortFormatError(
                    f"expected {len(header)} columns, got {len(row)}",
                    path=str(students_path),
                    line=line_no,
                )
            features = {}
            for name, text in zip(feature_names, row[2:]):
                if text != "":
                    features[name] = _parse_float(
                        text, path=str(students_path), line=line_no, column=name
                    )
            try:
                enrollment = int(row[1])
            except ValueError as exc:
                raise CohortFormatError(
                    f"enrollment_tick {row[1]!r} is not an integer",
                    path=str(students_path),
                    line=line_no,
                ) from exc
            students.append(StudentRecord(row[0], features, enrollment))

    resources = []
    resources_path = directory / RESOURCES_FILE
    with resources_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _RESOURCE_COLUMNS:
            raise CohortFormatError(
                f"header must be {','.join(_RESOURCE_COLUMNS)}", path=str(resources_path), line=1
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise CohortFormatError(
                    f"expected 3 columns, got {len(row)}", path=str(resources_path), line=line_no
                )
            resources.append(
                LearningResource(
                    row[0],
                    row[1],
                    _parse_float(row[2], path=str(resources_path), line=line_no, column="difficulty"),
                )
            )

    events = []
    events_path = directory / EVENTS_FILE
    with events_path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CohortFormatError(
                    f"invalid JSON: {exc.msg}", path=str(events_path), line=line_no
                ) from exc
            if set(data) != _EVENT_FIELDS:
                unexpected = sorted(set(data) - _EVENT_FIELDS)
                missing = sorted(_EVENT_FIELDS - set(data))
                parts = []
                if unexpected:
                    parts.append(f"unknown fields {unexpected}")
                if missing:
                    parts.append(f"missing fields {missing}")
                raise CohortFormatError("; ".join(parts), path=str(events_path), line=line_no)
            try:
                kind = EventKind(data["kind"])
            except ValueError as exc:
                raise CohortFormatError(
                    f"unknown event kind {data['kind']!r}", path=str(events_path), line=line_no
                ) from exc
            events.append(
                EngagementEvent(
                    student_id=str(data["student_id"]),
                    tick=int(data["tick"]),
                    kind=kind,
                    value=float(data["value"]),
                    resource_id=None if data["resource_id"] is None else str(data["resource_id"]),
                )
            )

    assessments = []
    assessments_path = directory / ASSESSMENTS_FILE
    with assessments_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _ASSESSMENT_COLUMNS:
            raise CohortFormatError(
                f"header must be {','.join(_ASSESSMENT_COLUMNS)}",
                path=str(assessments_path),
                line=1,
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise CohortFormatError(
                    f"expected 4 columns, got {len(row)}",
                    path=str(assessments_path),
                    line=line_no,
                )
            score = None
            if row[3] != "":
                score = _parse_float(row[3], path=str(assessments_path), line=line_no, column="score")
            assessments.append(AssessmentRecord(row[0], row[1], row[2], score))

    truth = None
    truth_path = directory / GROUND_TRUTH_FILE
    if truth_path.exists():
        truth = read_ground_truth(truth_path)

    return Cohort(
        students=tuple(students),
        events=tuple(events),
        assessments=tuple(assessments),
        resources=tuple(resources),
        ground_truth=truth,
    )
