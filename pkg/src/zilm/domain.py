"""Shared data types, validation, and the on-disk dataset format.

A dataset directory contains ``students.csv``, ``items.csv``,
``attempts.csv`` and ``manifest.json``.  Enum values serialize as lowercase
snake-case tokens and reals as ``repr`` floats, so a save/load round trip is
bit-exact.  All values are immutable after construction.
"""

import csv
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

FORMAT_VERSION = "1"


class ZilmError(Exception):
    """Base class for package errors."""


class ConfigError(ZilmError):
    """Invalid configuration (bad file, bad field, bad flag combination)."""


class DataError(ZilmError):
    """Missing or structurally invalid data artifacts."""


class NumericError(ZilmError):
    """Non-finite values encountered during optimization."""


class Subject(Enum):
    MATHS = "maths"
    ENGLISH = "english"


class ContentType(Enum):
    LETTER = "letter"
    DIGIT = "digit"
    BOTH = "both"


class Delivery(Enum):
    READ = "read"
    LISTEN = "listen"
    BOTH = "both"


class ResponseType(Enum):
    WRITTEN = "written"
    SPEAK = "speak"
    CLICK_PICTURE = "click_picture"
    CLICK_READ = "click_read"


class Outcome(Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    NOT_ANSWERED = "not_answered"


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


NDC_NAMES = ("dyslexia", "dyscalculia", "spd")


@dataclass(frozen=True)
class NdcProfile:
    """Neurodivergent-condition flags; all 8 combinations are representable."""

    dyslexia: bool = False
    dyscalculia: bool = False
    spd: bool = False

    def count(self) -> int:
        return int(self.dyslexia) + int(self.dyscalculia) + int(self.spd)

    def names(self) -> tuple:
        """Active condition names in canonical order; empty for NT."""
        return tuple(n for n, f in zip(NDC_NAMES, self.as_tuple()) if f)

    def as_tuple(self) -> tuple:
        return (self.dyslexia, self.dyscalculia, self.spd)

    def label(self) -> str:
        return "+".join(self.names()) if self.count() else "nt"

    @classmethod
    def from_names(cls, names) -> "NdcProfile":
        bad = set(names) - set(NDC_NAMES)
        if bad:
            raise ConfigError(f"unknown NDC name(s): {sorted(bad)} (choose from {NDC_NAMES})")
        return cls(*(n in set(names) for n in NDC_NAMES))


def ndc_count(profile: NdcProfile) -> int:
    """Number of conditions carried by the profile (0..3)."""
    return profile.count()


@dataclass(frozen=True)
class StudentProfile:
    id: int
    ability: float
    ndc: NdcProfile


@dataclass(frozen=True)
class Item:
    id: int
    difficulty: float
    discrimination: float
    guessing: float
    subject: Subject
    content: ContentType
    density: float
    delivery: Delivery
    response: ResponseType


@dataclass(frozen=True)
class Attempt:
    student_id: int
    item_id: int
    outcome: Outcome
    true_pi: Optional[float] = None
    true_p: Optional[float] = None
    split: Split = Split.TRAIN

    @property
    def y(self) -> int:
        """Binary fitting label: 1 iff Correct (zero inflation merges the rest)."""
        return 1 if self.outcome is Outcome.CORRECT else 0


@dataclass(frozen=True)
class Dataset:
    students: list
    items: list
    attempts: list
    sim_config_digest: str = ""

    def n_students(self) -> int:
        return len(self.students)

    def n_items(self) -> int:
        return len(self.items)


# ---------------------------------------------------------------------------
# validation

ITEM_BOUNDS = {
    "difficulty": (-2.0, 2.0),
    "discrimination": (0.5, 4.0),
    "guessing": (0.0, 0.15),
    "density": (0.1, 1.0),
}


def validate_dataset(d: Dataset) -> list:
    """Return a list of human-readable invariant violations (empty iff valid).

    Violations are data, not failures: each entry names the offending entity
    and the rule it breaks.
    """
    out = []

    student_ids = [s.id for s in d.students]
    if student_ids != list(range(len(student_ids))):
        out.append("students: ids are not dense 0..n_students-1 in order")
    item_ids = [it.id for it in d.items]
    if item_ids != list(range(len(item_ids))):
        out.append("items: ids are not dense 0..n_items-1 in order")

    for s in d.students:
        if not _finite(s.ability):
            out.append(f"student {s.id}: ability {s.ability!r} is not finite")

    for it in d.items:
        for name, (lo, hi) in ITEM_BOUNDS.items():
            v = getattr(it, name)
            if not (_finite(v) and lo <= v <= hi):
                out.append(f"item {it.id}: {name} {v!r} outside [{lo}, {hi}]")
        if it.subject is Subject.ENGLISH and it.content is not ContentType.LETTER:
            out.append(
                f"item {it.id}: english items must have letter content, got {it.content.value}"
            )

    known_students = set(student_ids)
    known_items = set(item_ids)
    seen = {}
    with_truth = 0
    for k, a in enumerate(d.attempts):
        if a.student_id not in known_students:
            out.append(f"attempt {k}: unknown student id {a.student_id}")
            continue
        if a.item_id not in known_items:
            out.append(f"attempt {k}: unknown item id {a.item_id}")
            continue
        seen.setdefault(a.student_id, []).append(a.item_id)
        has_truth = a.true_pi is not None or a.true_p is not None
        if has_truth:
            with_truth += 1
            for nm, v in (("true_pi", a.true_pi), ("true_p", a.true_p)):
                if v is None or not (_finite(v) and 0.0 <= v <= 1.0):
                    out.append(f"attempt {k}: {nm} {v!r} is not a probability")

    if 0 < with_truth < len(d.attempts):
        out.append("attempts: true_pi/true_p present on some attempts but not all")

    counts = {sid: len(iids) for sid, iids in seen.items()}
    if counts:
        expected = max(sorted(set(counts.values())),
                       key=lambda c: list(counts.values()).count(c))
        for sid in student_ids:
            n = counts.get(sid, 0)
            if n != expected:
                out.append(f"student {sid}: expected {expected} attempts, found {n}")
        for sid, iids in seen.items():
            if len(set(iids)) != len(iids):
                dupes = sorted({i for i in iids if iids.count(i) > 1})
                out.append(f"student {sid}: repeated item(s) {dupes} within attempts")

    return out


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and v == v and abs(v) != float("inf")


# ---------------------------------------------------------------------------
# serialization

_STUDENT_FIELDS = ("id", "ability", "dyslexia", "dyscalculia", "spd")
_ITEM_FIELDS = (
    "id", "difficulty", "discrimination", "guessing",
    "subject", "content", "density", "delivery", "response",
)
_ATTEMPT_FIELDS = ("student_id", "item_id", "outcome", "true_pi", "true_p", "split")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_dataset(d: Dataset, out_dir, *, seed=None, config: dict = None,
                 notes=None, force: bool = False) -> None:
    """Write the dataset directory; refuses to overwrite unless ``force``.

    ``config`` (the generating simulation config as a dict) is embedded in
    the manifest so experiments that re-simulate the population can be run
    from the dataset directory alone.
    """
    out = Path(out_dir)
    existing = [p for p in (_dataset_paths(out)) if p.exists()]
    if existing and not force:
        raise DataError(f"refusing to overwrite existing dataset files in {out} (pass force)")
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "students.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_STUDENT_FIELDS)
        for s in d.students:
            w.writerow([_fmt(s.id), _fmt(s.ability), _fmt(s.ndc.dyslexia),
                        _fmt(s.ndc.dyscalculia), _fmt(s.ndc.spd)])

    with open(out / "items.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_ITEM_FIELDS)
        for it in d.items:
            w.writerow([_fmt(it.id), _fmt(it.difficulty), _fmt(it.discrimination),
                        _fmt(it.guessing), it.subject.value, it.content.value,
                        _fmt(it.density), it.delivery.value, it.response.value])

    with open(out / "attempts.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_ATTEMPT_FIELDS)
        for a in d.attempts:
            w.writerow([_fmt(a.student_id), _fmt(a.item_id), a.outcome.value,
                        _fmt(a.true_pi), _fmt(a.true_p), a.split.value])

    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "config_digest": d.sim_config_digest,
        "config": config,
        "counts": {
            "students": len(d.students),
            "items": len(d.items),
            "attempts": len(d.attempts),
        },
        "notes": list(notes or []),
    }
    _atomic_write_json(out / "manifest.json", manifest)


def load_manifest(in_dir) -> dict:
    path = Path(in_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest.json in {in_dir}")
    with open(path) as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"dataset format version {version!r} does not match {FORMAT_VERSION!r}")
    return manifest


def load_dataset(in_dir) -> Dataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    ind = Path(in_dir)
    manifest = load_manifest(ind)
    for name in ("students.csv", "items.csv", "attempts.csv"):
        if not (ind / name).exists():
            raise DataError(f"dataset directory {ind} is missing {name}")

    students = []
    for row in _read_rows(ind / "students.csv", _STUDENT_FIELDS):
        students.append(StudentProfile(
            id=int(row["id"]), ability=float(row["ability"]),
            ndc=NdcProfile(row["dyslexia"] == "1", row["dyscalculia"] == "1", row["spd"] == "1"),
        ))

    items = []
    for row in _read_rows(ind / "items.csv", _ITEM_FIELDS):
        items.append(Item(
            id=int(row["id"]), difficulty=float(row["difficulty"]),
            discrimination=float(row["discrimination"]), guessing=float(row["guessing"]),
            subject=Subject(row["subject"]), content=ContentType(row["content"]),
            density=float(row["density"]), delivery=Delivery(row["delivery"]),
            response=ResponseType(row["response"]),
        ))

    attempts = []
    for row in _read_rows(ind / "attempts.csv", _ATTEMPT_FIELDS):
        attempts.append(Attempt(
            student_id=int(row["student_id"]), item_id=int(row["item_id"]),
            outcome=Outcome(row["outcome"]),
            true_pi=float(row["true_pi"]) if row["true_pi"] else None,
            true_p=float(row["true_p"]) if row["true_p"] else None,
            split=Split(row["split"]),
        ))

    return Dataset(students=students, items=items, attempts=attempts,
                   sim_config_digest=manifest.get("config_digest", ""))


def _read_rows(path, expected_fields):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != expected_fields:
            raise DataError(f"{path}: header {reader.fieldnames} != expected {list(expected_fields)}")
        yield from reader


def _dataset_paths(out: Path):
    return [out / n for n in ("students.csv", "items.csv", "attempts.csv", "manifest.json")]


def _atomic_write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
