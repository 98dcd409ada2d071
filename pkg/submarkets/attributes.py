"""Per-user attributes and directed contact logs."""

import csv
import io
import math
import re
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import DataError, ParseError

SEXES = ("M", "F")
ETHNICITIES = ("Asian", "Black", "Hispanic", "White", "Other")
MIN_AGE, MAX_AGE = 18.0, 100.0

_ETHNICITY_SPLIT = re.compile(r"[;,/|+]")
_TRUE = {"1", "true", "yes", "y"}
_FALSE = {"0", "false", "no", "n"}


def normalize_sex(value: str) -> str:
    v = value.strip().upper()
    if v in ("M", "MALE"):
        return "M"
    if v in ("F", "FEMALE"):
        return "F"
    raise DataError(f"unknown sex {value!r}")


def normalize_ethnicity(value: str) -> str:
    """Map a self-reported ethnicity onto the five categories.

    Several distinct categories listed together count as Other; so does an
    empty value.
    """
    parts = {p.strip().lower() for p in _ETHNICITY_SPLIT.split(value) if p.strip()}
    if not parts:
        return "Other"
    known = {e.lower(): e for e in ETHNICITIES}
    unknown = parts - known.keys()
    if unknown:
        raise DataError(f"unknown ethnicity {sorted(unknown)[0]!r}")
    if len(parts) > 1:
        return "Other"
    return known[parts.pop()]


@dataclass(frozen=True)
class Attributes:
    sex: str
    age: float | None
    ethnicity: str = "Other"
    region: str | None = None

    def __post_init__(self):
        if self.sex not in SEXES:
            raise DataError(f"sex must be one of {SEXES}, got {self.sex!r}")
        if self.age is not None and not MIN_AGE <= self.age <= MAX_AGE:
            raise DataError(f"age {self.age} outside [{MIN_AGE:g}, {MAX_AGE:g}]")
        if self.ethnicity not in ETHNICITIES:
            raise DataError(f"unknown ethnicity {self.ethnicity!r}")


class AttributeTable:
    """Attributes keyed by node identifier, in insertion order."""

    COLUMNS = ("node_id", "sex", "age", "ethnicity", "region")

    def __init__(self, rows: dict[str, Attributes] | None = None):
        self.rows: dict[str, Attributes] = dict(rows or {})

    def __getitem__(self, node_id: str) -> Attributes:
        return self.rows[node_id]

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.rows

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[str]:
        return iter(self.rows)

    def require(self, node_ids: Iterable[str]) -> list[Attributes]:
        """Attributes for each id in order; DataError naming the first missing one."""
        out = []
        for node_id in node_ids:
            if node_id not in self.rows:
                raise DataError(f"no attributes for node {node_id!r}")
            out.append(self.rows[node_id])
        return out

    @classmethod
    def from_csv(cls, text: str) -> "AttributeTable":
        """Read `node_id,sex,age[,ethnicity][,region]` with a header row."""
        reader = csv.DictReader(io.StringIO(text))
        fields = reader.fieldnames or []
        for name in ("node_id", "sex", "age"):
            if name not in fields:
                raise DataError(f"attribute file lacks column {name!r}")
        rows: dict[str, Attributes] = {}
        for line_no, record in enumerate(reader, 2):
            node_id = (record.get("node_id") or "").strip()
            if not node_id:
                raise ParseError(line_no, "empty node identifier")
            if node_id in rows:
                raise ParseError(line_no, f"duplicate node {node_id!r}")
            try:
                raw_age = (record.get("age") or "").strip()
                age = float(raw_age) if raw_age else None
                if age is not None and not math.isfinite(age):
                    raise DataError(f"non-finite age {raw_age!r}")
                rows[node_id] = Attributes(
                    sex=normalize_sex(record.get("sex") or ""),
                    age=age,
                    ethnicity=normalize_ethnicity(record.get("ethnicity") or ""),
                    region=(record.get("region") or "").strip() or None,
                )
            except ValueError as e:
                raise ParseError(line_no, str(e)) from None
        return cls(rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for node_id, a in self.rows.items():
            age = "" if a.age is None else repr(float(a.age))
            writer.writerow([node_id, a.sex, age, a.ethnicity, a.region or ""])
        return buf.getvalue()


@dataclass(frozen=True)
class Contact:
    sender: str
    receiver: str
    replied: bool


@dataclass(frozen=True)
class ContactLog:
    """Directed first contacts; at most one record per ordered pair."""

    records: tuple[Contact, ...]

    @classmethod
    def from_records(cls, records: Iterable[Contact]) -> "ContactLog":
        seen: set[tuple[str, str]] = set()
        out = []
        for r in records:
            if r.sender == r.receiver:
                raise DataError(f"contact from {r.sender!r} to itself")
            key = (r.sender, r.receiver)
            if key in seen:
                raise DataError(f"duplicate contact {r.sender!r} -> {r.receiver!r}")
            seen.add(key)
            out.append(r)
        return cls(tuple(out))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Contact]:
        return iter(self.records)

    @classmethod
    def from_csv(cls, text: str) -> "ContactLog":
        """Read `sender,receiver,replied` with a header row."""
        reader = csv.DictReader(io.StringIO(text))
        for name in ("sender", "receiver", "replied"):
            if name not in (reader.fieldnames or []):
                raise DataError(f"contact file lacks column {name!r}")
        records = []
        for line_no, row in enumerate(reader, 2):
            sender = (row.get("sender") or "").strip()
            receiver = (row.get("receiver") or "").strip()
            if not sender or not receiver:
                raise ParseError(line_no, "empty node identifier")
            flag = (row.get("replied") or "").strip().lower()
            if flag not in _TRUE | _FALSE:
                raise ParseError(line_no, f"replied must be 0 or 1, got {flag!r}")
            records.append(Contact(sender, receiver, flag in _TRUE))
        try:
            return cls.from_records(records)
        except DataError as e:
            raise DataError(f"contact file: {e}") from None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sender", "receiver", "replied"])
        for r in self.records:
            writer.writerow([r.sender, r.receiver, int(r.replied)])
        return buf.getvalue()
