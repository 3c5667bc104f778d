"""Core domain types plus loading, validation, and persistence of PoC corpora.

A corpus is an immutable collection of PoC reports. Pipeline stages never
mutate a corpus in place; they produce a new one. All input and persisted
files are UTF-8 JSON Lines.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .cveid import normalize_cve_id

logger = logging.getLogger(__name__)

CORPUS_FORMAT = "poc-corpus"
CORPUS_VERSION = 1

# Slot identity is fixed: exactly these eight aspects, in this order.
ASPECT_SLOTS = (
    "trigger_step",
    "verification_oracle",
    "test_platform",
    "software_version",
    "title",
    "author",
    "publish_time",
    "reference",
)
EXPLOIT_SLOTS = frozenset(ASPECT_SLOTS[:4])
BASIC_SLOTS = frozenset(ASPECT_SLOTS[4:])

# Interchange-record fields that map straight into aspect slots at ingestion.
_RECORD_SLOT_FIELDS = {
    "title": "title",
    "author": "author",
    "publish_time": "publish_time",
    "platform": "test_platform",
    "version": "software_version",
}


class CorpusError(Exception):
    """Fatal corpus-level failure (unreadable file, version mismatch, broken invariant)."""


class SourceName(str, Enum):
    EXPLOITDB = "ExploitDB"
    PACKETSTORM = "PacketStorm"
    SEEBUG = "Seebug"
    CXSECURITY = "CXSecurity"
    OTHER = "Other"


_SOURCE_ALIASES = {
    "exploitdb": SourceName.EXPLOITDB,
    "exploit-db": SourceName.EXPLOITDB,
    "packetstorm": SourceName.PACKETSTORM,
    "packet storm": SourceName.PACKETSTORM,
    "packet_storm": SourceName.PACKETSTORM,
    "seebug": SourceName.SEEBUG,
    "cxsecurity": SourceName.CXSECURITY,
}


@dataclass(frozen=True)
class SourceId:
    """One of the four supported report platforms, or a labelled extra source."""

    name: SourceName
    label: str = ""

    def __post_init__(self) -> None:
        if self.name is SourceName.OTHER and not self.label.strip():
            raise ValueError("Other source requires a non-empty label")
        if self.name is not SourceName.OTHER and self.label:
            raise ValueError(f"label is only valid for Other sources, got {self.label!r}")

    @classmethod
    def parse(cls, text: str) -> "SourceId":
        known = _SOURCE_ALIASES.get(text.strip().lower())
        if known is not None:
            return cls(known)
        return cls(SourceName.OTHER, label=text.strip())

    def display(self) -> str:
        return self.label if self.name is SourceName.OTHER else self.name.value


class Kind(str, Enum):
    CODE = "code"
    TEXT = "text"
    OTHER = "other"
    UNCLASSIFIED = "unclassified"


class LanguageId(str, Enum):
    """The nine languages recognized in code-based reports. Order breaks ties."""

    C_CPP = "c_cpp"
    HTML = "html"
    JAVA = "java"
    JAVASCRIPT = "javascript"
    PERL = "perl"
    PHP = "php"
    PYTHON = "python"
    RUBY = "ruby"
    SHELL = "shell"


@dataclass(frozen=True)
class ContentKind:
    kind: Kind
    lang: LanguageId | None = None

    def __post_init__(self) -> None:
        if (self.kind is Kind.CODE) != (self.lang is not None):
            raise ValueError("lang must be set exactly when kind is code")

    @property
    def is_code(self) -> bool:
        return self.kind is Kind.CODE

    @property
    def is_text(self) -> bool:
        return self.kind is Kind.TEXT

    def encode(self) -> str:
        if self.kind is Kind.CODE:
            assert self.lang is not None
            return f"code:{self.lang.value}"
        return self.kind.value

    @classmethod
    def decode(cls, text: str) -> "ContentKind":
        if text.startswith("code:"):
            return cls(Kind.CODE, LanguageId(text.split(":", 1)[1]))
        return cls(Kind(text))


UNCLASSIFIED = ContentKind(Kind.UNCLASSIFIED)
TEXT = ContentKind(Kind.TEXT)
OTHER_KIND = ContentKind(Kind.OTHER)


def code_kind(lang: LanguageId) -> ContentKind:
    return ContentKind(Kind.CODE, lang)


# --- provenance ------------------------------------------------------------


@dataclass(frozen=True)
class Original:
    """Value present in (or extracted verbatim from) the source record."""

    def encode(self) -> dict:
        return {"kind": "original"}


@dataclass(frozen=True)
class FromCve:
    """Value completed from a linked CVE entry."""

    cve_id: str

    def encode(self) -> dict:
        return {"kind": "from_cve", "cve_id": self.cve_id}


@dataclass(frozen=True)
class FromPoc:
    """Value donated by a related PoC report.

    ``basis`` records how the donor was linked: ``shared_cve:<CVE-ID>`` or
    ``classifier``.
    """

    donor_id: str
    similarity: float
    basis: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError(f"similarity out of range: {self.similarity}")

    def encode(self) -> dict:
        return {
            "kind": "from_poc",
            "donor_id": self.donor_id,
            "similarity": self.similarity,
            "basis": self.basis,
        }


Provenance = Original | FromCve | FromPoc

ORIGINAL = Original()


def decode_provenance(data: dict) -> Provenance:
    kind = data.get("kind")
    if kind == "original":
        return ORIGINAL
    if kind == "from_cve":
        return FromCve(data["cve_id"])
    if kind == "from_poc":
        return FromPoc(data["donor_id"], data["similarity"], data["basis"])
    raise CorpusError(f"unknown provenance kind: {kind!r}")


# --- aspects ---------------------------------------------------------------


def _dedup_key(text: str) -> str:
    return text.strip().lower()


@dataclass(frozen=True)
class AspectValue:
    """One value in an aspect slot, with its origin."""

    text: str
    provenance: Provenance = ORIGINAL

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("aspect value text is empty after trimming")

    def encode(self) -> dict:
        return {"text": self.text, "provenance": self.provenance.encode()}

    @classmethod
    def decode(cls, data: dict) -> "AspectValue":
        return cls(data["text"], decode_provenance(data["provenance"]))


@dataclass(frozen=True)
class AspectSet:
    """The eight key-aspect slots of a report.

    An empty tuple means the aspect is missing. Within one slot no two values
    share the same case-insensitively trimmed text; :meth:`with_added`
    maintains that invariant, so build aspect sets through it.
    """

    trigger_step: tuple[AspectValue, ...] = ()
    verification_oracle: tuple[AspectValue, ...] = ()
    test_platform: tuple[AspectValue, ...] = ()
    software_version: tuple[AspectValue, ...] = ()
    title: tuple[AspectValue, ...] = ()
    author: tuple[AspectValue, ...] = ()
    publish_time: tuple[AspectValue, ...] = ()
    reference: tuple[AspectValue, ...] = ()

    def values(self, slot: str) -> tuple[AspectValue, ...]:
        if slot not in ASPECT_SLOTS:
            raise KeyError(slot)
        return getattr(self, slot)

    def texts(self, slot: str) -> list[str]:
        return [v.text for v in self.values(slot)]

    def with_added(self, slot: str, values: Iterable[AspectValue]) -> "AspectSet":
        """Append values to a slot, skipping case-insensitive trim duplicates."""
        current = list(self.values(slot))
        seen = {_dedup_key(v.text) for v in current}
        for value in values:
            key = _dedup_key(value.text)
            if key in seen:
                continue
            seen.add(key)
            current.append(value)
        return replace(self, **{slot: tuple(current)})

    def filled_slots(self) -> list[str]:
        return [slot for slot in ASPECT_SLOTS if self.values(slot)]

    def original_values(self, slot: str) -> tuple[AspectValue, ...]:
        return tuple(v for v in self.values(slot) if isinstance(v.provenance, Original))

    def validate(self) -> None:
        for slot in ASPECT_SLOTS:
            keys = [_dedup_key(v.text) for v in self.values(slot)]
            if len(keys) != len(set(keys)):
                raise CorpusError(f"duplicate values in slot {slot}")

    def encode(self) -> dict:
        return {
            slot: [v.encode() for v in self.values(slot)]
            for slot in ASPECT_SLOTS
            if self.values(slot)
        }

    @classmethod
    def decode(cls, data: dict) -> "AspectSet":
        fields = {}
        for slot, values in data.items():
            if slot not in ASPECT_SLOTS:
                raise CorpusError(f"unknown aspect slot: {slot!r}")
            fields[slot] = tuple(AspectValue.decode(v) for v in values)
        return cls(**fields)


def aspect_values(texts: Iterable[str], provenance: Provenance = ORIGINAL) -> list[AspectValue]:
    """Build aspect values from raw strings, trimming and dropping empties."""
    out = []
    for text in texts:
        trimmed = text.strip()
        if trimmed:
            out.append(AspectValue(trimmed, provenance))
    return out


# --- reports and CVE entries ------------------------------------------------


@dataclass(frozen=True)
class PocReport:
    """A single PoC document and everything derived from it."""

    id: str
    source: SourceId
    raw_content: str
    content_kind: ContentKind = UNCLASSIFIED
    cve_ids: tuple[str, ...] = ()
    aspects: AspectSet = field(default_factory=AspectSet)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("report id is empty")
        for cve_id in self.cve_ids:
            if normalize_cve_id(cve_id) != cve_id:
                raise ValueError(f"non-canonical CVE id on report {self.id}: {cve_id!r}")

    def encode(self) -> dict:
        return {
            "id": self.id,
            "source": self.source.display(),
            "content": self.raw_content,
            "content_kind": self.content_kind.encode(),
            "cve_ids": list(self.cve_ids),
            "aspects": self.aspects.encode(),
        }

    @classmethod
    def decode(cls, data: dict) -> "PocReport":
        return cls(
            id=data["id"],
            source=SourceId.parse(data["source"]),
            raw_content=data["content"],
            content_kind=ContentKind.decode(data["content_kind"]),
            cve_ids=tuple(data["cve_ids"]),
            aspects=AspectSet.decode(data["aspects"]),
        )


@dataclass(frozen=True)
class CveProduct:
    name: str
    versions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("product name is empty")


@dataclass(frozen=True)
class CveEntry:
    """A CVE record carrying affected products/versions and platforms."""

    cve_id: str
    products: tuple[CveProduct, ...]
    platforms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if normalize_cve_id(self.cve_id) != self.cve_id:
            raise ValueError(f"non-canonical CVE id: {self.cve_id!r}")
        if not self.products:
            raise ValueError(f"{self.cve_id}: products list is empty")

    def all_versions(self) -> list[str]:
        """Every version in the entry, product order then version order, deduplicated."""
        seen: dict[str, None] = {}
        for product in self.products:
            for version in product.versions:
                seen.setdefault(version, None)
        return list(seen)


class Corpus:
    """Immutable, id-indexed collection of reports."""

    __slots__ = ("reports", "_by_id")

    def __init__(self, reports: Iterable[PocReport]):
        self.reports: tuple[PocReport, ...] = tuple(reports)
        self._by_id: dict[str, PocReport] = {}
        for report in self.reports:
            if report.id in self._by_id:
                raise CorpusError(f"duplicate report id in corpus: {report.id}")
            self._by_id[report.id] = report

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self) -> Iterator[PocReport]:
        return iter(self.reports)

    def __contains__(self, report_id: str) -> bool:
        return report_id in self._by_id

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.reports == other.reports

    def get(self, report_id: str) -> PocReport:
        try:
            return self._by_id[report_id]
        except KeyError:
            raise KeyError(f"unknown report id: {report_id}") from None

    def with_replaced(self, *updated: PocReport) -> "Corpus":
        """New corpus with the given reports substituted by id, order preserved."""
        changes = {r.id: r for r in updated}
        for report_id in changes:
            if report_id not in self._by_id:
                raise KeyError(f"unknown report id: {report_id}")
        return Corpus(changes.get(r.id, r) for r in self.reports)


# --- ingestion ---------------------------------------------------------------


def _read_utf8_lines(path: Path) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    return text.splitlines()


def _record_error(record: dict) -> str | None:
    for key in ("id", "source", "content"):
        if key not in record:
            return f"missing required field {key!r}"
        if not isinstance(record[key], str):
            return f"field {key!r} is not a string"
    if not record["id"].strip():
        return "empty id"
    return None


def ingest_reports(path: str | Path, source: SourceId) -> list[PocReport]:
    """Load one source's report file into unclassified reports.

    Pre-extracted optional fields (title, author, publish_time, platform,
    version, references, cve_ids) are mapped into aspect slots with Original
    provenance. Malformed lines are skipped with a warning naming the line
    number; duplicate ids within the file are rejected the same way.
    """
    path = Path(path)
    reports: list[PocReport] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(_read_utf8_lines(path), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            logger.warning("%s:%d: skipping malformed record: %s", path, lineno, exc)
            continue
        if not isinstance(record, dict):
            logger.warning("%s:%d: skipping non-object record", path, lineno)
            continue
        error = _record_error(record)
        if error is not None:
            logger.warning("%s:%d: skipping record: %s", path, lineno, error)
            continue
        record_source = SourceId.parse(record["source"])
        if record_source != source:
            logger.warning(
                "%s:%d: skipping record %r: source %r does not match declared %r",
                path, lineno, record["id"], record["source"], source.display(),
            )
            continue
        if record["id"] in seen_ids:
            logger.warning("%s:%d: skipping duplicate report id %r", path, lineno, record["id"])
            continue

        aspects = AspectSet()
        for field_name, slot in _RECORD_SLOT_FIELDS.items():
            raw = record.get(field_name)
            if raw is None:
                continue
            values = raw if isinstance(raw, list) else [raw]
            aspects = aspects.with_added(slot, aspect_values(str(v) for v in values))
        references = record.get("references") or []
        aspects = aspects.with_added("reference", aspect_values(str(v) for v in references))

        cve_ids: list[str] = []
        for raw_id in record.get("cve_ids") or []:
            normalized = normalize_cve_id(str(raw_id))
            if normalized is None:
                logger.warning(
                    "%s:%d: dropping malformed CVE id %r on report %r",
                    path, lineno, raw_id, record["id"],
                )
            elif normalized not in cve_ids:
                cve_ids.append(normalized)

        seen_ids.add(record["id"])
        reports.append(
            PocReport(
                id=record["id"],
                source=source,
                raw_content=record["content"],
                cve_ids=tuple(cve_ids),
                aspects=aspects,
            )
        )
    return reports


def build_corpus(report_groups: Iterable[Iterable[PocReport]]) -> Corpus:
    """Merge per-source report lists; later duplicates of an id are dropped with a warning."""
    merged: list[PocReport] = []
    seen: set[str] = set()
    for group in report_groups:
        for report in group:
            if report.id in seen:
                logger.warning("dropping duplicate report id across files: %r", report.id)
                continue
            seen.add(report.id)
            merged.append(report)
    return Corpus(merged)


def ingest_cve_entries(path: str | Path) -> dict[str, CveEntry]:
    """Load a CVE dump file into a map keyed by canonical CVE id.

    Lines repeating a CVE id are merged by order-preserving set union of
    products, versions, and platforms. Entries with no products or a
    malformed id are skipped with a warning.
    """
    path = Path(path)
    # cve_id -> (product key -> (display name, version order-set)), platform order-set
    products: dict[str, dict[str, tuple[str, dict[str, None]]]] = {}
    platforms: dict[str, dict[str, None]] = {}
    order: dict[str, None] = {}
    for lineno, line in enumerate(_read_utf8_lines(path), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            logger.warning("%s:%d: skipping malformed CVE record: %s", path, lineno, exc)
            continue
        cve_id = normalize_cve_id(str(record.get("cve_id", "")))
        if cve_id is None:
            logger.warning(
                "%s:%d: skipping entry with malformed cve_id %r",
                path, lineno, record.get("cve_id"),
            )
            continue
        raw_products = [
            p for p in record.get("products") or []
            if isinstance(p, dict) and str(p.get("name", "")).strip()
        ]
        if not raw_products:
            logger.warning("%s:%d: skipping %s: empty products list", path, lineno, cve_id)
            continue
        order.setdefault(cve_id, None)
        by_name = products.setdefault(cve_id, {})
        for product in raw_products:
            name = str(product["name"]).strip()
            display, versions = by_name.setdefault(name.lower(), (name, {}))
            for version in product.get("versions") or []:
                versions.setdefault(str(version).strip(), None)
        plats = platforms.setdefault(cve_id, {})
        for platform in record.get("platforms") or []:
            text = str(platform).strip()
            if text:
                plats.setdefault(text, None)

    entries: dict[str, CveEntry] = {}
    for cve_id in order:
        entry_products = tuple(
            CveProduct(display, tuple(v for v in versions if v))
            for display, versions in products[cve_id].values()
        )
        entries[cve_id] = CveEntry(cve_id, entry_products, tuple(platforms[cve_id]))
    return entries


# --- persistence -------------------------------------------------------------


def _json_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus to a versioned container file (canonical serialization)."""
    for report in corpus:
        report.aspects.validate()
    path = Path(path)
    lines = [_json_line({"format": CORPUS_FORMAT, "version": CORPUS_VERSION})]
    lines.extend(_json_line(report.encode()) for report in corpus)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path: str | Path) -> Corpus:
    """Load a corpus saved by :func:`save_corpus`, checking the format version."""
    path = Path(path)
    lines = _read_utf8_lines(path)
    if not lines:
        raise CorpusError(f"{path}: empty corpus file, expected a format header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: unreadable header line: {exc}") from exc
    if header.get("format") != CORPUS_FORMAT or header.get("version") != CORPUS_VERSION:
        raise CorpusError(
            f"{path}: file declares format {header.get('format')!r} version "
            f"{header.get('version')!r}, this build reads {CORPUS_FORMAT!r} "
            f"version {CORPUS_VERSION!r}"
        )
    reports = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            reports.append(PocReport.decode(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: broken corpus record: {exc}") from exc
    corpus = Corpus(reports)
    for report in corpus:
        report.aspects.validate()
    return corpus


def save_cve_db(entries: dict[str, CveEntry], path: str | Path) -> None:
    """Persist a normalized CVE map in the same shape the ingest format uses."""
    lines = []
    for cve_id in sorted(entries):
        entry = entries[cve_id]
        lines.append(
            _json_line(
                {
                    "cve_id": entry.cve_id,
                    "products": [
                        {"name": p.name, "versions": list(p.versions)} for p in entry.products
                    ],
                    "platforms": list(entry.platforms),
                }
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
