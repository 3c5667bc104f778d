"""Aspect extraction: rule-based matching, CVE-id resolution, and the
pluggable structured extractor with its pattern-based default.

All extracted values are verbatim substrings of the document (modulo
whitespace trimming); nothing is synthesized at this stage.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .corpus import (
    ASPECT_SLOTS,
    AspectValue,
    Corpus,
    Kind,
    PocReport,
    aspect_values,
)
from .cveid import CVE_PATTERN, find_cve_ids, normalize_cve_id

__all__ = [
    "CVE_PATTERN",
    "find_cve_ids",
    "normalize_cve_id",
    "RuleSet",
    "DEFAULT_RULES",
    "NER_SLOTS",
    "SlotSpan",
    "StructuredExtraction",
    "StructuredExtractor",
    "DefaultStructuredExtractor",
    "ExternalStructuredExtractor",
    "SlotScore",
    "ExtractionScore",
    "ExtractionError",
    "extract_trigger_step",
    "extract_verification_oracle",
    "extract_references",
    "extract_cve_ids",
    "extract_structured_aspects",
    "extract_all",
    "evaluate_extraction",
    "load_gold_annotations",
]

logger = logging.getLogger(__name__)

# Slots the structured extractor is responsible for.
NER_SLOTS = ("test_platform", "software_version", "title", "author", "publish_time")

_TRAILING_PUNCT = ".,;:!?'\"`)]}>"


class ExtractionError(Exception):
    """Fatal extraction failure (contract violation, evaluation id mismatch)."""


@dataclass(frozen=True)
class RuleSet:
    """Keyword and pattern inventory for the rule-based extractors."""

    trigger_keywords: tuple[str, ...] = (
        "steps",
        "reproduce",
        # the historical misspelling appears verbatim in real reports
        "complie with",
        "compile with",
    )
    oracle_keywords: tuple[str, ...] = ("expected output", "poc output")
    step_list_patterns: tuple[str, ...] = (
        r"^[ \t]{0,8}(\d{1,3})[.)][ \t]+",
        r"^[ \t]{0,8}([a-z])\)[ \t]+",
        r"^[ \t]{0,8}[Ss][Tt][Ee][Pp][ \t]+(\d{1,3})[ \t]*[:.)][ \t]*",
    )
    url_pattern: str = r"\b(?:https?|ftp)://[^\s<>\"']+"

    def __post_init__(self) -> None:
        if not self.trigger_keywords or not self.oracle_keywords:
            raise ValueError("keyword lists must be non-empty")
        if not self.step_list_patterns:
            raise ValueError("step_list_patterns must be non-empty")


DEFAULT_RULES = RuleSet()


def _keyword_regexes(keywords: Sequence[str]) -> list[re.Pattern[str]]:
    return [
        re.compile(r"\b" + re.escape(kw) + r"\b", re.IGNORECASE) for kw in keywords
    ]


def _indent_of(line: str) -> int:
    return len(line) - len(line.lstrip(" \t"))


@dataclass(frozen=True)
class _StepItem:
    lineno: int
    pattern_index: int
    marker: str
    indent: int


def _sequence_value(marker: str) -> int:
    return int(marker) if marker.isdigit() else ord(marker)


def _find_step_items(lines: list[str], patterns: list[re.Pattern[str]]) -> list[_StepItem]:
    items = []
    for lineno, line in enumerate(lines):
        for index, pattern in enumerate(patterns):
            m = pattern.match(line)
            if m:
                items.append(_StepItem(lineno, index, m.group(1), _indent_of(line)))
                break
    return items


def _find_step_runs(
    lines: list[str], patterns: list[re.Pattern[str]]
) -> list[tuple[int, int, int]]:
    """Maximal runs of consecutively-numbered items: (first_line, last_line, n_items).

    last_line includes continuation lines indented past the item markers.
    Between items, blank lines and indented continuations are tolerated up to
    a small gap; any other line breaks the run.
    """
    items = _find_step_items(lines, patterns)
    runs: list[tuple[int, int, int]] = []
    i = 0
    while i < len(items):
        run = [items[i]]
        j = i + 1
        while j < len(items):
            prev, nxt = run[-1], items[j]
            if (
                nxt.pattern_index == prev.pattern_index
                and _sequence_value(nxt.marker) == _sequence_value(prev.marker) + 1
                and nxt.lineno - prev.lineno <= 5
                and all(
                    not lines[k].strip() or _indent_of(lines[k]) > prev.indent
                    for k in range(prev.lineno + 1, nxt.lineno)
                )
            ):
                run.append(nxt)
                j += 1
            else:
                break
        last = run[-1]
        end = last.lineno
        while (
            end + 1 < len(lines)
            and lines[end + 1].strip()
            and _indent_of(lines[end + 1]) > last.indent
        ):
            end += 1
        runs.append((run[0].lineno, end, len(run)))
        i = j
    return runs


def _resolve_regions(candidates: list[tuple[int, int]], lines: list[str]) -> list[str]:
    """Non-overlapping selection, longest region first, emitted in document order."""
    chosen: list[tuple[int, int]] = []
    for start, end in sorted(candidates, key=lambda c: (c[0] - c[1], c[0])):
        if all(end < s or start > e for s, e in chosen):
            chosen.append((start, end))
    chosen.sort()
    return ["\n".join(lines[s : e + 1]).strip() for s, e in chosen]


def extract_trigger_step(content: str, rules: RuleSet = DEFAULT_RULES) -> list[str]:
    """Find trigger-step regions: keyword lines with their enumerated block,
    and standalone step lists of at least two consecutive items.
    """
    lines = content.split("\n")
    patterns = [re.compile(p) for p in rules.step_list_patterns]
    keyword_res = _keyword_regexes(rules.trigger_keywords)
    runs = _find_step_runs(lines, patterns)
    candidates: list[tuple[int, int]] = [
        (first, last) for first, last, n in runs if n >= 2
    ]
    for lineno, line in enumerate(lines):
        if not any(r.search(line) for r in keyword_res):
            continue
        end = lineno
        # a list starting just below the keyword line belongs to it
        for first, last, _n in runs:
            if lineno < first <= lineno + 3 and all(
                not lines[k].strip() for k in range(lineno + 1, first)
            ):
                end = last
                break
        candidates.append((lineno, end))
    return _resolve_regions(candidates, lines)


def extract_verification_oracle(content: str, rules: RuleSet = DEFAULT_RULES) -> list[str]:
    """Find oracle regions: keyword lines plus any following indented or
    fenced block describing the observable result.
    """
    lines = content.split("\n")
    keyword_res = _keyword_regexes(rules.oracle_keywords)
    candidates: list[tuple[int, int]] = []
    for lineno, line in enumerate(lines):
        if not any(r.search(line) for r in keyword_res):
            continue
        end = lineno
        nxt = lineno + 1
        if nxt < len(lines) and not lines[nxt].strip():
            nxt += 1
        if nxt < len(lines) and lines[nxt].lstrip().startswith("```"):
            end = nxt
            while end + 1 < len(lines):
                end += 1
                if lines[end].lstrip().startswith("```"):
                    break
        elif nxt < len(lines) and lines[nxt].strip() and _indent_of(lines[nxt]) > 0:
            end = nxt
            while (
                end + 1 < len(lines)
                and lines[end + 1].strip()
                and _indent_of(lines[end + 1]) > 0
            ):
                end += 1
        candidates.append((lineno, end))
    return _resolve_regions(candidates, lines)


def extract_references(content: str, rules: RuleSet = DEFAULT_RULES) -> list[str]:
    """All web/ftp URLs in document order, first occurrence kept, trailing
    punctuation stripped."""
    seen: dict[str, None] = {}
    for match in re.finditer(rules.url_pattern, content):
        url = match.group(0).rstrip(_TRAILING_PUNCT)
        host = url.split("://", 1)[1]
        if host and host[0].isalnum():
            seen.setdefault(url, None)
    return list(seen)


SourceStrategy = Callable[[PocReport], Sequence[str] | None]


def dedicated_field_strategy(report: PocReport) -> Sequence[str] | None:
    """Ids captured from the source's dedicated CVE field at ingestion."""
    return report.cve_ids or None


def extract_cve_ids(
    report: PocReport, source_strategy: SourceStrategy = dedicated_field_strategy
) -> list[str]:
    """Resolve a report's CVE ids: the dedicated source field when present,
    otherwise a body scan for fully-prefixed ids. Canonical form, deduplicated.
    """
    dedicated = source_strategy(report)
    if dedicated is not None:
        out: list[str] = []
        for raw in dedicated:
            normalized = normalize_cve_id(raw)
            if normalized is None:
                logger.warning(
                    "report %s: dedicated CVE field value %r is malformed", report.id, raw
                )
            elif normalized not in out:
                out.append(normalized)
        return out
    return find_cve_ids(report.raw_content)


# --- structured extraction ----------------------------------------------------


@dataclass(frozen=True)
class SlotSpan:
    text: str
    start: int
    end: int

    def encode(self) -> dict:
        return {"text": self.text, "start": self.start, "end": self.end}


@dataclass(frozen=True)
class StructuredExtraction:
    """Per-slot character spans produced by a structured extractor."""

    spans: dict[str, tuple[SlotSpan, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for slot in self.spans:
            if slot not in NER_SLOTS:
                raise ExtractionError(f"unknown structured slot: {slot!r}")

    def validate(self, content: str) -> None:
        for slot, spans in self.spans.items():
            for span in spans:
                if not (0 <= span.start <= span.end <= len(content)):
                    raise ExtractionError(
                        f"slot {slot}: span ({span.start}, {span.end}) outside document"
                    )
                if content[span.start : span.end] != span.text:
                    raise ExtractionError(
                        f"slot {slot}: span text mismatch at ({span.start}, {span.end})"
                    )

    def texts(self, slot: str) -> list[str]:
        return [span.text for span in self.spans.get(slot, ())]

    def encode(self) -> dict:
        return {slot: [s.encode() for s in spans] for slot, spans in self.spans.items()}

    @classmethod
    def decode(cls, data: dict) -> "StructuredExtraction":
        spans = {}
        for slot, raw_spans in data.items():
            spans[slot] = tuple(
                SlotSpan(str(s["text"]), int(s["start"]), int(s["end"]))
                for s in raw_spans
            )
        return cls(spans)


class StructuredExtractor(Protocol):
    def extract(self, report: PocReport) -> StructuredExtraction: ...


# Header labels understood by the default extractor, per target slot.
_HEADER_LABELS = {
    "title": ("exploit title", "poc title", "title"),
    "author": ("author", "discovered by", "found by", "credit"),
    "publish_time": (
        "publish date",
        "disclosure date",
        "release date",
        "published",
        "date",
    ),
    "test_platform": ("tested on", "platform", "operating system", "os"),
    "software_version": (
        "affected versions",
        "affected version",
        "vulnerable version",
        "software version",
        "version",
    ),
}

# Values in list-valued slots may be comma-separated on one header line.
_SPLIT_SLOTS = frozenset({"test_platform", "software_version"})

_COMMENT_CLOSERS = ("-->", "*/")


def _header_regex() -> re.Pattern[str]:
    labels = sorted(
        (label, slot)
        for slot, slot_labels in _HEADER_LABELS.items()
        for label in slot_labels
    )
    alternation = "|".join(re.escape(label) for label, _ in labels)
    # headers often sit inside comments: "#", "//", "/*", "<!--", "*", "--"
    return re.compile(
        r"^[ \t]*[#;*/<!-]{0,8}[ \t]*(" + alternation + r")[ \t]*:[ \t]*(\S.*)$",
        re.IGNORECASE | re.MULTILINE,
    )


_HEADER_RE = _header_regex()

_LABEL_TO_SLOT = {
    label: slot for slot, labels in _HEADER_LABELS.items() for label in labels
}


def _trim_span(content: str, start: int, end: int) -> tuple[str, int, int] | None:
    text = content[start:end]
    stripped = text.rstrip()
    for closer in _COMMENT_CLOSERS:
        if stripped.endswith(closer):
            stripped = stripped[: -len(closer)].rstrip()
    lead = len(text) - len(text.lstrip())
    start += lead
    end = start + len(stripped) - lead if stripped else start
    text = content[start:end].strip()
    if not text:
        return None
    return content[start:end], start, end


class DefaultStructuredExtractor:
    """Pattern-based extractor over labelled header lines.

    Recognizes lines such as ``Author: joeyj`` or ``# Exploit Title: ...``,
    with optional comment prefixes. When a document contains no header lines
    at all and is not code, its first non-empty line is taken as the title.
    """

    def extract(self, report: PocReport) -> StructuredExtraction:
        content = report.raw_content
        spans: dict[str, list[SlotSpan]] = {}
        matched_any = False
        for m in _HEADER_RE.finditer(content):
            matched_any = True
            slot = _LABEL_TO_SLOT[m.group(1).lower()]
            value_start, value_end = m.span(2)
            trimmed = _trim_span(content, value_start, value_end)
            if trimmed is None:
                continue
            text, start, end = trimmed
            if slot in _SPLIT_SLOTS and "," in text:
                offset = start
                for piece in text.split(","):
                    piece_start = content.index(piece, offset) if piece else offset
                    sub = _trim_span(content, piece_start, piece_start + len(piece))
                    offset = piece_start + len(piece) + 1
                    if sub is not None:
                        spans.setdefault(slot, []).append(SlotSpan(*sub))
            else:
                spans.setdefault(slot, []).append(SlotSpan(text, start, end))
        if not matched_any and not report.content_kind.is_code:
            for line in content.split("\n"):
                if line.strip():
                    start = content.index(line)
                    trimmed = _trim_span(content, start, start + len(line))
                    if trimmed is not None:
                        spans["title"] = [SlotSpan(*trimmed)]
                    break
        return StructuredExtraction({slot: tuple(v) for slot, v in spans.items()})


class ExternalStructuredExtractor:
    """Client for an external structured-extractor HTTP service.

    Request: ``{"id": ..., "content": ...}``; response: ``{slot: [{"text",
    "start", "end"}, ...]}``. Unreachable service, over-deadline calls, and
    contract-violating responses fall back to the default extractor; affected
    report ids are collected in ``degraded_ids``.
    """

    def __init__(
        self,
        url: str,
        deadline: float = 10.0,
        fallback: StructuredExtractor | None = None,
    ):
        self.url = url
        self.deadline = deadline
        self.fallback = fallback if fallback is not None else DefaultStructuredExtractor()
        self.degraded_ids: list[str] = []

    def extract(self, report: PocReport) -> StructuredExtraction:
        try:
            response = requests.post(
                self.url,
                json={"id": report.id, "content": report.raw_content},
                timeout=self.deadline,
            )
            response.raise_for_status()
            extraction = StructuredExtraction.decode(response.json())
            extraction.validate(report.raw_content)
            return extraction
        except (requests.RequestException, ExtractionError, ValueError, KeyError, TypeError) as exc:
            logger.warning(
                "external extractor failed for report %s, using default: %s",
                report.id,
                exc,
            )
            self.degraded_ids.append(report.id)
            return self.fallback.extract(report)


def extract_structured_aspects(
    report: PocReport, extractor: StructuredExtractor | None = None
) -> StructuredExtraction:
    """Run a structured extractor and enforce its span contract."""
    if extractor is None:
        extractor = DefaultStructuredExtractor()
    extraction = extractor.extract(report)
    extraction.validate(report.raw_content)
    return extraction


# --- composition ----------------------------------------------------------------


def extract_all(
    report: PocReport,
    rules: RuleSet = DEFAULT_RULES,
    extractor: StructuredExtractor | None = None,
    source_strategy: SourceStrategy = dedicated_field_strategy,
) -> PocReport:
    """Populate every slot a match exists for; idempotent, dedup-preserving."""
    if report.content_kind.kind is Kind.UNCLASSIFIED:
        raise ValueError(f"report {report.id} must be categorized before extraction")
    aspects = report.aspects
    aspects = aspects.with_added(
        "trigger_step", aspect_values(extract_trigger_step(report.raw_content, rules))
    )
    aspects = aspects.with_added(
        "verification_oracle",
        aspect_values(extract_verification_oracle(report.raw_content, rules)),
    )
    aspects = aspects.with_added(
        "reference", aspect_values(extract_references(report.raw_content, rules))
    )
    structured = extract_structured_aspects(report, extractor)
    for slot in NER_SLOTS:
        aspects = aspects.with_added(slot, aspect_values(structured.texts(slot)))
    cve_ids = tuple(extract_cve_ids(report, source_strategy))
    return PocReport(
        id=report.id,
        source=report.source,
        raw_content=report.raw_content,
        content_kind=report.content_kind,
        cve_ids=cve_ids,
        aspects=aspects,
    )


# --- evaluation -----------------------------------------------------------------


@dataclass(frozen=True)
class SlotScore:
    slot: str
    true_positives: int
    false_positives: int
    false_negatives: int
    zero_predictions: bool = False
    zero_gold: bool = False

    @property
    def precision(self) -> float:
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else 0.0


@dataclass(frozen=True)
class ExtractionScore:
    slots: dict[str, SlotScore]
    overall_precision: float
    overall_recall: float
    zero_predictions: bool = False


GoldAnnotations = dict[str, dict[str, list[str]]]


def load_gold_annotations(path: str | Path) -> GoldAnnotations:
    """Read a gold file: one JSON object per line, {"id": ..., "<slot>": [...]}."""
    gold: GoldAnnotations = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        record = json.loads(line)
        report_id = record.pop("id")
        for slot in record:
            if slot not in ASPECT_SLOTS:
                raise ExtractionError(f"{path}:{lineno}: unknown gold slot {slot!r}")
        gold[report_id] = {slot: list(values) for slot, values in record.items()}
    return gold


def _norm_set(values: Sequence[str]) -> set[str]:
    return {v.strip().lower() for v in values if v.strip()}


def evaluate_extraction(gold: GoldAnnotations, predicted: Corpus) -> ExtractionScore:
    """Micro-averaged precision/recall of predicted aspects against gold.

    Matching is case-insensitive on trimmed text. The gold and predicted
    report id sets must be identical.
    """
    gold_ids = set(gold)
    predicted_ids = {r.id for r in predicted}
    if gold_ids != predicted_ids:
        missing = sorted(gold_ids - predicted_ids)
        extra = sorted(predicted_ids - gold_ids)
        raise ExtractionError(
            f"gold/predicted id mismatch: missing from predicted {missing}, "
            f"not annotated {extra}"
        )
    counts = {slot: [0, 0, 0] for slot in ASPECT_SLOTS}  # tp, fp, fn
    gold_totals = {slot: 0 for slot in ASPECT_SLOTS}
    pred_totals = {slot: 0 for slot in ASPECT_SLOTS}
    for report in predicted:
        annotations = gold[report.id]
        for slot in ASPECT_SLOTS:
            gold_set = _norm_set(annotations.get(slot, []))
            pred_set = _norm_set(report.aspects.texts(slot))
            gold_totals[slot] += len(gold_set)
            pred_totals[slot] += len(pred_set)
            counts[slot][0] += len(gold_set & pred_set)
            counts[slot][1] += len(pred_set - gold_set)
            counts[slot][2] += len(gold_set - pred_set)
    slots = {}
    for slot in ASPECT_SLOTS:
        tp, fp, fn = counts[slot]
        slots[slot] = SlotScore(
            slot,
            tp,
            fp,
            fn,
            zero_predictions=pred_totals[slot] == 0,
            zero_gold=gold_totals[slot] == 0,
        )
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    return ExtractionScore(
        slots=slots,
        overall_precision=tp / (tp + fp) if tp + fp else 0.0,
        overall_recall=tp / (tp + fn) if tp + fn else 0.0,
        zero_predictions=sum(pred_totals.values()) == 0,
    )
