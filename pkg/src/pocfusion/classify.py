"""Language detection and code/text categorization for PoC reports.

Detection is signature-driven: a table of per-language regular expressions
(shipped as package data, editable without code changes) is scored against
the document, and the best-scoring language wins when it clears its
signature's minimum hit count. Anything below every minimum is prose.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .corpus import (
    TEXT,
    Kind,
    LanguageId,
    PocReport,
    code_kind,
)

SIGNATURES_FORMAT = "language-signatures"
SIGNATURES_VERSION = 1

# One definitive construct is not enough evidence on its own unless weighted.
DEFAULT_MIN_HITS = 2


class SignatureError(Exception):
    """Signature table file is unreadable or declares the wrong version."""


@dataclass(frozen=True)
class SignaturePattern:
    pattern: re.Pattern[str]
    weight: int

    def __post_init__(self) -> None:
        if self.weight < 1:
            raise ValueError("pattern weight must be >= 1")


@dataclass(frozen=True)
class LanguageSignature:
    language: LanguageId
    patterns: tuple[SignaturePattern, ...]
    min_hits: int = DEFAULT_MIN_HITS

    def __post_init__(self) -> None:
        if not self.patterns:
            raise ValueError(f"{self.language.value}: empty pattern list")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")

    def score(self, content: str) -> int:
        return sum(
            p.weight * len(p.pattern.findall(content)) for p in self.patterns
        )


def _parse_signature_lines(lines: list[str], origin: str) -> tuple[LanguageSignature, ...]:
    if not lines:
        raise SignatureError(f"{origin}: empty signature table")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SignatureError(f"{origin}: unreadable header: {exc}") from exc
    if (
        header.get("format") != SIGNATURES_FORMAT
        or header.get("version") != SIGNATURES_VERSION
    ):
        raise SignatureError(
            f"{origin}: table declares format {header.get('format')!r} version "
            f"{header.get('version')!r}, this build reads {SIGNATURES_FORMAT!r} "
            f"version {SIGNATURES_VERSION!r}"
        )
    min_hits = int(header.get("min_hits", DEFAULT_MIN_HITS))
    grouped: dict[LanguageId, list[SignaturePattern]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            language = LanguageId(record["language"])
            pattern = SignaturePattern(
                re.compile(record["pattern"], re.MULTILINE),
                int(record.get("weight", 1)),
            )
        except (json.JSONDecodeError, KeyError, ValueError, re.error) as exc:
            raise SignatureError(f"{origin}:{lineno}: broken signature record: {exc}") from exc
        grouped.setdefault(language, []).append(pattern)
    return tuple(
        LanguageSignature(language, tuple(grouped[language]), min_hits)
        for language in LanguageId
        if language in grouped
    )


def load_signatures(path: str | Path | None = None) -> tuple[LanguageSignature, ...]:
    """Load a signature table; with no path, the bundled default table."""
    if path is None:
        text = (
            resources.files("pocfusion.data")
            .joinpath("signatures.jsonl")
            .read_text(encoding="utf-8")
        )
        return _parse_signature_lines(text.splitlines(), "bundled signatures")
    path = Path(path)
    return _parse_signature_lines(
        path.read_text(encoding="utf-8").splitlines(), str(path)
    )


_DEFAULT_SIGNATURES: tuple[LanguageSignature, ...] | None = None


def _default_signatures() -> tuple[LanguageSignature, ...]:
    global _DEFAULT_SIGNATURES
    if _DEFAULT_SIGNATURES is None:
        _DEFAULT_SIGNATURES = load_signatures()
    return _DEFAULT_SIGNATURES


def detect_language(
    content: str, signatures: tuple[LanguageSignature, ...] | None = None
) -> tuple[LanguageId, int] | None:
    """Best-scoring language with its hit count, or None when nothing clears min_hits.

    Ties break by LanguageId declaration order, which is the order signatures
    are stored in, so the first strictly-best score wins.
    """
    if not content:
        return None
    if signatures is None:
        signatures = _default_signatures()
    best: tuple[LanguageId, int] | None = None
    for signature in signatures:
        hits = signature.score(content)
        if hits < signature.min_hits:
            continue
        if best is None or hits > best[1]:
            best = (signature.language, hits)
    return best


def categorize(
    report: PocReport, signatures: tuple[LanguageSignature, ...] | None = None
) -> PocReport:
    """Resolve a report's content kind from its raw content.

    Code when some language signature clears its minimum, Text otherwise.
    """
    if report.content_kind.kind is not Kind.UNCLASSIFIED:
        raise ValueError(
            f"report {report.id} is already classified as {report.content_kind.encode()}"
        )
    detected = detect_language(report.raw_content, signatures)
    kind = code_kind(detected[0]) if detected is not None else TEXT
    return PocReport(
        id=report.id,
        source=report.source,
        raw_content=report.raw_content,
        content_kind=kind,
        cve_ids=report.cve_ids,
        aspects=report.aspects,
    )
