"""Canonical CVE identifier handling shared by ingestion and extraction."""

from __future__ import annotations

import re

# Canonical form: CVE-<4-digit year>-<4 or more digits>, upper case.
CVE_PATTERN = re.compile(r"CVE-\d{4}-\d{4,}", re.IGNORECASE)

_CVE_EXACT = re.compile(r"(?:CVE-)?(\d{4})-(\d{4,})$", re.IGNORECASE)


def normalize_cve_id(raw: str) -> str | None:
    """Normalize a CVE identifier to canonical upper-case form.

    Accepts the bare ``YYYY-NNNN`` shape used by dedicated source fields as
    well as the full prefixed form in any casing. Returns None when the value
    does not fit the canonical pattern.
    """
    m = _CVE_EXACT.match(raw.strip())
    if m is None:
        return None
    return f"CVE-{m.group(1)}-{m.group(2)}"


def find_cve_ids(text: str) -> list[str]:
    """Scan free text for explicitly prefixed CVE ids, deduplicated in order."""
    seen: dict[str, None] = {}
    for match in CVE_PATTERN.finditer(text):
        seen.setdefault(match.group(0).upper(), None)
    return list(seen)
