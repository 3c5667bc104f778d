"""Cross-source association graph: CVE-keyed clusters, similarity-scored
pairs, and classifier-based links for reports without a shared CVE id.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

from .corpus import Corpus, LanguageId, PocReport
from .similarity import (
    EmbeddingModel,
    cosine_similarity,
    embed_text,
    tokenize_code,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairKind:
    """Code pairs carry the shared language; text pairs carry none."""

    lang: LanguageId | None = None

    @property
    def is_code(self) -> bool:
        return self.lang is not None

    def encode(self) -> str:
        return f"code:{self.lang.value}" if self.lang else "text"

    @classmethod
    def decode(cls, text: str) -> "PairKind":
        if text == "text":
            return cls()
        if text.startswith("code:"):
            return cls(LanguageId(text.split(":", 1)[1]))
        raise ValueError(f"unknown pair kind: {text!r}")


TEXT_PAIR = PairKind()


@dataclass(frozen=True)
class SharedCve:
    cve_id: str


@dataclass(frozen=True)
class Classifier:
    pass


LinkBasis = SharedCve | Classifier

CLASSIFIER_BASIS = Classifier()


@dataclass(frozen=True)
class PocLink:
    a: str
    b: str
    basis: LinkBasis
    similarity: float
    kind: PairKind

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError(f"self-link on {self.a}")
        if self.a > self.b:
            raise ValueError(f"link endpoints not in canonical order: {self.a!r} > {self.b!r}")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError(f"similarity out of range: {self.similarity}")

    def other(self, report_id: str) -> str:
        if report_id == self.a:
            return self.b
        if report_id == self.b:
            return self.a
        raise KeyError(f"{report_id} is not an endpoint of this link")

    def encode(self) -> dict:
        record = {"a": self.a, "b": self.b}
        if isinstance(self.basis, SharedCve):
            record["basis"] = "shared_cve"
            record["cve_id"] = self.basis.cve_id
        else:
            record["basis"] = "classifier"
        record["similarity"] = self.similarity
        record["kind"] = self.kind.encode()
        return record

    @classmethod
    def decode(cls, data: dict) -> "PocLink":
        if data["basis"] == "shared_cve":
            basis: LinkBasis = SharedCve(data["cve_id"])
        elif data["basis"] == "classifier":
            basis = CLASSIFIER_BASIS
        else:
            raise ValueError(f"unknown link basis: {data['basis']!r}")
        return cls(
            a=data["a"],
            b=data["b"],
            basis=basis,
            similarity=data["similarity"],
            kind=PairKind.decode(data["kind"]),
        )


class ThresholdConfig(Protocol):
    code_threshold: float
    text_threshold: float


def kind_threshold(kind: PairKind, config: ThresholdConfig) -> float:
    return config.code_threshold if kind.is_code else config.text_threshold


# --- grouping and candidates -------------------------------------------------


def group_by_cve(corpus: Corpus) -> dict[str, list[str]]:
    """CVE id -> report ids carrying it, both in corpus encounter order.
    Singleton groups are kept; they still matter for CVE-entry completion."""
    groups: dict[str, list[str]] = {}
    for report in corpus:
        for cve_id in report.cve_ids:
            groups.setdefault(cve_id, []).append(report.id)
    return groups


def pair_kind_of(a: PocReport, b: PocReport) -> PairKind | None:
    """The link kind two reports can form, or None when kinds are incompatible."""
    if a.content_kind.is_code and b.content_kind.is_code:
        if a.content_kind.lang is b.content_kind.lang:
            return PairKind(a.content_kind.lang)
        return None
    if a.content_kind.is_text and b.content_kind.is_text:
        return TEXT_PAIR
    return None


def candidate_pairs_same_cve(
    group: Sequence[str], corpus: Corpus
) -> list[tuple[str, str, PairKind]]:
    """All same-kind unordered pairs within one CVE group, canonically ordered."""
    pairs = []
    for i in range(len(group)):
        for j in range(i + 1, len(group)):
            a, b = sorted((group[i], group[j]))
            kind = pair_kind_of(corpus.get(a), corpus.get(b))
            if kind is not None:
                pairs.append((a, b, kind))
    return pairs


# --- scoring -------------------------------------------------------------------


def title_text(report: PocReport) -> str:
    titles = report.aspects.texts("title")
    return titles[0] if titles else ""


class ScoringModels:
    """Caches of per-report vector representations used in pair scoring."""

    def __init__(self, embedding: EmbeddingModel | None = None):
        self.embedding = embedding
        self._tokens: dict[str, dict] = {}
        self._content_vectors: dict[str, np.ndarray] = {}
        self._title_vectors: dict[str, np.ndarray] = {}

    def token_vector(self, report: PocReport):
        if report.id not in self._tokens:
            self._tokens[report.id] = tokenize_code(
                report.raw_content, report.content_kind.lang
            )
        return self._tokens[report.id]

    def _require_embedding(self) -> EmbeddingModel:
        if self.embedding is None:
            raise ValueError("text scoring requires an embedding model")
        return self.embedding

    def content_vector(self, report: PocReport) -> np.ndarray:
        if report.id not in self._content_vectors:
            self._content_vectors[report.id] = embed_text(
                self._require_embedding(), report.raw_content
            )
        return self._content_vectors[report.id]

    def title_vector(self, report: PocReport) -> np.ndarray:
        if report.id not in self._title_vectors:
            self._title_vectors[report.id] = embed_text(
                self._require_embedding(), title_text(report)
            )
        return self._title_vectors[report.id]


def score_pair(
    a: PocReport, b: PocReport, kind: PairKind, models: ScoringModels
) -> float:
    """Similarity in [0, 1]: token cosine for code pairs, embedding cosine
    (clamped at zero) for text pairs."""
    actual = pair_kind_of(a, b)
    if actual != kind:
        raise ValueError(
            f"pair kind {kind.encode()} inconsistent with reports "
            f"{a.id} ({a.content_kind.encode()}) and {b.id} ({b.content_kind.encode()})"
        )
    if kind.is_code:
        va, vb = models.token_vector(a), models.token_vector(b)
        if not va and not vb:
            logger.warning("both token vectors empty for pair (%s, %s)", a.id, b.id)
            return 0.0
        return cosine_similarity(va, vb)
    score = cosine_similarity(models.content_vector(a), models.content_vector(b))
    if score < 0.0:
        logger.warning(
            "negative text similarity %.4f for pair (%s, %s) clamped to 0",
            score, a.id, b.id,
        )
        return 0.0
    return min(score, 1.0)


# --- software names ---------------------------------------------------------


_VERSION_TOKEN = re.compile(r"v?\d+(?:\.\d+)*[a-z]?\b", re.IGNORECASE)


def _name_from_text(text: str) -> str:
    head = text.split(" - ", 1)[0]
    m = _VERSION_TOKEN.search(head)
    if m:
        head = head[: m.start()]
    return head.strip(" \t-_,;:")


def software_names(report: PocReport, original_only: bool = False) -> tuple[str, ...]:
    """Software names a report is about, derived from its title values and
    from any name part preceding version numbers in software_version values.

    With ``original_only`` the derivation ignores values added by completion,
    so the answer is stable across enrichment runs.
    """
    names: dict[str, str] = {}
    for slot in ("title", "software_version"):
        values = (
            report.aspects.original_values(slot)
            if original_only
            else report.aspects.values(slot)
        )
        for value in values:
            name = _name_from_text(value.text)
            if name:
                names.setdefault(name.lower(), name)
    return tuple(names.values())


def match_software(a: PocReport, b: PocReport) -> bool:
    """True when the two reports name a common software product exactly
    (case-insensitive, trimmed); false when either side names none."""
    names_a = {n.lower() for n in software_names(a)}
    names_b = {n.lower() for n in software_names(b)}
    return bool(names_a & names_b)


# --- pair classification -------------------------------------------------------


class PairClassifier(Protocol):
    def classify(self, a: PocReport, b: PocReport) -> tuple[bool, float]: ...


class HeuristicPairClassifier:
    """Default same-vulnerability verdict: combined title/content cosine
    against a cutoff. Confidence is the combined cosine itself."""

    def __init__(
        self,
        models: ScoringModels,
        cutoff: float = 0.85,
        title_weight: float = 0.5,
        content_weight: float = 0.5,
    ):
        if not 0.0 <= cutoff <= 1.0:
            raise ValueError("cutoff must be in [0, 1]")
        self.models = models
        self.cutoff = cutoff
        self.title_weight = title_weight
        self.content_weight = content_weight

    def _content_similarity(self, a: PocReport, b: PocReport) -> float:
        kind = pair_kind_of(a, b)
        if kind is None:
            return 0.0
        return score_pair(a, b, kind, self.models)

    def classify(self, a: PocReport, b: PocReport) -> tuple[bool, float]:
        if self.models.embedding is None:
            title_sim = 0.0
        else:
            title_sim = max(
                0.0,
                cosine_similarity(
                    self.models.title_vector(a), self.models.title_vector(b)
                ),
            )
        combined = (
            self.title_weight * title_sim
            + self.content_weight * self._content_similarity(a, b)
        )
        combined = min(max(combined, 0.0), 1.0)
        return combined >= self.cutoff, combined


class ExternalPairClassifier:
    """Client for an external pair-classifier HTTP service.

    Request: ``{"title_a", "content_a", "title_b", "content_b"}``; response:
    ``{"same": bool, "confidence": real}``. Failures fall back to the
    heuristic classifier; affected pairs are collected in ``degraded_pairs``.
    """

    def __init__(self, url: str, fallback: PairClassifier, deadline: float = 10.0):
        self.url = url
        self.fallback = fallback
        self.deadline = deadline
        self.degraded_pairs: list[tuple[str, str]] = []

    def classify(self, a: PocReport, b: PocReport) -> tuple[bool, float]:
        try:
            response = requests.post(
                self.url,
                json={
                    "title_a": title_text(a),
                    "content_a": a.raw_content,
                    "title_b": title_text(b),
                    "content_b": b.raw_content,
                },
                timeout=self.deadline,
            )
            response.raise_for_status()
            data = response.json()
            same = bool(data["same"])
            confidence = float(data["confidence"])
            if not 0.0 <= confidence <= 1.0:
                raise ValueError(f"confidence out of range: {confidence}")
            return same, confidence
        except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
            logger.warning(
                "external classifier failed for pair (%s, %s), using heuristic: %s",
                a.id, b.id, exc,
            )
            self.degraded_pairs.append((a.id, b.id))
            return self.fallback.classify(a, b)


def classify_pair(
    classifier: PairClassifier, a: PocReport, b: PocReport
) -> tuple[bool, float]:
    """Same-vulnerability verdict for two reports naming the same software.

    The software match is a hard precondition; callers generate candidates
    through it.
    """
    if not match_software(a, b):
        raise ValueError(
            f"classify_pair precondition violated: {a.id} and {b.id} "
            "do not name the same software"
        )
    same, confidence = classifier.classify(a, b)
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"classifier confidence out of range: {confidence}")
    return same, confidence


# --- training-set construction -------------------------------------------------


@dataclass(frozen=True)
class PairSample:
    a: str
    b: str
    label: str  # same_vulnerability | different
    title_a: str
    title_b: str
    content_a: str
    content_b: str
    software_match: bool
    partition: str = ""  # train | dev | test

    def encode(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "title_a": self.title_a,
            "title_b": self.title_b,
            "content_a": self.content_a,
            "content_b": self.content_b,
            "label": self.label,
            "partition": self.partition,
        }


def build_pair_training_set(
    corpus: Corpus,
    n_pos: int,
    n_neg: int,
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> list[PairSample]:
    """Sample labelled report pairs for an external same-vulnerability trainer.

    Positives share at least one CVE id; negatives are CVE-tagged on both
    sides with disjoint id sets. Partition sizes: floor(train), floor(dev),
    remainder to test. Deterministic for a fixed seed.
    """
    if abs(sum(split) - 1.0) > 1e-9 or any(r < 0 for r in split):
        raise ValueError(f"split ratios must be nonnegative and sum to 1: {split}")
    tagged = [r for r in corpus if r.cve_ids]
    positive_keys: set[tuple[str, str]] = set()
    for group in group_by_cve(corpus).values():
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                positive_keys.add(tuple(sorted((group[i], group[j]))))
    negative_keys: list[tuple[str, str]] = []
    for i in range(len(tagged)):
        for j in range(i + 1, len(tagged)):
            key = tuple(sorted((tagged[i].id, tagged[j].id)))
            if key not in positive_keys:
                negative_keys.append(key)
    positives = sorted(positive_keys)
    negatives = sorted(negative_keys)
    if len(positives) < n_pos or len(negatives) < n_neg:
        raise ValueError(
            f"insufficient candidate pairs: need {n_pos} positive have "
            f"{len(positives)}, need {n_neg} negative have {len(negatives)}"
        )
    rng = random.Random(seed)
    chosen = [(key, "same_vulnerability") for key in rng.sample(positives, n_pos)]
    chosen += [(key, "different") for key in rng.sample(negatives, n_neg)]
    rng.shuffle(chosen)
    total = len(chosen)
    n_train = int(split[0] * total)
    n_dev = int(split[1] * total)
    samples = []
    for index, ((a_id, b_id), label) in enumerate(chosen):
        partition = (
            "train" if index < n_train else "dev" if index < n_train + n_dev else "test"
        )
        a, b = corpus.get(a_id), corpus.get(b_id)
        samples.append(
            PairSample(
                a=a_id,
                b=b_id,
                label=label,
                title_a=title_text(a),
                title_b=title_text(b),
                content_a=a.raw_content,
                content_b=b.raw_content,
                software_match=match_software(a, b),
                partition=partition,
            )
        )
    return samples


def save_pair_samples(samples: Iterable[PairSample], path: str | Path) -> None:
    lines = [json.dumps(s.encode(), ensure_ascii=False) for s in samples]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# --- graph assembly --------------------------------------------------------------


def build_link_graph(
    corpus: Corpus,
    cve_db: dict,
    models: ScoringModels,
    classifier: PairClassifier | None,
    config: ThresholdConfig,
) -> list[PocLink]:
    """Assemble the association graph.

    Same-CVE same-kind pairs link when their similarity clears the per-kind
    threshold. Pairs sharing no CVE id link when they name the same software
    and the classifier votes yes. One link per pair, shared-CVE basis first,
    output sorted by pair key. ``cve_db`` is accepted for interface symmetry
    with the completion stage; grouping needs only the reports' own ids.
    """
    del cve_db
    links: dict[tuple[str, str], PocLink] = {}
    groups = group_by_cve(corpus)
    for cve_id in sorted(groups):
        for a_id, b_id, kind in candidate_pairs_same_cve(groups[cve_id], corpus):
            key = (a_id, b_id)
            if key in links:
                continue
            score = score_pair(corpus.get(a_id), corpus.get(b_id), kind, models)
            if score >= kind_threshold(kind, config):
                links[key] = PocLink(a_id, b_id, SharedCve(cve_id), score, kind)
    if classifier is not None:
        by_name: dict[str, list[str]] = {}
        for report in corpus:
            for name in software_names(report):
                ids = by_name.setdefault(name.lower(), [])
                if report.id not in ids:
                    ids.append(report.id)
        candidates: set[tuple[str, str]] = set()
        for ids in by_name.values():
            for i in range(len(ids)):
                for j in range(i + 1, len(ids)):
                    candidates.add(tuple(sorted((ids[i], ids[j]))))
        for key in sorted(candidates):
            if key in links:
                continue
            a, b = corpus.get(key[0]), corpus.get(key[1])
            if set(a.cve_ids) & set(b.cve_ids):
                continue
            kind = pair_kind_of(a, b)
            if kind is None:
                continue
            same, confidence = classify_pair(classifier, a, b)
            if same:
                links[key] = PocLink(key[0], key[1], CLASSIFIER_BASIS, confidence, kind)
    return [links[key] for key in sorted(links)]


def save_links(links: Iterable[PocLink], path: str | Path) -> None:
    lines = [json.dumps(link.encode(), ensure_ascii=False) for link in links]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_links(path: str | Path) -> list[PocLink]:
    links = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            links.append(PocLink.decode(json.loads(line)))
    return links
