"""Caption evaluation suite: embedding alignment score, unigram BLEU,
METEOR-lite, ROUGE-L, CIDEr-D with Gaussian length penalty, and noun-phrase
precision/recall/F1, plus corpus-level macro aggregation.

All functions are pure; degenerate inputs (empty candidate, no matches)
score 0 and are logged at debug level rather than raising.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

import numpy as np

from .errors import AlignmentError, DependencyError, DomainError, ShapeError, ValidationError
from .textproc import Lexicon, default_lexicon, noun_phrases

if TYPE_CHECKING:
    from .corpus import EmbeddingMatrix

log = logging.getLogger(__name__)

CIDER_MAX_ORDER = 4
CIDER_SIGMA = 6.0


def clip_score(image_vec: np.ndarray, text_vec: np.ndarray, scale: float = 100.0) -> float:
    """``scale * max(cos(image_vec, text_vec), 0)``."""
    a = np.asarray(image_vec, dtype=np.float64).ravel()
    b = np.asarray(text_vec, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("alignment score undefined for zero-norm vectors")
    return scale * max(float(a @ b / (na * nb)), 0.0)


def bleu1(candidate: str, references: Sequence[str]) -> float:
    """Clipped unigram precision times the brevity penalty
    ``exp(1 - r/c)`` for candidates shorter than the closest reference."""
    cand = candidate.split()
    refs = [r.split() for r in references]
    if not refs:
        raise ValidationError("bleu1 requires at least one reference")
    if not cand:
        log.debug("bleu1: empty candidate scored 0")
        return 0.0
    counts = Counter(cand)
    max_ref: Counter[str] = Counter()
    for ref in refs:
        rc = Counter(ref)
        for tok, n in rc.items():
            if n > max_ref[tok]:
                max_ref[tok] = n
    clipped = sum(min(n, max_ref[tok]) for tok, n in counts.items())
    precision = clipped / len(cand)
    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    bp = math.exp(1.0 - r / c) if c < r else 1.0
    return precision * bp


def _light_stem(word: str) -> str:
    for suffix in ("ing", "ed", "es", "ly", "s"):
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[: -len(suffix)]
    return word


def meteor_lite(candidate: str, reference: str) -> float:
    """Unigram alignment (exact then stemmed), harmonic mean weighted toward
    recall, discounted by the standard fragmentation penalty
    ``0.5 * (chunks / matches)^3``."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        log.debug("meteor_lite: empty input scored 0")
        return 0.0
    pairs: list[tuple[int, int]] = []
    cand_used = [False] * len(cand)
    ref_used = [False] * len(ref)
    for key in (lambda w: w, _light_stem):
        ref_keys = [key(w) for w in ref]
        for i, word in enumerate(cand):
            if cand_used[i]:
                continue
            want = key(word)
            for j, rk in enumerate(ref_keys):
                if not ref_used[j] and rk == want:
                    pairs.append((i, j))
                    cand_used[i] = True
                    ref_used[j] = True
                    break
    matches = len(pairs)
    if matches == 0:
        return 0.0
    precision = matches / len(cand)
    recall = matches / len(ref)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    pairs.sort()
    chunks = 1
    for (ci, ri), (cj, rj) in zip(pairs, pairs[1:]):
        if cj != ci + 1 or rj != ri + 1:
            chunks += 1
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0] * (len(b) + 1)
        for j, other in enumerate(b, start=1):
            if tok == other:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """F1 over the longest common subsequence of word tokens."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        log.debug("rouge_l: empty input scored 0")
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def _ngrams(tokens: Sequence[str], order: int) -> Counter:
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


@dataclass
class NGramStats:
    """Per-order document-frequency tables over a reference corpus."""

    doc_count: int
    df: dict[int, dict[tuple, int]]

    def idf(self, order: int, gram: tuple) -> float:
        # unseen n-grams are treated as appearing in one document
        return math.log(self.doc_count / max(self.df[order].get(gram, 0), 1))


def build_ngram_stats(reference_corpus: Sequence[str], max_order: int = CIDER_MAX_ORDER) -> NGramStats:
    docs = list(reference_corpus)
    if not docs:
        raise ValidationError("cannot build n-gram statistics over an empty corpus")
    df: dict[int, dict[tuple, int]] = {n: {} for n in range(1, max_order + 1)}
    for doc in docs:
        tokens = doc.split()
        for order in range(1, max_order + 1):
            for gram in set(_ngrams(tokens, order)):
                df[order][gram] = df[order].get(gram, 0) + 1
    return NGramStats(doc_count=len(docs), df=df)


def _tfidf_vector(counts: Counter, order: int, stats: NGramStats) -> tuple[dict[tuple, float], float]:
    vec = {gram: n * stats.idf(order, gram) for gram, n in counts.items()}
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return vec, norm


def cider_d(
    candidate: str,
    references: Sequence[str],
    stats: NGramStats,
    sigma: float = CIDER_SIGMA,
) -> float:
    """Consensus score in [0, 10]: TF-IDF weighted clipped cosine over
    n-gram orders 1..4, each reference discounted by the Gaussian length
    penalty ``exp(-(len_c - len_r)^2 / (2 sigma^2))``."""
    if stats is None:
        raise DependencyError("cider_d requires n-gram statistics over the reference corpus")
    if not references:
        raise ValidationError("cider_d requires at least one reference")
    cand = candidate.split()
    if not cand:
        log.debug("cider_d: empty candidate scored 0")
        return 0.0
    score = 0.0
    for order in range(1, CIDER_MAX_ORDER + 1):
        cand_vec, cand_norm = _tfidf_vector(_ngrams(cand, order), order, stats)
        order_total = 0.0
        for reference in references:
            ref = reference.split()
            ref_vec, ref_norm = _tfidf_vector(_ngrams(ref, order), order, stats)
            if cand_norm == 0.0 or ref_norm == 0.0:
                continue
            num = 0.0
            for gram, weight in cand_vec.items():
                if gram in ref_vec:
                    num += min(weight, ref_vec[gram]) * ref_vec[gram]
            delta = len(cand) - len(ref)
            penalty = math.exp(-(delta * delta) / (2.0 * sigma * sigma))
            order_total += penalty * num / (cand_norm * ref_norm)
        score += order_total / len(references)
    return 10.0 * score / CIDER_MAX_ORDER


def np_prf(
    candidate: str,
    reference: str,
    lexicon: Lexicon | None = None,
) -> tuple[float, float, float]:
    """Precision/recall/F1 over the intersection of the two noun-phrase sets.

    Conventions: empty candidate set gives P=0, empty reference set gives
    R=0, and F1 is 0 when both are 0.
    """
    lexicon = lexicon or default_lexicon()
    cand_set = noun_phrases(candidate, lexicon)
    ref_set = noun_phrases(reference, lexicon)
    inter = len(cand_set & ref_set)
    precision = inter / len(cand_set) if cand_set else 0.0
    recall = inter / len(ref_set) if ref_set else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# Suite aggregation
# ---------------------------------------------------------------------------


@dataclass
class ClipEmbeddings:
    """Per-id image and text vectors for alignment scoring in the suite."""

    image: "EmbeddingMatrix"
    text: "EmbeddingMatrix"
    scale: float = 100.0

    def score(self, item_id: str) -> float | None:
        if item_id not in self.image.id_index or item_id not in self.text.id_index:
            return None
        return clip_score(self.image.row_for_id(item_id), self.text.row_for_id(item_id), self.scale)


@dataclass
class MetricReport:
    bleu1: float
    meteor: float
    rouge_l: float
    cider_d: float
    np_precision: float
    np_recall: float
    np_f1: float
    n_items: int
    clip_score: float | None = None

    def to_dict(self) -> dict:
        return {
            "clip_score": self.clip_score,
            "bleu1": self.bleu1,
            "meteor": self.meteor,
            "rouge_l": self.rouge_l,
            "cider_d": self.cider_d,
            "np_precision": self.np_precision,
            "np_recall": self.np_recall,
            "np_f1": self.np_f1,
            "n_items": self.n_items,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        rows = [("metric", "value")]
        for key, value in self.to_dict().items():
            if value is None:
                rows.append((key, "-"))
            elif isinstance(value, float):
                rows.append((key, f"{value:.4f}"))
            else:
                rows.append((key, str(value)))
        width = max(len(k) for k, _ in rows)
        lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
        lines.insert(1, "-" * (width + 9))
        return "\n".join(lines)


def _per_item_scores(
    pred: str, ref: str, stats: NGramStats, lexicon: Lexicon
) -> dict[str, float]:
    p, r, f = np_prf(pred, ref, lexicon)
    return {
        "bleu1": bleu1(pred, [ref]),
        "meteor": meteor_lite(pred, ref),
        "rouge_l": rouge_l(pred, ref),
        "cider_d": cider_d(pred, [ref], stats),
        "np_precision": p,
        "np_recall": r,
        "np_f1": f,
    }


def evaluate_suite(
    predictions: Mapping[str, str],
    references: Mapping[str, str],
    embeddings: ClipEmbeddings | None = None,
    lexicon: Lexicon | None = None,
    n_jobs: int = 1,
    per_item_out: dict[str, dict[str, float]] | None = None,
) -> MetricReport:
    """Macro-average the per-caption metrics over id-aligned predictions
    and references. The alignment score column is omitted when no embedding
    inputs are supplied.

    ``per_item_out``, when given, is filled with the per-id score dicts
    (used by report renderers).
    """
    missing_refs = sorted(set(predictions) - set(references))
    missing_preds = sorted(set(references) - set(predictions))
    if missing_refs or missing_preds:
        missing = missing_refs + missing_preds
        raise AlignmentError(
            "predictions and references are not aligned; missing ids: "
            + ", ".join(missing[:20]),
            missing_ids=missing,
        )
    if not predictions:
        raise ValidationError("cannot evaluate an empty prediction set")
    lexicon = lexicon or default_lexicon()
    ids = sorted(predictions)
    stats = build_ngram_stats([references[i] for i in ids])

    def work(item_id: str) -> dict[str, float]:
        return _per_item_scores(predictions[item_id], references[item_id], stats, lexicon)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(work, ids))
    else:
        rows = [work(i) for i in ids]

    if per_item_out is not None:
        for item_id, row in zip(ids, rows):
            per_item_out[item_id] = dict(row)

    def mean(key: str) -> float:
        return sum(row[key] for row in rows) / len(rows)

    clip_mean: float | None = None
    if embeddings is not None:
        scores = [s for s in (embeddings.score(i) for i in ids) if s is not None]
        if scores:
            clip_mean = sum(scores) / len(scores)
    return MetricReport(
        bleu1=mean("bleu1"),
        meteor=mean("meteor"),
        rouge_l=mean("rouge_l"),
        cider_d=mean("cider_d"),
        np_precision=mean("np_precision"),
        np_recall=mean("np_recall"),
        np_f1=mean("np_f1"),
        n_items=len(ids),
        clip_score=clip_mean,
    )
