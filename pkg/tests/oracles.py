"""Independent brute-force oracles for the test suite.

These deliberately share no code with the package: full-table DP for edit
distance, naive counting for BLEU, memoized recursion for LCS, and a
straight-from-the-formula CIDEr. They stay simple and slow so the
production implementations can be checked against them.
"""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache


def edit_distance_full_table(a: str, b: str) -> int:
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + cost,
            )
    return table[n][m]


def bleu1_brute(candidate: str, references: list[str]) -> float:
    cand = candidate.split()
    if not cand:
        return 0.0
    total = 0
    for token in set(cand):
        cand_count = cand.count(token)
        best_ref = max(ref.split().count(token) for ref in references)
        total += min(cand_count, best_ref)
    precision = total / len(cand)
    c = len(cand)
    best = None
    for ref in references:
        r = len(ref.split())
        if best is None or abs(r - c) < abs(best - c) or (abs(r - c) == abs(best - c) and r < best):
            best = r
    bp = math.exp(1 - best / c) if c < best else 1.0
    return precision * bp


def lcs_brute(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def rouge_l_brute(candidate: str, reference: str) -> float:
    cand = tuple(candidate.split())
    ref = tuple(reference.split())
    if not cand or not ref:
        return 0.0
    lcs = lcs_brute(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


def document_frequencies_brute(corpus: list[str], max_order: int = 4) -> dict:
    df: dict[int, dict[tuple, int]] = {n: {} for n in range(1, max_order + 1)}
    for doc in corpus:
        words = doc.split()
        for n in range(1, max_order + 1):
            grams = set()
            for i in range(len(words) - n + 1):
                grams.add(tuple(words[i : i + n]))
            for gram in grams:
                df[n][gram] = df[n].get(gram, 0) + 1
    return df


def cider_d_brute(
    candidate: str,
    references: list[str],
    corpus: list[str],
    sigma: float = 6.0,
    max_order: int = 4,
) -> float:
    """CIDEr-D straight from the definition: df tables over ``corpus``,
    per-order TF-IDF vectors, clipped dot product, Gaussian length penalty,
    averaged over references and orders, times 10."""
    df = document_frequencies_brute(corpus, max_order)
    n_docs = len(corpus)

    def grams_of(words: list[str], n: int) -> Counter:
        out: Counter = Counter()
        for i in range(len(words) - n + 1):
            out[tuple(words[i : i + n])] += 1
        return out

    def tfidf(words: list[str], n: int) -> dict:
        vec = {}
        for gram, count in grams_of(words, n).items():
            idf = math.log(n_docs / max(df[n].get(gram, 0), 1))
            vec[gram] = count * idf
        return vec

    cand_words = candidate.split()
    if not cand_words:
        return 0.0
    score = 0.0
    for n in range(1, max_order + 1):
        cand_vec = tfidf(cand_words, n)
        cand_norm = math.sqrt(sum(v * v for v in cand_vec.values()))
        per_ref = []
        for reference in references:
            ref_words = reference.split()
            ref_vec = tfidf(ref_words, n)
            ref_norm = math.sqrt(sum(v * v for v in ref_vec.values()))
            if cand_norm == 0 or ref_norm == 0:
                per_ref.append(0.0)
                continue
            dot = 0.0
            for gram in cand_vec:
                if gram in ref_vec:
                    dot += min(cand_vec[gram], ref_vec[gram]) * ref_vec[gram]
            delta = len(cand_words) - len(ref_words)
            penalty = math.exp(-(delta**2) / (2 * sigma**2))
            per_ref.append(penalty * dot / (cand_norm * ref_norm))
        score += sum(per_ref) / len(per_ref)
    return 10.0 * score / max_order


def random_unicode(rng, max_len: int = 200) -> str:
    """Random text over a mixed alphabet (ASCII, accents, CJK, emoji), never
    containing surrogates."""
    pools = (
        "abcdefghij klmnopqrstuvwxyz",
        "àéîõüßçñ ΩλπБД",
        "日本語中文한국어",
        "🦉🌊🍞⛰️🎻",
    )
    length = int(rng.integers(0, max_len + 1))
    chars = []
    for _ in range(length):
        pool = pools[int(rng.integers(len(pools)))]
        chars.append(pool[int(rng.integers(len(pool)))])
    return "".join(chars)
