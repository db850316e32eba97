"""Deterministic word-level tokenizer with lossless byte fallback, a
rule-based noun-phrase chunker over an embedded lexicon, and starting-prompt
validation for caption annotations.

Everything here is pure and reproducible: no model downloads, no global
state. A :class:`Vocab` or :class:`Lexicon` is immutable once built and safe
to share across threads.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, FormatError, RangeError

# Reserved token ids. The 256 byte-fallback ids follow the reserved block,
# learned word tokens start at MIN_VOCAB_SIZE.
PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
EMPTY_ALT_ID = 3
BYTE_OFFSET = 4
N_RESERVED = 4
MIN_VOCAB_SIZE = N_RESERVED + 256

RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<empty_alt>")

_SEGMENT_RE = re.compile(r"(\s+)|(\S+)")


class Vocab:
    """Bijection between token strings and ids.

    Layout: 4 reserved ids, 256 byte ids (``<0x00>`` .. ``<0xff>``), then
    learned word tokens in rank order. Stable across runs for identical
    input corpora.
    """

    def __init__(self, learned: Sequence[str]):
        seen: dict[str, int] = {}
        for rank, word in enumerate(learned):
            if not word or word != word.strip() or any(c.isspace() for c in word):
                raise ConfigError(f"invalid learned token {word!r}")
            if word in seen:
                raise ConfigError(f"duplicate learned token {word!r}")
            seen[word] = MIN_VOCAB_SIZE + rank
        self._word_to_id = seen
        self._id_to_word = {i: w for w, i in seen.items()}

    @property
    def size(self) -> int:
        return MIN_VOCAB_SIZE + len(self._word_to_id)

    def learned_tokens(self) -> list[str]:
        return [self._id_to_word[i] for i in sorted(self._id_to_word)]

    def id_of(self, word: str) -> int | None:
        return self._word_to_id.get(word)

    def word_of(self, token_id: int) -> str:
        return self._id_to_word[token_id]

    def token_string(self, token_id: int) -> str:
        if 0 <= token_id < N_RESERVED:
            return RESERVED_TOKENS[token_id]
        if BYTE_OFFSET <= token_id < MIN_VOCAB_SIZE:
            return f"<0x{token_id - BYTE_OFFSET:02x}>"
        if token_id in self._id_to_word:
            return self._id_to_word[token_id]
        raise RangeError(f"token id {token_id} out of range for vocab of size {self.size}")

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(self.size):
                fh.write(json.dumps({"token": self.token_string(i), "id": i}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        entries: dict[int, str] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                entries[int(obj["id"])] = obj["token"]
        learned = []
        for i in sorted(entries):
            if i < MIN_VOCAB_SIZE:
                continue
            learned.append(entries[i])
        vocab = cls(learned)
        # sanity: reserved entries, when present, must match the fixed layout
        for i, name in enumerate(RESERVED_TOKENS):
            if i in entries and entries[i] != name:
                raise FormatError(f"reserved id {i} maps to {entries[i]!r}, expected {name!r}")
        return vocab


def build_vocab(texts: Iterable[str], size: int) -> Vocab:
    """Greedy frequency-ranked word vocabulary.

    Fills at most ``size - MIN_VOCAB_SIZE`` learned slots; ties broken
    lexicographically so the result is deterministic for identical input.
    """
    if size < MIN_VOCAB_SIZE:
        raise ConfigError(
            f"vocab size {size} below minimum {MIN_VOCAB_SIZE} (reserved + byte block)"
        )
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(text.split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    learned = [w for w, _ in ranked[: size - MIN_VOCAB_SIZE]]
    return Vocab(learned)


def _byte_ids(text: str) -> list[int]:
    return [BYTE_OFFSET + b for b in text.encode("utf-8")]


def tokenize(vocab: Vocab, text: str) -> list[int]:
    """Encode ``text`` to token ids.

    In-vocab words map to learned ids separated by implicit single spaces;
    everything else (out-of-vocabulary words, non-canonical whitespace) is
    emitted as UTF-8 byte-fallback ids, so ``detokenize`` can reproduce the
    input exactly.
    """
    ids: list[int] = []
    pending: list[str] = []  # raw text destined for byte fallback
    prev_learned = False

    def flush() -> None:
        if pending:
            ids.extend(_byte_ids("".join(pending)))
            pending.clear()

    segments = [(m.group(1), m.group(2)) for m in _SEGMENT_RE.finditer(text)]
    for idx, (sep, word) in enumerate(segments):
        if word is not None:
            wid = vocab.id_of(word)
            if wid is not None:
                flush()
                ids.append(wid)
                prev_learned = True
            else:
                pending.append(word)
                prev_learned = False
        else:
            last = idx == len(segments) - 1
            if sep == " " and not last:
                # canonical separator: implicit after a learned word,
                # swallowed into the byte run after an OOV word
                if not prev_learned:
                    pending.append(sep)
            else:
                pending.append(sep)
                prev_learned = False
    flush()
    return ids


@dataclass
class DetokenizeMeta:
    invalid_utf8: bool = False
    truncated_at_eos: bool = False


def detokenize(vocab: Vocab, ids: Sequence[int], return_meta: bool = False):
    """Inverse of :func:`tokenize` up to single-space joining of word tokens.

    EOS truncates the output; PAD/BOS/EMPTY_ALT are skipped. Byte runs that
    are not valid UTF-8 decode with replacement characters and set the
    ``invalid_utf8`` flag on the returned metadata.
    """
    meta = DetokenizeMeta()
    pieces: list[tuple[str, str]] = []  # (kind, text), kind in {"word", "bytes"}
    buf = bytearray()

    def flush_bytes() -> None:
        nonlocal buf
        if buf:
            try:
                decoded = bytes(buf).decode("utf-8")
            except UnicodeDecodeError:
                decoded = bytes(buf).decode("utf-8", errors="replace")
                meta.invalid_utf8 = True
            pieces.append(("bytes", decoded))
            buf = bytearray()

    for token_id in ids:
        token_id = int(token_id)
        if token_id == EOS_ID:
            meta.truncated_at_eos = True
            break
        if token_id in (PAD_ID, BOS_ID, EMPTY_ALT_ID):
            flush_bytes()
            continue
        if BYTE_OFFSET <= token_id < MIN_VOCAB_SIZE:
            buf.append(token_id - BYTE_OFFSET)
            continue
        if token_id < 0 or token_id >= vocab.size:
            raise RangeError(f"token id {token_id} out of range for vocab of size {vocab.size}")
        flush_bytes()
        pieces.append(("word", vocab.word_of(token_id)))
    flush_bytes()

    out: list[str] = []
    prev_kind: str | None = None
    for kind, piece in pieces:
        if not piece:
            continue
        if prev_kind == "word" and not piece[0].isspace():
            out.append(" ")
        out.append(piece)
        prev_kind = kind
    text = "".join(out)
    return (text, meta) if return_meta else text


# ---------------------------------------------------------------------------
# Noun-phrase extraction
# ---------------------------------------------------------------------------

_WORD_OR_PUNCT_RE = re.compile(r"[\w'\-]+|[^\w\s]")

_SUFFIX_TAGS = (
    ("ing", "VERB"),
    ("ed", "VERB"),
    ("ly", "OTHER"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("ic", "ADJ"),
)


class Lexicon:
    """Word to coarse-POS lookup: explicit entries plus suffix heuristics.

    Lookup is total; unknown words without a matching suffix default to NOUN,
    which keeps proper nouns and domain terms chunkable.
    """

    def __init__(self, entries: dict[str, frozenset[str]]):
        self._entries = dict(entries)

    def explicit_tags(self, word: str) -> frozenset[str] | None:
        return self._entries.get(word)

    def tags(self, word: str) -> frozenset[str]:
        known = self._entries.get(word)
        if known is not None:
            return known
        for suffix, tag in _SUFFIX_TAGS:
            if word.endswith(suffix) and len(word) > len(suffix) + 2:
                return frozenset({tag})
        return frozenset({"NOUN"})

    def is_noun_entry(self, word: str) -> bool:
        known = self._entries.get(word)
        return known is not None and "NOUN" in known

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in sorted(self._entries):
                fh.write(json.dumps({"word": word, "tags": sorted(self._entries[word])}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        entries: dict[str, frozenset[str]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                entries[obj["word"]] = frozenset(obj["tags"])
        return cls(entries)


def _build_default_entries() -> dict[str, frozenset[str]]:
    groups = {
        "DET": """a an the this that these those my your his her its our their some any
                  no each every either neither both all another""",
        "PRON": """i you he she it we they me him them us who whom what which someone
                   something anything everything nothing one""",
        "ADP": """in on at of with by for to from into onto over under above below near
                  behind beside between through during against around across within
                  without toward towards upon off after before along inside outside""",
        "VERB": """is are was were be been being am has have had do does did can could
                   will would shall should may might must stand stands sit sits walk
                   walks run runs look looks show shows see sees hold holds wear wears
                   make makes take takes give gives get gets go goes come comes
                   appear appears seem seems contain contains include includes
                   depict depicts create creates say says said""",
        "OTHER": """and or but not nor as if then than so because while when where how
                    why also very too just only there here out up down more most less
                    least quite rather almost about such""",
        "ADJ": """red blue green yellow black white brown pink purple gray grey golden
                  silver beige dark bright pale colorful big small large little tiny
                  huge tall short long wide narrow thick thin old new young vintage
                  modern ancient great good bad fine beautiful pretty clear blurry
                  clean dirty soft hard wooden metal plastic stone round square flat
                  deep shallow high low open closed full empty fresh wild natural
                  distinctive elaborate intricate several many few other same main
                  second third visible gilded grassy sandy rocky leafy fluffy
                  recessed adjustable stainless crispy creamy shredded sliced""",
        "NOUN": """photo image picture photograph painting rendering sculpture cartoon
                   drawing illustration product resolution dog cat bird owl fish horse
                   monkey lizard iguana animal plant tree flower leaf branch park beach
                   forest mountain river lake sea ocean sky cloud sun moon field garden
                   road street city town building house bridge tower wall door window
                   roof room table chair shelf bed man woman boy girl person child
                   shell rock sand grass water snow ice fire background foreground
                   color pattern design statue figure pedestal jewelry attire fabric
                   shirt hat shoe dress jacket car truck boat ship train plane bicycle
                   wheel camera phone computer screen lamp bottle cup glass plate bowl
                   food fruit apple cake bread object device structure vehicle garment
                   instrument creature thing detail scene view front back top bottom
                   side center middle edge corner group pair set collection mushroom
                   feather wing tail beak fence pole basket pool deck light""",
    }
    entries: dict[str, set[str]] = {}
    for tag, words in groups.items():
        for word in words.split():
            entries.setdefault(word, set()).add(tag)
    # a handful of genuinely ambiguous words
    for word, tags in {
        "light": {"ADJ", "NOUN"},
        "orange": {"ADJ", "NOUN"},
        "back": {"NOUN", "ADP"},
        "that": {"DET", "PRON"},
        "her": {"DET", "PRON"},
        "his": {"DET", "PRON"},
        "its": {"DET", "PRON"},
    }.items():
        entries[word] = set(tags)
    return {w: frozenset(t) for w, t in entries.items()}


_DEFAULT_LEXICON: Lexicon | None = None


def default_lexicon() -> Lexicon:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = Lexicon(_build_default_entries())
    return _DEFAULT_LEXICON


def _normalize_phrase(words: list[str], lexicon: Lexicon) -> str:
    words = [w.lower() for w in words]
    last = words[-1]
    if last.endswith("s") and len(last) > 1 and lexicon.is_noun_entry(last[:-1]):
        words[-1] = last[:-1]
    return " ".join(words)


def noun_phrases(text: str, lexicon: Lexicon | None = None) -> set[str]:
    """Extract the set of normalized noun phrases from ``text``.

    Chunk grammar: ``(DET)? (ADJ|NOUN)* NOUN``, with punctuation breaking
    chunks. Normalization lowercases, strips determiners and folds a trailing
    plural "s" when the singular is a known lexicon noun.
    """
    lexicon = lexicon or default_lexicon()
    tokens = _WORD_OR_PUNCT_RE.findall(text)
    n = len(tokens)
    tags: list[frozenset[str] | None] = []
    for tok in tokens:
        if not re.search(r"\w", tok):
            tags.append(None)  # punctuation: chunk boundary
        else:
            tags.append(lexicon.tags(tok.lower()))

    phrases: set[str] = set()
    i = 0
    while i < n:
        t = tags[i]
        if t is None:
            i += 1
            continue
        j = i
        if "DET" in t:
            j = i + 1
        k = j
        last_noun = -1
        while k < n:
            tk = tags[k]
            if tk is None or "DET" in tk or not ({"ADJ", "NOUN"} & tk):
                break
            if "NOUN" in tk:
                last_noun = k
            k += 1
        if last_noun >= j:
            phrases.add(_normalize_phrase(tokens[j : last_noun + 1], lexicon))
            i = last_noun + 1
        else:
            i = k if k > i else i + 1
    return phrases


# ---------------------------------------------------------------------------
# Starting-prompt validation
# ---------------------------------------------------------------------------

STARTING_PROMPTS = (
    "a photo of",
    "a product photo of",
    "a low resolution photo of",
    "a cropped photo of",
    "a close-up photo of",
    "a black and white photo of",
    "a blurry photo of",
    "a rendering of",
    "a sculpture of",
    "a painting of",
    "a cartoon of",
)


@dataclass(frozen=True)
class PromptMatch:
    accepted: bool
    prompt: str | None = None


def starting_prompt_check(text: str) -> PromptMatch:
    """Accept iff ``text`` begins (case-insensitively) with a recommended
    concise starting prompt; returns which prompt matched."""
    lowered = text.lower()
    best: str | None = None
    for prompt in STARTING_PROMPTS:
        if lowered.startswith(prompt) and (best is None or len(prompt) > len(best)):
            best = prompt
    return PromptMatch(best is not None, best)


def word_count(text: str) -> int:
    """Number of maximal non-whitespace runs."""
    return len(text.split())
