"""Training loop (pretrain + finetune phases), warmup/cosine schedule,
empty-alt sampling, finite-difference gradient checking, the synthetic
concept world used to make re-alignment gains measurable at desk scale, and
the sequence-length throughput bench.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, RangeError, TrainingDivergedError, ValidationError
from .metrics import np_prf
from .model import (
    DecodeConfig,
    ModelConfig,
    ModelParams,
    SequenceBatch,
    concat_rows,
    forward_loss,
    generate_batch,
    layout_sequence,
    loss_and_grads,
)
from .textproc import Lexicon, Vocab, build_vocab, detokenize, tokenize


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    peak_lr: float = 1e-3
    warmup_steps: int = 2000
    min_lr_ratio: float = 0.1
    pretrain_epochs: int = 1
    finetune_epochs: int = 4
    empty_alt_prob: float = 0.5
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.peak_lr <= 0:
            raise ConfigError("peak_lr must be positive")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if not (0.0 < self.min_lr_ratio <= 1.0):
            raise ConfigError("min_lr_ratio must be in (0, 1]")
        if not (0.0 <= self.empty_alt_prob <= 1.0):
            raise ConfigError("empty_alt_prob must be in [0, 1]")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be positive")


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr`` over ``warmup_steps``, then cosine
    decay to ``min_lr_ratio * peak_lr`` at ``total_steps``."""
    if step < 0 or step > total_steps:
        raise RangeError(f"step {step} outside [0, {total_steps}]")
    warm = cfg.warmup_steps
    if step < warm:
        return cfg.peak_lr * step / warm
    if total_steps <= warm:
        return cfg.peak_lr
    floor = cfg.min_lr_ratio * cfg.peak_lr
    frac = (step - warm) / (total_steps - warm)
    return floor + 0.5 * (cfg.peak_lr - floor) * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adaptive moments with decoupled weight decay; decay applies only to
    matrices (embeddings, projections), never to gains or biases."""

    def __init__(self, params: ModelParams, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, tensor in params.tensors.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if tensor.ndim >= 2 and self.weight_decay:
                tensor -= lr * self.weight_decay * tensor
            tensor -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so the global L2 norm is at most
    ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass(frozen=True)
class TrainTriple:
    """One training example: image embedding, alt conditioning, caption target."""

    image_vec: np.ndarray
    alt_ids: tuple[int, ...]
    caption_ids: tuple[int, ...]
    item_id: str = ""


def _make_batch(
    triples: Sequence[TrainTriple],
    config: ModelConfig,
    empty_mask: np.ndarray,
) -> SequenceBatch:
    rows = []
    for triple, emptied in zip(triples, empty_mask):
        alt = () if emptied else triple.alt_ids
        rows.append(layout_sequence(triple.image_vec, alt, triple.caption_ids, config))
    return concat_rows(rows)


def _run_epochs(
    params: ModelParams,
    triples: Sequence[TrainTriple],
    cfg: TrainConfig,
    epochs: int,
    log_path: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> tuple[ModelParams, list[dict]]:
    triples = list(triples)
    if not triples:
        raise ValidationError("training requires at least one example")
    trained = params.copy()
    history: list[dict] = []
    if epochs == 0:
        return trained, history
    steps_per_epoch = math.ceil(len(triples) / cfg.batch_size)
    total_steps = epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)
    optimizer = AdamW(trained, cfg.weight_decay)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    try:
        for _ in range(epochs):
            order = rng.permutation(len(triples))
            for start in range(0, len(triples), cfg.batch_size):
                chosen = [triples[i] for i in order[start : start + cfg.batch_size]]
                emptied = rng.random(len(chosen)) < cfg.empty_alt_prob
                batch = _make_batch(chosen, trained.config, emptied)
                step += 1
                lr = lr_schedule(step, total_steps, cfg)
                loss, _, grads = loss_and_grads(trained, batch)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(step, [t.item_id for t in chosen])
                grad_norm = clip_gradients(grads, cfg.grad_clip_norm)
                optimizer.step(trained, grads, lr)
                entry = {"step": step, "lr": lr, "loss": loss, "grad_norm": grad_norm}
                history.append(entry)
                if log_fh:
                    log_fh.write(json.dumps(entry) + "\n")
                if on_step:
                    on_step(entry)
    finally:
        if log_fh:
            log_fh.close()
    return trained, history


def pretrain(
    params: ModelParams,
    corpus_stream: Iterable[TrainTriple],
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Run ``pretrain_epochs`` over the stream; per batch item the alt region
    is replaced by EMPTY_ALT with probability ``empty_alt_prob``."""
    return _run_epochs(params, list(corpus_stream), cfg, cfg.pretrain_epochs, log_path, on_step)


def finetune(
    params: ModelParams,
    annotated: Iterable[TrainTriple],
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Same loop as pretrain over ``finetune_epochs``; callers supply the
    latest-round captions as targets with the original alt-texts."""
    return _run_epochs(params, list(annotated), cfg, cfg.finetune_epochs, log_path, on_step)


GRAD_CHECK_DENOM_FLOOR = 0.05


def grad_check(
    params: ModelParams,
    batch: SequenceBatch,
    epsilon: float = 1e-3,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences over every parameter coordinate (or a seeded subset).

    Per-coordinate error is ``|a - fd| / max(|a|, |fd|, 0.05)``: coordinates
    whose gradient magnitude sits below the floor are held to the matching
    absolute tolerance instead. That floor sits two orders of magnitude
    above the eps^2 truncation noise of the central-difference probe while
    staying far below the error any structural backward-pass bug produces,
    so the comparison still separates noise from defects cleanly.
    """
    _, _, grads = loss_and_grads(params, batch)
    coords: list[tuple[str, int]] = []
    for name, tensor in params.tensors.items():
        coords.extend((name, i) for i in range(tensor.size))
    if max_coords is not None:
        if max_coords < 1:
            raise ValidationError("grad_check requires at least one coordinate")
        if max_coords < len(coords):
            rng = np.random.default_rng(seed)
            picked = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(picked)]
    worst = 0.0
    for name, flat_idx in coords:
        flat = params.tensors[name].reshape(-1)
        original = flat[flat_idx]
        flat[flat_idx] = original + epsilon
        lo_hi, _ = forward_loss(params, batch)
        flat[flat_idx] = original - epsilon
        lo_lo, _ = forward_loss(params, batch)
        flat[flat_idx] = original
        fd = (lo_hi - lo_lo) / (2.0 * epsilon)
        analytic = float(grads[name].reshape(-1)[flat_idx])
        denom = max(abs(analytic), abs(fd), GRAD_CHECK_DENOM_FLOOR)
        worst = max(worst, abs(analytic - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# Synthetic concept world
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldSpec:
    n_concepts: int = 48
    rare_fraction: float = 0.3
    concepts_per_image: int = 3
    distractor_rate: float = 0.2
    embed_dim: int = 24
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.rare_fraction < 1.0):
            raise ConfigError("rare_fraction must be in (0, 1)")
        if self.concepts_per_image < 1:
            raise ConfigError("concepts_per_image must be >= 1")
        if not (0.0 <= self.distractor_rate <= 1.0):
            raise ConfigError("distractor_rate must be in [0, 1]")
        if self.n_concepts <= self.concepts_per_image:
            raise ConfigError("n_concepts must exceed concepts_per_image")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be >= 2")


@dataclass(frozen=True)
class WorldItem:
    id: str
    concept_ids: tuple[int, ...]
    image_vec: np.ndarray
    alt_text: str
    caption: str
    distractor_id: int | None
    rare_in_alt: tuple[int, ...]


_HYPERNYMS = ("animal", "plant", "object", "device", "structure", "vehicle", "garment", "instrument")
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class World:
    """Concept universe where images are concept sets, rare concepts are
    invisible to the image embedding, and alt-texts partially overlap the
    truth.

    Rare concepts contribute nothing to F(i): only alt-text can reveal their
    names, so the gap between captioning with and without alt conditioning
    is measurable exactly. Distractors are drawn from the visible (non-rare)
    concepts absent from the image, so a trained captioner can learn to
    reject them from image evidence.
    """

    ALT_INCLUSION = 0.7
    NOISE_SCALE = 0.1

    def __init__(self, spec: WorldSpec):
        self.spec = spec
        seeds = np.random.SeedSequence(spec.seed).spawn(2)
        rng = np.random.default_rng(seeds[0])
        self._stream_seed = seeds[1]
        n = spec.n_concepts
        self.names = self._make_names(rng, n)
        n_rare = max(1, round(spec.rare_fraction * n))
        self.rare_ids = frozenset(int(i) for i in rng.choice(n, size=n_rare, replace=False))
        self.hypernyms = {
            cid: _HYPERNYMS[int(rng.integers(len(_HYPERNYMS)))] for cid in sorted(self.rare_ids)
        }
        self.vectors = rng.normal(0.0, 1.0, size=(n, spec.embed_dim))
        weights = 1.0 / np.arange(1, n + 1) ** 1.05
        self.zipf = weights / weights.sum()
        self._name_to_id = {name: cid for cid, name in enumerate(self.names)}

    @staticmethod
    def _make_names(rng: np.random.Generator, n: int) -> list[str]:
        names: list[str] = []
        seen = set(_HYPERNYMS) | {"a", "photo", "of", "and"}
        while len(names) < n:
            syllables = [
                _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
                + _VOWELS[int(rng.integers(len(_VOWELS)))]
                for _ in range(3)
            ]
            name = "".join(syllables)
            if name not in seen:
                seen.add(name)
                names.append(name)
        return names

    # -- embedding function --------------------------------------------------

    def image_embedding(self, concept_ids: Sequence[int], noise: np.ndarray | None = None) -> np.ndarray:
        """F(i): normalized sum of the non-rare concept vectors plus noise."""
        vec = np.zeros(self.spec.embed_dim, dtype=np.float64)
        for cid in concept_ids:
            if cid not in self.rare_ids:
                vec += self.vectors[cid]
        if noise is not None:
            vec = vec + noise
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            vec = np.ones_like(vec)
            norm = np.linalg.norm(vec)
        return vec / norm

    def text_embedding(self, text: str) -> np.ndarray:
        """Bag-of-concepts text vector for alignment scoring."""
        vec = np.zeros(self.spec.embed_dim, dtype=np.float64)
        for word in text.split():
            cid = self._name_to_id.get(word)
            if cid is not None:
                vec += self.vectors[cid]
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            vec = np.ones_like(vec)
            norm = np.linalg.norm(vec)
        return vec / norm

    # -- item stream ---------------------------------------------------------

    def _caption_for(self, concept_ids: Sequence[int], alt_names: set[str]) -> str:
        parts = []
        for cid in sorted(concept_ids):
            if cid in self.rare_ids and self.names[cid] not in alt_names:
                parts.append(self.hypernyms[cid])
            else:
                parts.append(self.names[cid])
        return "a photo of " + " and ".join(parts)

    def items(self, n: int) -> list[WorldItem]:
        """First ``n`` items of the deterministic stream for this seed."""
        rng = np.random.default_rng(self._stream_seed)
        spec = self.spec
        out: list[WorldItem] = []
        for idx in range(n):
            concept_ids = tuple(
                sorted(
                    int(c)
                    for c in rng.choice(
                        spec.n_concepts, size=spec.concepts_per_image, replace=False, p=self.zipf
                    )
                )
            )
            noise = rng.normal(0.0, self.NOISE_SCALE, size=spec.embed_dim)
            image_vec = self.image_embedding(concept_ids, noise)
            include = rng.random(len(concept_ids)) < self.ALT_INCLUSION
            alt_ids = [cid for cid, keep in zip(concept_ids, include) if keep]
            distractor: int | None = None
            if rng.random() < spec.distractor_rate:
                pool = [
                    c
                    for c in range(spec.n_concepts)
                    if c not in concept_ids and c not in self.rare_ids
                ]
                distractor = int(pool[int(rng.integers(len(pool)))])
                alt_ids.insert(int(rng.integers(len(alt_ids) + 1)), distractor)
            alt_names = [self.names[c] for c in alt_ids]
            alt_text = " and ".join(alt_names)
            caption = self._caption_for(concept_ids, set(alt_names))
            rare_in_alt = tuple(
                cid for cid in concept_ids if cid in self.rare_ids and self.names[cid] in alt_names
            )
            out.append(
                WorldItem(
                    id=f"w{idx:06d}",
                    concept_ids=concept_ids,
                    image_vec=image_vec,
                    alt_text=alt_text,
                    caption=caption,
                    distractor_id=distractor,
                    rare_in_alt=rare_in_alt,
                )
            )
        return out

    def empty_variant(self, item: WorldItem) -> WorldItem:
        """The consistent empty-alt counterpart: no alt-text, every rare
        concept described by its hypernym."""
        return WorldItem(
            id=item.id,
            concept_ids=item.concept_ids,
            image_vec=item.image_vec,
            alt_text="",
            caption=self._caption_for(item.concept_ids, set()),
            distractor_id=None,
            rare_in_alt=(),
        )

    def vocabulary(self) -> Vocab:
        inventory = [" ".join(self.names), " ".join(_HYPERNYMS), "a photo of and"]
        distinct = len(set(" ".join(inventory).split()))
        return build_vocab(inventory, 260 + distinct)

    def training_triples(
        self,
        items: Sequence[WorldItem],
        vocab: Vocab,
        empty_prob: float = 0.5,
        seed: int = 0,
    ) -> list[TrainTriple]:
        """Tokenized triples; with probability ``empty_prob`` an item is
        converted to its consistent empty-alt variant."""
        rng = np.random.default_rng(seed)
        triples = []
        for item in items:
            chosen = self.empty_variant(item) if rng.random() < empty_prob else item
            triples.append(
                TrainTriple(
                    image_vec=chosen.image_vec,
                    alt_ids=tuple(tokenize(vocab, chosen.alt_text)),
                    caption_ids=tuple(tokenize(vocab, chosen.caption)),
                    item_id=chosen.id,
                )
            )
        return triples


def synth_world(spec: WorldSpec) -> World:
    """Build the concept world; exposes the embedding function
    (``image_embedding``) and the deterministic item stream (``items``)."""
    return World(spec)


# ---------------------------------------------------------------------------
# Re-alignment evaluation
# ---------------------------------------------------------------------------


@dataclass
class RealignReport:
    n_items: int
    np_f1_with_alt: float
    np_f1_empty_alt: float
    distractor_mention_rate: float
    rare_copy_rate: float

    @property
    def f1_gap(self) -> float:
        return self.np_f1_with_alt - self.np_f1_empty_alt

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "np_f1_with_alt": self.np_f1_with_alt,
            "np_f1_empty_alt": self.np_f1_empty_alt,
            "f1_gap": self.f1_gap,
            "distractor_mention_rate": self.distractor_mention_rate,
            "rare_copy_rate": self.rare_copy_rate,
        }


def realign_eval(
    params: ModelParams,
    items: Sequence[WorldItem],
    world: World,
    vocab: Vocab,
    lexicon: Lexicon | None = None,
    batch_size: int = 256,
    decode_cfg: DecodeConfig | None = None,
) -> RealignReport:
    """Generate twice per held-out item (real alt vs EMPTY_ALT), score noun
    phrases against the canonical target, and measure distractor mentions
    versus rare-name copying."""
    decode_cfg = decode_cfg or DecodeConfig(temperature=0.0, top_p=1.0, seed=0)
    with_alt_texts: list[str] = []
    empty_texts: list[str] = []
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        vecs = np.stack([it.image_vec for it in chunk])
        alts = [tokenize(vocab, it.alt_text) for it in chunk]
        for ids in generate_batch(params, vecs, alts, decode_cfg):
            with_alt_texts.append(detokenize(vocab, ids))
        for ids in generate_batch(params, vecs, [[] for _ in chunk], decode_cfg):
            empty_texts.append(detokenize(vocab, ids))

    f1_with = []
    f1_empty = []
    distractor_hits = 0
    distractor_total = 0
    rare_hits = 0
    rare_total = 0
    for item, gen_alt, gen_empty in zip(items, with_alt_texts, empty_texts):
        f1_with.append(np_prf(gen_alt, item.caption, lexicon)[2])
        f1_empty.append(np_prf(gen_empty, item.caption, lexicon)[2])
        words = set(gen_alt.split())
        if item.distractor_id is not None:
            distractor_total += 1
            if world.names[item.distractor_id] in words:
                distractor_hits += 1
        for cid in item.rare_in_alt:
            rare_total += 1
            if world.names[cid] in words:
                rare_hits += 1
    return RealignReport(
        n_items=len(items),
        np_f1_with_alt=float(np.mean(f1_with)) if f1_with else 0.0,
        np_f1_empty_alt=float(np.mean(f1_empty)) if f1_empty else 0.0,
        distractor_mention_rate=distractor_hits / distractor_total if distractor_total else 0.0,
        rare_copy_rate=rare_hits / rare_total if rare_total else 0.0,
    )


# ---------------------------------------------------------------------------
# Throughput bench
# ---------------------------------------------------------------------------


@dataclass
class BenchReport:
    sequence_length: int
    items_per_second: float
    parameter_count: int
    wall_seconds: float
    batch_size: int
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "sequence_length": self.sequence_length,
            "items_per_second": self.items_per_second,
            "parameter_count": self.parameter_count,
            "wall_seconds": self.wall_seconds,
            "batch_size": self.batch_size,
            "config_hash": self.config_hash,
        }


def bench_throughput(
    params: ModelParams,
    sequence_length: int,
    batch_size: int = 4,
    duration: float = 1.0,
    seed: int = 0,
) -> BenchReport:
    """Measure full-generation items/second at the requested total layout
    length (visual + alt region + caption region), warmup excluded.

    The alt region is sized to ``sequence_length - n_visual - max_gen`` so
    the same parameters serve multiple sequence lengths.
    """
    if duration < 1.0:
        raise ValidationError("bench duration must be at least 1 second")
    cfg = params.config
    region = sequence_length - cfg.n_visual - cfg.max_gen
    if region < 0:
        raise ConfigError(
            f"sequence length {sequence_length} shorter than visual+caption regions "
            f"({cfg.n_visual}+{cfg.max_gen})"
        )
    if cfg.n_visual + region + cfg.max_gen > cfg.total_len:
        raise ConfigError(
            f"sequence length {sequence_length} exceeds configured layout {cfg.total_len}"
        )
    rng = np.random.default_rng(seed)
    first_word = min(260, cfg.vocab_size - 1)
    vecs = rng.normal(0.0, 1.0, size=(batch_size, cfg.image_embed_dim))
    alts = [
        [int(t) for t in rng.integers(first_word, cfg.vocab_size, size=region)]
        for _ in range(batch_size)
    ]
    decode_cfg = DecodeConfig(temperature=0.0, top_p=1.0, seed=seed)

    def one_batch():
        generate_batch(params, vecs, alts, decode_cfg, alt_region_len=region, stop_at_eos=False)

    one_batch()  # warmup
    done = 0
    start = time.perf_counter()
    while True:
        one_batch()
        done += batch_size
        elapsed = time.perf_counter() - start
        if elapsed >= duration:
            break
    return BenchReport(
        sequence_length=sequence_length,
        items_per_second=done / elapsed,
        parameter_count=params.param_count,
        wall_seconds=elapsed,
        batch_size=batch_size,
        config_hash=cfg.hash(),
    )
