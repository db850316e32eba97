import math

import numpy as np
import pytest

import altogether.train as train_mod
from altogether.errors import ConfigError, RangeError, TrainingDivergedError, ValidationError
from altogether.model import DecodeConfig, ModelConfig, init_model
from altogether.textproc import EMPTY_ALT_ID, tokenize
from altogether.train import (
    AdamW,
    TrainConfig,
    TrainTriple,
    WorldSpec,
    bench_throughput,
    clip_gradients,
    finetune,
    grad_check,
    lr_schedule,
    pretrain,
    realign_eval,
    synth_world,
)
from conftest import make_batch


class TestSchedule:
    CFG = TrainConfig(warmup_steps=100, peak_lr=2e-3, min_lr_ratio=0.1)

    def test_peak_at_warmup_end_exact(self):
        assert lr_schedule(100, 1000, self.CFG) == 2e-3

    def test_linear_half_warmup(self):
        assert lr_schedule(50, 1000, self.CFG) == pytest.approx(1e-3)

    def test_floor_at_end_exact(self):
        assert lr_schedule(1000, 1000, self.CFG) == pytest.approx(0.1 * 2e-3, abs=0)

    def test_out_of_range(self):
        with pytest.raises(RangeError):
            lr_schedule(1001, 1000, self.CFG)
        with pytest.raises(RangeError):
            lr_schedule(-1, 1000, self.CFG)

    def test_monotone_after_warmup(self):
        values = [lr_schedule(s, 1000, self.CFG) for s in range(100, 1001)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_no_jump_at_joint(self):
        before = lr_schedule(99, 1000, self.CFG)
        peak = lr_schedule(100, 1000, self.CFG)
        after = lr_schedule(101, 1000, self.CFG)
        assert before < peak
        assert peak - after < peak * 0.001  # cosine starts flat

    def test_zero_warmup(self):
        cfg = TrainConfig(warmup_steps=0, peak_lr=1e-3, min_lr_ratio=0.5)
        assert lr_schedule(0, 10, cfg) == 1e-3
        assert lr_schedule(10, 10, cfg) == pytest.approx(5e-4)


class TestOptimizer:
    def test_clipping_bounds_global_norm(self, tiny_params, tiny_batch):
        from altogether.model import loss_and_grads

        _, _, grads = loss_and_grads(tiny_params, tiny_batch)
        for g in grads.values():
            g *= 1e6  # force clipping
        pre = clip_gradients(grads, 1.0)
        assert pre > 1.0
        post = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        assert post <= 1.0 + 1e-12

    def test_no_clip_below_threshold(self, tiny_params, tiny_batch):
        from altogether.model import loss_and_grads

        _, _, grads = loss_and_grads(tiny_params, tiny_batch)
        snapshot = {k: v.copy() for k, v in grads.items()}
        clip_gradients(grads, 1e9)
        for k in grads:
            assert np.array_equal(grads[k], snapshot[k])

    def test_weight_decay_skips_vectors(self, tiny_params, tiny_batch):
        from altogether.model import loss_and_grads

        params = tiny_params.copy()
        opt = AdamW(params, weight_decay=0.5)
        _, _, grads = loss_and_grads(params, tiny_batch)
        for g in grads.values():
            g[:] = 0.0
        gains_before = params.tensors["final_ln_g"].copy()
        matrix_before = params.tensors["out_w"].copy()
        opt.step(params, grads, lr=0.1)
        assert np.array_equal(params.tensors["final_ln_g"], gains_before)
        assert not np.array_equal(params.tensors["out_w"], matrix_before)


def _toy_triples(n, config, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        out.append(
            TrainTriple(
                image_vec=rng.normal(size=config.image_embed_dim),
                alt_ids=tuple(int(t) for t in rng.integers(4, config.vocab_size, size=3)),
                caption_ids=tuple(int(t) for t in rng.integers(4, config.vocab_size, size=5)),
                item_id=f"t{k}",
            )
        )
    return out


class TestTrainingLoop:
    def test_step_arithmetic_16_items_4_epochs(self, tiny_config, tiny_params):
        triples = _toy_triples(16, tiny_config)
        cfg = TrainConfig(batch_size=4, warmup_steps=2, finetune_epochs=4, seed=0)
        _, history = finetune(tiny_params, triples, cfg)
        assert len(history) == 16

    def test_paper_scale_step_arithmetic(self):
        # 22M items at batch 512 for one epoch
        assert math.ceil(22_000_000 / 512) == 42969

    def test_zero_epochs_bitwise_unchanged(self, tiny_config, tiny_params):
        triples = _toy_triples(4, tiny_config)
        cfg = TrainConfig(batch_size=4, finetune_epochs=0, seed=0)
        trained, history = finetune(tiny_params, triples, cfg)
        assert history == []
        assert trained.allclose(tiny_params)

    def test_deterministic_runs(self, tiny_config, tiny_params):
        triples = _toy_triples(8, tiny_config)
        cfg = TrainConfig(batch_size=4, warmup_steps=2, pretrain_epochs=2, seed=5)
        a, hist_a = pretrain(tiny_params, triples, cfg)
        b, hist_b = pretrain(tiny_params, triples, cfg)
        assert a.allclose(b)
        assert hist_a == hist_b

    def test_loss_decreases_on_finetune_set(self, tiny_config, tiny_params):
        from altogether.model import forward_loss
        from altogether.train import _make_batch

        triples = _toy_triples(8, tiny_config)
        batch = _make_batch(triples, tiny_config, np.zeros(8, dtype=bool))
        before, _ = forward_loss(tiny_params, batch)
        cfg = TrainConfig(batch_size=8, warmup_steps=5, peak_lr=3e-3,
                          finetune_epochs=30, empty_alt_prob=0.0, seed=0)
        trained, _ = finetune(tiny_params, triples, cfg)
        after, _ = forward_loss(trained, batch)
        assert after < before

    def test_divergence_diagnostics(self, tiny_config, tiny_params):
        params = tiny_params.copy()
        params.tensors["out_w"][:] = 1e308
        triples = _toy_triples(4, tiny_config)
        cfg = TrainConfig(batch_size=2, pretrain_epochs=1, seed=0)
        with pytest.raises(TrainingDivergedError) as err:
            pretrain(params, triples, cfg)
        assert err.value.step == 1
        assert len(err.value.batch_ids) == 2

    def test_training_log_schema(self, tiny_config, tiny_params, tmp_path):
        import json

        triples = _toy_triples(4, tiny_config)
        cfg = TrainConfig(batch_size=4, warmup_steps=1, pretrain_epochs=1, seed=0)
        log_path = tmp_path / "train.jsonl"
        pretrain(tiny_params, triples, cfg, log_path=log_path)
        rows = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert len(rows) == 1
        assert set(rows[0]) == {"step", "lr", "loss", "grad_norm"}

    def test_empty_alt_frequency_and_independence(self, monkeypatch):
        config = ModelConfig(d_model=8, n_heads=2, n_decoder_layers=1, n_mapping_layers=1,
                             vocab_size=280, image_embed_dim=4, n_visual=2, m_alt=4, max_gen=6)
        params = init_model(config, 0)
        triples = _toy_triples(10000, config, seed=9)
        observed: list[tuple[str, bool]] = []
        real_make_batch = train_mod._make_batch

        def spy(chosen, cfg, empty_mask):
            observed.extend((t.item_id, bool(e)) for t, e in zip(chosen, empty_mask))
            return real_make_batch(chosen, cfg, empty_mask)

        monkeypatch.setattr(train_mod, "_make_batch", spy)
        cfg = TrainConfig(batch_size=500, warmup_steps=1, pretrain_epochs=1,
                          empty_alt_prob=0.5, seed=3)
        pretrain(params, triples, cfg)
        assert len(observed) == 10000
        rate = sum(e for _, e in observed) / len(observed)
        assert abs(rate - 0.5) < 0.02
        # chi-squared over 8 item buckets: emptying must be independent of identity
        buckets = np.zeros(8)
        totals = np.zeros(8)
        for item_id, emptied in observed:
            b = int(item_id[1:]) % 8
            totals[b] += 1
            buckets[b] += emptied
        expected = totals * rate
        chi2 = float(((buckets - expected) ** 2 / (expected * (1 - rate))).sum())
        assert chi2 < 26.0  # df=7, far beyond the 0.001 critical value 24.3

    def test_emptied_rows_use_empty_alt_token(self, tiny_config):
        from altogether.train import _make_batch

        triples = _toy_triples(2, tiny_config)
        batch = _make_batch(triples, tiny_config, np.array([True, False]))
        nv = tiny_config.n_visual
        assert batch.tokens[0, nv] == EMPTY_ALT_ID
        assert batch.tokens[1, nv] == triples[1].alt_ids[0]


class TestGradCheck:
    def test_zero_coordinate_request_rejected(self, tiny_params, tiny_batch):
        with pytest.raises(ValidationError):
            grad_check(tiny_params, tiny_batch, max_coords=0)

    def test_subset_below_threshold(self, tiny_params, tiny_batch):
        err = grad_check(tiny_params, tiny_batch, max_coords=300, seed=0)
        assert err < 1e-4

    def test_frozen_coordinate_agrees_at_zero(self, tiny_params, tiny_batch):
        from altogether.model import forward_loss, loss_and_grads

        _, _, grads = loss_and_grads(tiny_params, tiny_batch)
        used = set(tiny_batch.tokens[:, tiny_params.config.n_visual :].ravel().tolist())
        used |= set(tiny_batch.targets[tiny_batch.loss_mask].ravel().tolist())
        unused = next(t for t in range(tiny_params.config.vocab_size) if t not in used)
        assert np.all(grads["tok_emb"][unused] == 0.0)
        flat = tiny_params.tensors["tok_emb"]
        original = flat[unused, 0]
        eps = 1e-3
        flat[unused, 0] = original + eps
        hi, _ = forward_loss(tiny_params, tiny_batch)
        flat[unused, 0] = original - eps
        lo, _ = forward_loss(tiny_params, tiny_batch)
        flat[unused, 0] = original
        assert hi == lo  # loss constant in a frozen coordinate


class TestWorld:
    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            WorldSpec(rare_fraction=0.0)
        with pytest.raises(ConfigError):
            WorldSpec(distractor_rate=1.5)
        with pytest.raises(ConfigError):
            WorldSpec(n_concepts=3, concepts_per_image=3)

    def test_zero_distractor_rate(self):
        world = synth_world(WorldSpec(distractor_rate=0.0, seed=1))
        for item in world.items(300):
            assert item.distractor_id is None
            names = set(item.alt_text.split()) - {"and"}
            truth = {world.names[c] for c in item.concept_ids}
            assert names <= truth

    def test_same_seed_identical_streams(self):
        a = synth_world(WorldSpec(seed=4)).items(50)
        b = synth_world(WorldSpec(seed=4)).items(50)
        assert [i.alt_text for i in a] == [j.alt_text for j in b]
        assert [i.caption for i in a] == [j.caption for j in b]
        assert all(np.array_equal(i.image_vec, j.image_vec) for i, j in zip(a, b))

    def test_stream_prefix_stable(self):
        world = synth_world(WorldSpec(seed=4))
        assert [i.caption for i in world.items(10)] == [i.caption for i in world.items(30)[:10]]

    def test_distractor_frequency(self):
        world = synth_world(WorldSpec(distractor_rate=0.2, seed=6))
        items = world.items(1000)
        rate = sum(i.distractor_id is not None for i in items) / len(items)
        assert abs(rate - 0.2) < 0.02

    def test_rare_concepts_invisible_to_embedding(self):
        world = synth_world(WorldSpec(seed=2))
        rare = next(iter(world.rare_ids))
        visible = [c for c in range(world.spec.n_concepts) if c not in world.rare_ids][:2]
        with_rare = world.image_embedding(visible + [rare])
        without = world.image_embedding(visible)
        assert np.array_equal(with_rare, without)

    def test_caption_uses_rare_name_iff_in_alt(self):
        world = synth_world(WorldSpec(seed=8))
        for item in world.items(400):
            for cid in item.concept_ids:
                if cid not in world.rare_ids:
                    assert world.names[cid] in item.caption
                elif cid in item.rare_in_alt:
                    assert world.names[cid] in item.caption
                else:
                    assert world.names[cid] not in item.caption.split()
                    assert world.hypernyms[cid] in item.caption

    def test_distractors_never_rare_never_true(self):
        world = synth_world(WorldSpec(distractor_rate=1.0, seed=3))
        for item in world.items(200):
            assert item.distractor_id is not None
            assert item.distractor_id not in world.rare_ids
            assert item.distractor_id not in item.concept_ids
            assert world.names[item.distractor_id] not in item.caption

    def test_empty_variant_consistency(self):
        world = synth_world(WorldSpec(seed=5))
        item = next(i for i in world.items(50) if i.rare_in_alt)
        empty = world.empty_variant(item)
        assert empty.alt_text == ""
        assert all(world.names[c] not in empty.caption.split()
                   for c in item.concept_ids if c in world.rare_ids)

    def test_vocabulary_covers_world_text(self):
        world = synth_world(WorldSpec(seed=7))
        vocab = world.vocabulary()
        for item in world.items(100):
            for word in (item.alt_text + " " + item.caption).split():
                assert vocab.id_of(word) is not None, word


class TestRealignEvalShape:
    def test_untrained_near_zero_floor(self):
        world = synth_world(WorldSpec(seed=1))
        vocab = world.vocabulary()
        config = ModelConfig(d_model=16, n_heads=2, n_decoder_layers=1, n_mapping_layers=1,
                             vocab_size=vocab.size, image_embed_dim=24,
                             n_visual=4, m_alt=12, max_gen=16)
        params = init_model(config, 0)
        report = realign_eval(params, world.items(20), world, vocab)
        assert report.n_items == 20
        assert report.np_f1_with_alt < 0.3
        assert report.np_f1_empty_alt < 0.3


class TestBench:
    def test_duration_validation(self, tiny_params):
        with pytest.raises(ValidationError):
            bench_throughput(tiny_params, 28, duration=0.2)

    def test_report_fields(self, tiny_params, tiny_config):
        report = bench_throughput(tiny_params, tiny_config.total_len, batch_size=2, duration=1.0)
        assert report.items_per_second > 0
        assert report.wall_seconds >= 1.0
        assert report.parameter_count == tiny_params.param_count
        assert report.sequence_length == tiny_config.total_len
        assert report.batch_size == 2
        assert report.config_hash

    def test_sequence_length_bounds(self, tiny_params, tiny_config):
        with pytest.raises(ConfigError):
            bench_throughput(tiny_params, tiny_config.n_visual + tiny_config.max_gen - 1, duration=1.0)
        with pytest.raises(ConfigError):
            bench_throughput(tiny_params, tiny_config.total_len + 1, duration=1.0)
