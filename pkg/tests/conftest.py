import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from altogether.model import ModelConfig, concat_rows, init_model, layout_sequence


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        d_model=16,
        n_heads=2,
        n_decoder_layers=2,
        n_mapping_layers=1,
        vocab_size=64,
        image_embed_dim=8,
        n_visual=4,
        m_alt=8,
        max_gen=16,
    )


@pytest.fixture
def tiny_params(tiny_config):
    return init_model(tiny_config, seed=0)


def make_batch(config: ModelConfig, seed: int = 1, rows: int = 2):
    """Random layout rows with real alt and caption content."""
    rng = np.random.default_rng(seed)
    built = []
    for _ in range(rows):
        alt_len = int(rng.integers(1, config.m_alt + 1))
        cap_len = int(rng.integers(1, config.max_gen - 1))
        built.append(
            layout_sequence(
                rng.normal(size=config.image_embed_dim),
                rng.integers(4, config.vocab_size, size=alt_len).tolist(),
                rng.integers(4, config.vocab_size, size=cap_len).tolist(),
                config,
            )
        )
    return concat_rows(built)


@pytest.fixture
def tiny_batch(tiny_config):
    return make_batch(tiny_config)


def items_jsonl(tmp_path: Path, lines: list[str], name: str = "items.jsonl") -> Path:
    path = tmp_path / name
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path
