"""Alt-text re-alignment toolkit: corpus management, captioner, caption
metrics, annotation service, and training-set mixing."""

from .corpus import (
    CaptionChoice,
    Corpus,
    EmbeddingMatrix,
    ImageItem,
    MixSpec,
    RoundRecord,
    RoundStats,
    edit_distance,
    export_training_set,
    ingest_pairs,
    load_embeddings,
    load_rounds,
    load_training_set,
    mix_sample,
    save_embeddings,
)
from .metrics import (
    ClipEmbeddings,
    MetricReport,
    NGramStats,
    bleu1,
    build_ngram_stats,
    cider_d,
    clip_score,
    evaluate_suite,
    meteor_lite,
    np_prf,
    rouge_l,
)
from .model import (
    DecodeConfig,
    ModelConfig,
    ModelParams,
    SequenceBatch,
    concat_rows,
    forward_loss,
    generate,
    generate_batch,
    init_model,
    layout_sequence,
    load_model,
    loss_and_grads,
    map_embedding,
    save_model,
)
from .textproc import (
    Lexicon,
    Vocab,
    build_vocab,
    default_lexicon,
    detokenize,
    noun_phrases,
    starting_prompt_check,
    tokenize,
)
from .train import (
    BenchReport,
    RealignReport,
    TrainConfig,
    TrainTriple,
    World,
    WorldSpec,
    bench_throughput,
    finetune,
    grad_check,
    lr_schedule,
    pretrain,
    realign_eval,
    synth_world,
)

__version__ = "0.1.0"
