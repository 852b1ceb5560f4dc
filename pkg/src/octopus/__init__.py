"""Desk-scale multitask text-to-text transformer toolkit."""

from .decoding import DecodeConfig, Hypothesis, beam_search, block_repeat_ngrams, generate, sample_step
from .metrics import (
    EditSet,
    MetricReport,
    bleu,
    cer,
    diacritization_fidelity,
    m2_f05,
    macro_scores,
    rouge_l,
    token_f1,
)
from .model import ModelConfig, Seq2SeqTransformer, relative_position_bucket
from .objectives import DenoisingConfig, Seq2SeqBatch, corrupt_spans, make_batch, splice
from .optim import AdamState, adam_step
from .tasks import Example, TaskSpec, format_input, load_jsonl, synth_cipher, synth_devowel
from .tensor import Tensor, backward, cross_entropy, matmul, no_grad, rms_norm, softmax
from .trainer import (
    CheckpointMeta,
    Datasets,
    TaskData,
    TaskMixer,
    TrainConfig,
    evaluate_dev,
    sample_task_batch,
    select_best_checkpoint,
    train,
)
from .vocab import Vocabulary, build_vocab

__version__ = "0.1.0"
