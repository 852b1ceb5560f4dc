"""Training example construction: span-corruption denoising and
teacher-forced sequence-to-sequence batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vocab import Vocabulary


@dataclass
class DenoisingConfig:
    """Span-corruption knobs.

    corruption_rate is the target masked fraction; mean_span_length sets
    how many sentinels that fraction is split across. min_spans=0 lets a
    short sequence pass through uncorrupted instead of forcing one span.
    """

    corruption_rate: float = 0.15
    mean_span_length: float = 3.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    min_spans: int = 1

    def __post_init__(self):
        if not 0.0 < self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must be in (0, 1]")
        if self.mean_span_length < 1.0:
            raise ValueError("mean_span_length must be >= 1")


class OverCorruptionError(ValueError):
    """The requested mask budget cannot be placed as non-adjacent spans."""


def corrupt_spans(
    tokens: list[int], vocab: Vocabulary, cfg: DenoisingConfig
) -> tuple[list[int], list[int]]:
    """Replace random non-adjacent token spans with sentinel ids.

    Returns (input ids, target ids) where the input has span i collapsed
    to SENTINEL_i (left to right) and the target lists each sentinel
    followed by the tokens it hides, ending with eos.
    """
    if not tokens:
        raise ValueError("cannot corrupt an empty sequence")
    if any(vocab.is_sentinel(t) for t in tokens):
        raise ValueError("input tokens may not contain sentinel ids")

    n = len(tokens)
    n_spans = max(cfg.min_spans, round(cfg.corruption_rate * n / cfg.mean_span_length))
    if n_spans == 0:
        return list(tokens), [vocab.eos_id]
    n_spans = min(n_spans, vocab.num_sentinels)
    budget = max(n_spans, round(cfg.corruption_rate * n))
    # non-adjacent spans need a one-token gap between consecutive spans
    if budget > n - (n_spans - 1):
        raise OverCorruptionError(
            f"span budget {budget} with {n_spans} spans does not fit in {n} tokens"
        )

    # split the budget into n_spans positive lengths
    lengths = [1] * n_spans
    for _ in range(budget - n_spans):
        lengths[int(cfg.rng.integers(n_spans))] += 1

    starts = _place_spans(n, lengths, cfg.rng)

    input_ids: list[int] = []
    target_ids: list[int] = []
    cursor = 0
    for i, (start, length) in enumerate(zip(starts, lengths)):
        input_ids.extend(tokens[cursor:start])
        input_ids.append(vocab.sentinel(i))
        target_ids.append(vocab.sentinel(i))
        target_ids.extend(tokens[start:start + length])
        cursor = start + length
    input_ids.extend(tokens[cursor:])
    target_ids.append(vocab.eos_id)
    return input_ids, target_ids


def _place_spans(n: int, lengths: list[int], rng: np.random.Generator) -> list[int]:
    """Sample non-adjacent span starts, uniform over valid arrangements.

    Stars-and-bars over the leftover gap budget: interior gaps get their
    mandatory one-token separation, the slack is split uniformly across
    all k+1 gaps via a random k-subset of slack+k positions.
    """
    k = len(lengths)
    slack = n - sum(lengths) - (k - 1)
    if slack < 0:
        raise OverCorruptionError(f"{k} non-adjacent spans do not fit in {n} tokens")
    if slack == 0:
        cuts = np.arange(k)
    else:
        cuts = np.sort(rng.choice(slack + k, size=k, replace=False))
    extras = np.diff(np.concatenate(([-1], cuts))) - 1  # k leading-gap extras
    starts = []
    pos = 0
    for i in range(k):
        pos += int(extras[i]) + (1 if i > 0 else 0)
        starts.append(pos)
        pos += lengths[i]
    return starts


def splice(input_ids: list[int], target_ids: list[int], vocab: Vocabulary) -> list[int]:
    """Inverse of corrupt_spans: re-insert each masked span into the input.

    Raises on sentinel mismatches between input and target, which catches
    tampered or misaligned pairs.
    """
    # target segments keyed by sentinel index
    segments: dict[int, list[int]] = {}
    current: int | None = None
    seen_order: list[int] = []
    for tid in target_ids:
        if tid == vocab.eos_id:
            break
        if vocab.is_sentinel(tid):
            current = vocab.sentinel_index(tid)
            if current in segments:
                raise ValueError(f"sentinel {current} appears twice in target")
            segments[current] = []
            seen_order.append(current)
        else:
            if current is None:
                raise ValueError("target does not start with a sentinel")
            segments[current].append(tid)
    if seen_order != sorted(seen_order):
        raise ValueError("target sentinels out of order")

    out: list[int] = []
    used: list[int] = []
    for tid in input_ids:
        if vocab.is_sentinel(tid):
            idx = vocab.sentinel_index(tid)
            if idx not in segments:
                raise ValueError(f"input sentinel {idx} missing from target")
            out.extend(segments[idx])
            used.append(idx)
        else:
            out.append(tid)
    if used != seen_order:
        raise ValueError("input and target sentinels disagree")
    return out


@dataclass
class Seq2SeqBatch:
    """Padded id matrices for one teacher-forced training step.

    dec_ids is target_ids shifted right behind the start token (pad), so
    dec_ids[:, t] == target_ids[:, t-1] for t >= 1; every target row ends
    with eos before the padding. Loss masking is by pad id.
    """

    enc_ids: np.ndarray
    enc_mask: np.ndarray
    dec_ids: np.ndarray
    target_ids: np.ndarray
    pad_id: int = 0

    def __len__(self) -> int:
        return self.enc_ids.shape[0]


def batch_from_ids(
    pairs: list[tuple[list[int], list[int]]], vocab: Vocabulary, max_len: int,
    targets_have_eos: bool = False,
) -> Seq2SeqBatch:
    """Pad encoded (source ids, target ids) pairs into a Seq2SeqBatch.

    Sources truncate to max_len; targets truncate to max_len - 1 and then
    get eos appended (unless they already carry one).
    """
    if not pairs:
        raise ValueError("cannot build a batch from no examples")
    srcs, tgts = [], []
    for src, tgt in pairs:
        if not src:
            raise ValueError("empty source after encoding")
        src = list(src)[:max_len]
        if targets_have_eos:
            tgt = list(tgt)[:max_len]
            if tgt[-1] != vocab.eos_id:
                tgt = tgt[: max_len - 1] + [vocab.eos_id]
        else:
            tgt = list(tgt)[: max_len - 1] + [vocab.eos_id]
        srcs.append(src)
        tgts.append(tgt)

    b = len(pairs)
    pad = vocab.pad_id
    src_len = max(len(s) for s in srcs)
    tgt_len = max(len(t) for t in tgts)
    enc_ids = np.full((b, src_len), pad, dtype=np.int64)
    enc_mask = np.zeros((b, src_len), dtype=bool)
    target_ids = np.full((b, tgt_len), pad, dtype=np.int64)
    for i, (s, t) in enumerate(zip(srcs, tgts)):
        enc_ids[i, : len(s)] = s
        enc_mask[i, : len(s)] = True
        target_ids[i, : len(t)] = t
    # shift right behind the start token (pad), across the padded row
    dec_ids = np.concatenate(
        [np.full((b, 1), pad, dtype=np.int64), target_ids[:, :-1]], axis=1
    )
    return Seq2SeqBatch(enc_ids, enc_mask, dec_ids, target_ids, pad_id=pad)


def make_batch(
    pairs: list[tuple[str, str]], vocab: Vocabulary, max_len: int
) -> Seq2SeqBatch:
    """Encode (source text, target text) pairs and pad into a batch."""
    if not pairs:
        raise ValueError("cannot build a batch from no examples")
    encoded = [(vocab.encode(s), vocab.encode(t)) for s, t in pairs]
    return batch_from_ids(encoded, vocab, max_len, targets_have_eos=False)
