"""Inference-time search: greedy, beam, and top-k / nucleus sampling,
with n-best output and n-gram repetition blocking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import no_grad

StepFn = Callable[[tuple[int, ...]], np.ndarray]  # prefix -> log-prob vector


@dataclass
class DecodeConfig:
    """Decoding method plus its knobs.

    seq_length bounds the number of generated tokens (eos included). The
    batch CLI defaults it to 2048 and the interactive preset to 300; the
    library default stays at the desk scale.
    """

    method: str = "beam"
    nbeam: int = 5
    max_outputs: int = 3
    seq_length: int = 128
    no_repeat_ngram_size: int = 0
    top_k: int = 0
    top_p: float = 1.0
    seed: int = 0

    def validate(self):
        if self.method not in ("greedy", "beam", "sampling"):
            raise ValueError(f"unknown decoding method {self.method!r}")
        if self.seq_length < 1:
            raise ValueError("seq_length must be >= 1")
        if self.max_outputs < 1:
            raise ValueError("max_outputs must be >= 1")
        if self.method == "beam" and self.nbeam < self.max_outputs:
            raise ValueError("nbeam must be >= max_outputs for beam search")
        if self.method == "beam" and self.nbeam < 1:
            raise ValueError("nbeam must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.no_repeat_ngram_size < 0:
            raise ValueError("no_repeat_ngram_size must be >= 0")


@dataclass
class Hypothesis:
    """One decoded candidate; finished hypotheses are never extended."""

    ids: list[int]
    logprob: float
    finished: bool

    @property
    def score(self) -> float:
        """Length-normalized log-probability used for final ranking."""
        return self.logprob / max(len(self.ids), 1)


def block_repeat_ngrams(logprobs: np.ndarray, history: Sequence[int], n: int) -> np.ndarray:
    """Mask (-inf) tokens that would repeat an n-gram already in history."""
    if n <= 0 or len(history) < n - 1:
        return logprobs
    history = list(history)
    banned = set()
    suffix = tuple(history[len(history) - (n - 1):]) if n > 1 else ()
    for i in range(len(history) - n + 1):
        if tuple(history[i:i + n - 1]) == suffix:
            banned.add(history[i + n - 1])
    if not banned:
        return logprobs
    out = logprobs.copy()
    out[list(banned)] = -np.inf
    return out


def _sorted_desc(probs: np.ndarray) -> np.ndarray:
    """Indices by descending probability, ties broken by lower token id."""
    return np.lexsort((np.arange(len(probs)), -probs))


def sample_step(
    logprobs: np.ndarray, top_k: int, top_p: float, rng: np.random.Generator
) -> int:
    """Draw one token after top-k then nucleus restriction.

    top_k=0 and top_p=1.0 disable the respective filters; with both off
    this is plain full-distribution sampling.
    """
    lp = np.asarray(logprobs, dtype=np.float64)
    m = lp.max()
    if np.isneginf(m):
        raise ValueError("no tokens available to sample")
    probs = np.exp(lp - m)
    probs /= probs.sum()
    order = _sorted_desc(probs)
    if top_k and top_k > 0:
        order = order[:top_k]
    if top_p < 1.0:
        cum = np.cumsum(probs[order])
        cut = int(np.searchsorted(cum, top_p)) + 1
        order = order[:cut]
    kept = probs[order]
    kept = kept / kept.sum()
    return int(order[rng.choice(len(order), p=kept)])


def _blocker(cfg: DecodeConfig) -> Callable[[np.ndarray, Sequence[int]], np.ndarray]:
    n = cfg.no_repeat_ngram_size

    def apply(logprobs, history):
        return block_repeat_ngrams(logprobs, history, n)

    return apply


def greedy_search(step_fn: StepFn, max_len: int, eos_id: int, blocker=None) -> Hypothesis:
    """Single-path argmax decoding."""
    ids: list[int] = []
    logprob = 0.0
    for _ in range(max_len):
        lp = step_fn(tuple(ids))
        if blocker is not None:
            lp = blocker(lp, ids)
        tok = int(lp.argmax())
        ids.append(tok)
        logprob += float(lp[tok])
        if tok == eos_id:
            return Hypothesis(ids, logprob, True)
    return Hypothesis(ids, logprob, False)


def beam_search(
    step_fn: StepFn, nbeam: int, max_len: int, eos_id: int, blocker=None
) -> list[Hypothesis]:
    """Breadth-limited best-first search.

    Each step expands every live beam over the whole vocabulary, keeps
    the top nbeam candidates by cumulative log-probability (ties prefer
    the lexicographically smaller token sequence), and retires finished
    beams into a pool. Stops once the pool holds nbeam finished
    hypotheses, the length limit is hit, or no live beam remains. The
    result is ranked by log-probability over token count.
    """
    if nbeam < 1:
        raise ValueError("nbeam must be >= 1")
    live: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    pool: list[Hypothesis] = []
    for _ in range(max_len):
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for logprob, ids in live:
            lp = step_fn(ids)
            if blocker is not None:
                lp = blocker(lp, ids)
            for tok in np.flatnonzero(lp > -np.inf):
                tok = int(tok)
                candidates.append((logprob + float(lp[tok]), ids + (tok,)))
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for logprob, ids in candidates[:nbeam]:
            if ids[-1] == eos_id:
                pool.append(Hypothesis(list(ids), logprob, True))
            else:
                live.append((logprob, ids))
        if len(pool) >= nbeam or not live:
            break
    for logprob, ids in live:
        pool.append(Hypothesis(list(ids), logprob, False))
    pool.sort(key=lambda h: (-h.score, tuple(h.ids)))
    return pool


def sampling_search(
    step_fn: StepFn, cfg: DecodeConfig, eos_id: int, draw_index: int
) -> Hypothesis:
    """One independent sampled sequence, reproducible per (seed, draw)."""
    rng = np.random.default_rng((cfg.seed, draw_index))
    blocker = _blocker(cfg)
    ids: list[int] = []
    logprob = 0.0
    for _ in range(cfg.seq_length):
        lp = step_fn(tuple(ids))
        lp = blocker(lp, ids)
        tok = sample_step(lp, cfg.top_k, cfg.top_p, rng)
        ids.append(tok)
        logprob += float(lp[tok])
        if tok == eos_id:
            return Hypothesis(ids, logprob, True)
    return Hypothesis(ids, logprob, False)


def _log_softmax(row: np.ndarray) -> np.ndarray:
    m = row.max()
    e = np.exp(row - m)
    return row - m - np.log(e.sum())


def model_step_fn(model, vocab, source_ids: list[int]) -> StepFn:
    """Close over one encoded source; maps a generated prefix to next-token
    log-probs. The decoder input is the prefix shifted behind the start
    (pad) token."""
    src = np.asarray([source_ids], dtype=np.int64)
    mask = np.ones_like(src, dtype=bool)
    with no_grad():
        enc = model.encode(src, mask)

    def step(prefix: tuple[int, ...]) -> np.ndarray:
        dec = np.asarray([[vocab.pad_id, *prefix]], dtype=np.int64)
        with no_grad():
            logits = model.decode_logits(enc, mask, dec)
        return _log_softmax(logits.data[0, -1].astype(np.float64))

    return step


def generate(model, vocab, source_ids: list[int], cfg: DecodeConfig) -> list[Hypothesis]:
    """Decode one source with the configured method.

    Greedy returns exactly one hypothesis; beam returns the max_outputs
    best finished-or-limit hypotheses; sampling draws max_outputs
    independent sequences in emission order.
    """
    cfg.validate()
    step = model_step_fn(model, vocab, source_ids)
    blocker = _blocker(cfg)
    eos = vocab.eos_id
    # the decoder context holds the start token plus the generated prefix
    max_len = min(cfg.seq_length, model.config.max_seq_len - 1)
    if cfg.method == "greedy":
        return [greedy_search(step, max_len, eos, blocker)]
    if cfg.method == "beam":
        hyps = beam_search(step, cfg.nbeam, max_len, eos, blocker)
        return hyps[: cfg.max_outputs]
    capped = DecodeConfig(**{**cfg.__dict__, "seq_length": max_len})
    return [sampling_search(step, capped, eos, i) for i in range(cfg.max_outputs)]


def greedy_decode_batch(
    model, vocab, sources: list[list[int]], max_len: int, no_repeat_ngram_size: int = 0
) -> list[list[int]]:
    """Batched greedy decoding; the fast path for dev-set evaluation.

    Returns one id list per source, eos stripped.
    """
    if not sources:
        return []
    max_len = min(max_len, model.config.max_seq_len - 1)
    b = len(sources)
    src_len = max(len(s) for s in sources)
    src = np.full((b, src_len), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((b, src_len), dtype=bool)
    for i, s in enumerate(sources):
        src[i, : len(s)] = s
        mask[i, : len(s)] = True
    with no_grad():
        enc = model.encode(src, mask)
    dec = np.full((b, 1), vocab.pad_id, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(b)]
    for _ in range(max_len):
        with no_grad():
            logits = model.decode_logits(enc, mask, dec)
        rows = logits.data[:, -1, :].astype(np.float64)
        next_tok = np.empty(b, dtype=np.int64)
        for i in range(b):
            if done[i]:
                next_tok[i] = vocab.pad_id
                continue
            lp = rows[i]
            if no_repeat_ngram_size:
                lp = block_repeat_ngrams(lp, outputs[i], no_repeat_ngram_size)
            tok = int(lp.argmax())
            next_tok[i] = tok
            if tok == vocab.eos_id:
                done[i] = True
            else:
                outputs[i].append(tok)
        if done.all():
            break
        dec = np.concatenate([dec, next_tok[:, None]], axis=1)
    return outputs
