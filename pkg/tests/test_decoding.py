import numpy as np
import pytest

from octopus import DecodeConfig, beam_search, block_repeat_ngrams, generate, sample_step
from octopus.decoding import greedy_search, sampling_search
from octopus.vocab import build_vocab
from octopus import ModelConfig, Seq2SeqTransformer

from helpers import brute_force_best, toy_step_fn


def test_config_validation():
    DecodeConfig(method="beam", nbeam=5, max_outputs=3).validate()
    with pytest.raises(ValueError):
        DecodeConfig(method="magic").validate()
    with pytest.raises(ValueError):
        DecodeConfig(method="beam", nbeam=2, max_outputs=3).validate()
    with pytest.raises(ValueError):
        DecodeConfig(top_p=0.0).validate()
    with pytest.raises(ValueError):
        DecodeConfig(seq_length=0).validate()


def _two_step_table():
    """The worked toy example: A=1, B=2, eos=0.

    step 1: p = (A: 0.6, B: 0.4); after A: p(eos) = 0.5, rest split;
    after B: p(eos) = 0.9, rest split.
    """

    def step(prefix):
        if prefix == ():
            p = np.array([1e-9, 0.6, 0.4])
        elif prefix[-1] == 1:
            p = np.array([0.5, 0.3, 0.2])
        else:
            p = np.array([0.9, 0.05, 0.05])
        return np.log(p / p.sum())

    return step


def test_beam_toy_example():
    # best finished hypothesis is [B, eos] with prob 0.36 over [A, eos] 0.30
    hyps = beam_search(_two_step_table(), nbeam=2, max_len=2, eos_id=0)
    assert hyps[0].ids == [2, 0]
    assert np.isclose(np.exp(hyps[0].logprob), 0.36, atol=1e-6)
    assert hyps[1].ids == [1, 0]
    assert np.isclose(np.exp(hyps[1].logprob), 0.30, atol=1e-6)


def test_beam_deterministic_chain():
    # one certain token per step: a single path regardless of beam width
    def step(prefix):
        p = np.full(3, 1e-12)
        p[1 if len(prefix) < 2 else 0] = 1.0
        return np.log(p / p.sum())

    for nbeam in (1, 3, 8):
        hyps = beam_search(step, nbeam=nbeam, max_len=5, eos_id=0)
        assert hyps[0].ids == [1, 1, 0]


def test_beam_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(60):
        v = int(rng.integers(3, 6))
        max_len = int(rng.integers(2, 5))
        step = toy_step_fn(int(rng.integers(1 << 30)), v)
        best_ids, best_lp = brute_force_best(step, v, max_len)
        hyps = beam_search(step, nbeam=v**max_len, max_len=max_len, eos_id=0)
        assert hyps[0].ids == best_ids
        assert np.isclose(hyps[0].logprob, best_lp, atol=1e-9)


def test_beam_width_one_equals_greedy():
    rng = np.random.default_rng(1)
    for trial in range(40):
        v = int(rng.integers(3, 6))
        step = toy_step_fn(int(rng.integers(1 << 30)), v)
        greedy = greedy_search(step, max_len=6, eos_id=0)
        beam = beam_search(step, nbeam=1, max_len=6, eos_id=0)
        assert beam[0].ids == greedy.ids


def test_beam_invariant_under_probability_rescaling():
    step = toy_step_fn(123, 4)

    def rescaled(prefix):
        return step(prefix) + np.log(3.7)  # scale all probabilities by 3.7

    a = beam_search(step, nbeam=6, max_len=4, eos_id=0)
    b = beam_search(rescaled, nbeam=6, max_len=4, eos_id=0)
    assert [h.ids for h in a] == [h.ids for h in b]


def test_hypothesis_logprob_nonpositive():
    hyps = beam_search(toy_step_fn(5, 4), nbeam=4, max_len=4, eos_id=0)
    assert all(h.logprob <= 0 for h in hyps)
    assert all(len(h.ids) <= 4 for h in hyps)


def test_block_repeat_ngrams_definition():
    lp = np.zeros(4)
    out = block_repeat_ngrams(lp, [1, 2, 1], 2)
    assert np.isneginf(out[2])  # bigram (1, 2) already seen, suffix is 1
    assert np.isfinite(out[1]) and np.isfinite(out[3])


def test_block_repeat_ngrams_disabled_and_short():
    lp = np.zeros(4)
    assert np.array_equal(block_repeat_ngrams(lp, [1, 2, 1], 0), lp)
    assert np.array_equal(block_repeat_ngrams(lp, [], 2), lp)
    assert np.array_equal(block_repeat_ngrams(lp, [1], 3), lp)


def test_block_repeat_unigrams():
    out = block_repeat_ngrams(np.zeros(4), [2, 3], 1)
    assert np.isneginf(out[2]) and np.isneginf(out[3])
    assert np.isfinite(out[0]) and np.isfinite(out[1])


def test_sample_step_top_k_one_is_argmax():
    rng = np.random.default_rng(0)
    lp = np.log(np.array([0.1, 0.5, 0.4]))
    for _ in range(20):
        assert sample_step(lp, top_k=1, top_p=1.0, rng=rng) == 1


def test_sample_step_full_distribution_frequencies():
    rng = np.random.default_rng(1)
    p = np.array([0.4, 0.3, 0.2, 0.1])
    counts = np.zeros(4)
    n = 100_000
    for _ in range(n):
        counts[sample_step(np.log(p), 0, 1.0, rng)] += 1
    assert np.abs(counts / n - p).max() < 0.01


def test_sample_step_nucleus_support():
    # p = (0.5, 0.3, 0.2), top_p = 0.7: mass crosses 0.7 at the second token
    rng = np.random.default_rng(2)
    seen = set()
    for _ in range(300):
        seen.add(sample_step(np.log([0.5, 0.3, 0.2]), 0, 0.7, rng))
    assert seen == {0, 1}


def test_sample_step_k_then_p_composition():
    # without k, top_p=0.9 needs all three tokens; k=2 first drops token 2,
    # and the remaining mass (0.8) never reaches 0.9, so both survivors stay
    rng = np.random.default_rng(3)
    lp = np.log([0.5, 0.3, 0.2])
    no_k = {sample_step(lp, 0, 0.9, rng) for _ in range(400)}
    assert no_k == {0, 1, 2}
    with_k = {sample_step(lp, 2, 0.9, rng) for _ in range(400)}
    assert with_k == {0, 1}
    # exact-boundary case: mass 0.5 >= 0.5 at the first token alone
    only_first = {sample_step(lp, 2, 0.5, rng) for _ in range(100)}
    assert only_first == {0}


def test_sampling_reproducible():
    step = toy_step_fn(9, 4)
    cfg = DecodeConfig(method="sampling", seq_length=6, seed=77)
    a = sampling_search(step, cfg, eos_id=0, draw_index=2)
    b = sampling_search(step, cfg, eos_id=0, draw_index=2)
    assert a.ids == b.ids and a.logprob == b.logprob
    c = sampling_search(step, cfg, eos_id=0, draw_index=3)
    assert c.ids != a.ids or c.logprob != a.logprob


@pytest.fixture(scope="module")
def tiny_setup():
    vocab = build_vocab(["abcdef"], max_size=40, sentinels=4)
    cfg = ModelConfig(vocab_size=vocab.vocab_size, d_model=16, n_heads=2, d_ff=32,
                      n_enc_layers=1, n_dec_layers=1, dropout_rate=0.0, max_seq_len=24)
    model = Seq2SeqTransformer(cfg, seed=5)
    model.set_train(False)
    return model, vocab


def test_generate_greedy_single_hypothesis(tiny_setup):
    model, vocab = tiny_setup
    out = generate(model, vocab, vocab.encode("abc"), DecodeConfig(method="greedy", max_outputs=3, seq_length=8))
    assert len(out) == 1


def test_generate_beam_one_matches_greedy(tiny_setup):
    model, vocab = tiny_setup
    src = vocab.encode("abc")
    greedy = generate(model, vocab, src, DecodeConfig(method="greedy", seq_length=8))
    beam = generate(model, vocab, src, DecodeConfig(method="beam", nbeam=1, max_outputs=1, seq_length=8))
    assert beam[0].ids == greedy[0].ids


def test_generate_respects_seq_length(tiny_setup):
    model, vocab = tiny_setup
    for method in ("greedy", "beam", "sampling"):
        cfg = DecodeConfig(method=method, nbeam=3, max_outputs=2, seq_length=3)
        if method == "greedy":
            cfg = DecodeConfig(method=method, seq_length=3)
        for h in generate(model, vocab, vocab.encode("ab"), cfg):
            assert len(h.ids) <= 3


def test_generate_no_repeat_ngram_holds_on_outputs(tiny_setup):
    model, vocab = tiny_setup
    cfg = DecodeConfig(method="sampling", max_outputs=4, seq_length=12,
                       no_repeat_ngram_size=2, seed=3)
    for h in generate(model, vocab, vocab.encode("abcd"), cfg):
        grams = [tuple(h.ids[i:i + 2]) for i in range(len(h.ids) - 1)]
        assert len(grams) == len(set(grams))


def test_generate_sampling_count_and_reproducible(tiny_setup):
    model, vocab = tiny_setup
    cfg = DecodeConfig(method="sampling", max_outputs=3, seq_length=6, seed=11)
    a = generate(model, vocab, vocab.encode("ab"), cfg)
    b = generate(model, vocab, vocab.encode("ab"), cfg)
    assert len(a) == 3
    assert [h.ids for h in a] == [h.ids for h in b]
