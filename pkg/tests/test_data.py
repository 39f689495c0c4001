import numpy as np
import pytest

from slimadam.data import (ZipfStream, batches_per_epoch, dump_stream,
                           load_stream, next_token_batches, zipf_probs,
                           zipf_token_stream)


def test_alpha_zero_is_uniform():
    np.testing.assert_allclose(zipf_probs(5, 0.0), np.full(5, 0.2))


def test_harmonic_normalization():
    # alpha=1, vocab=4: weights 1, 1/2, 1/3, 1/4 over 25/12
    np.testing.assert_allclose(zipf_probs(4, 1.0), [0.48, 0.24, 0.16, 0.12])


def test_probs_sum_to_one():
    assert zipf_probs(1000, 1.3).sum() == pytest.approx(1.0, rel=1e-14)


def test_single_token_vocab():
    stream = zipf_token_stream(ZipfStream(vocab=1, alpha=1.0, length=100, seed=0))
    assert np.all(stream == 0)


def test_zero_vocab_rejected():
    with pytest.raises(ValueError):
        zipf_token_stream(ZipfStream(vocab=0, alpha=1.0, length=10, seed=0))


def test_stream_deterministic():
    spec = ZipfStream(vocab=64, alpha=1.0, length=5000, seed=9)
    np.testing.assert_array_equal(zipf_token_stream(spec), zipf_token_stream(spec))


def test_empirical_frequencies_track_zipf():
    spec = ZipfStream(vocab=32, alpha=1.0, length=200_000, seed=1)
    stream = zipf_token_stream(spec)
    counts = np.bincount(stream, minlength=32)
    expected = zipf_probs(32, 1.0) * spec.length
    chi2 = np.sum((counts - expected) ** 2 / expected)
    # 31 dof: mean 31, std ~7.9; 70 is a generous sanity bound
    assert chi2 < 70


def test_rare_decile_mass():
    vocab, length = 1024, 1_000_000
    stream = zipf_token_stream(ZipfStream(vocab, 1.0, length, seed=2))
    p = zipf_probs(vocab, 1.0)
    decile = np.argsort(p)[: vocab // 10]
    expected = p[decile].sum()
    observed = np.isin(stream, decile).mean()
    assert expected < 0.02
    assert observed == pytest.approx(expected, rel=0.2)


def test_truncation_raises_min_probability():
    p_full = zipf_probs(1024, 1.0)
    p_small = zipf_probs(256, 1.0)
    assert p_small.min() > p_full.min()


def test_batches_shift_by_one():
    it = next_token_batches(np.array([1, 2, 3, 4]), context=3, batch=1, seed=0)
    x, y = next(it)
    np.testing.assert_array_equal(x, [[1, 2, 3]])
    np.testing.assert_array_equal(y, [[2, 3, 4]])


def test_batches_deterministic():
    stream = zipf_token_stream(ZipfStream(16, 1.0, 2000, 0))
    a = next_token_batches(stream, 8, 4, seed=5)
    b = next_token_batches(stream, 8, 4, seed=5)
    for _ in range(10):
        xa, ya = next(a)
        xb, yb = next(b)
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)


def test_batches_never_cross_stream_end():
    stream = np.arange(100)
    it = next_token_batches(stream, context=8, batch=3, seed=0)
    for _ in range(50):
        x, y = next(it)
        assert x.max() < 100 and y.max() < 100
        np.testing.assert_array_equal(x[:, 1:], y[:, :-1])


def test_short_stream_rejected():
    with pytest.raises(ValueError):
        next(next_token_batches(np.array([1, 2]), context=3, batch=1, seed=0))


def test_batches_per_epoch_counting():
    assert batches_per_epoch(length=101, context=10, batch=2) == 5
    assert batches_per_epoch(length=4, context=3, batch=1) == 1


def test_dump_load_round_trip(tmp_path):
    spec = ZipfStream(vocab=64, alpha=1.5, length=1000, seed=3)
    stream = zipf_token_stream(spec)
    path = tmp_path / "tokens.bin"
    dump_stream(path, stream, spec)
    back, back_spec = load_stream(path)
    np.testing.assert_array_equal(back, stream)
    assert back_spec == spec
