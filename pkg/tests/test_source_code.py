import numpy as np
import pytest

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import InvalidArgumentError, ResourceLimitError
from blackbox_comm.models.schemas import CodebookRealization, SeededRng, Sequence, codebook_log2_size
from blackbox_comm.services.rd_solver import rate_distortion
from blackbox_comm.services.source_code import (
    build_codebook,
    encode_array,
    encode_min_distortion,
    measure_distortion,
    random_index,
    resolve_realization,
    summarize_distortions,
)


def test_codebook_size_uses_floor_of_nR(uniform, rng):
    cb = build_codebook(uniform, 0.35, 20, rng)
    assert cb.log2_size == 7
    assert cb.size == 128
    assert cb.words.shape == (128, 20)
    assert codebook_log2_size(0.5, 10) == 5


def test_codebook_is_a_function_of_its_seed(uniform):
    a = build_codebook(uniform, 0.4, 16, SeededRng(seed=3))
    b = build_codebook(uniform, 0.4, 16, SeededRng(seed=3))
    c = build_codebook(uniform, 0.4, 16, SeededRng(seed=4))
    assert np.array_equal(a.words, b.words)
    assert not np.array_equal(a.words, c.words)


def test_nonpositive_rate_is_rejected(uniform, rng):
    with pytest.raises(InvalidArgumentError):
        build_codebook(uniform, 0.0, 10, rng)


def test_explicit_codebook_respects_memory_guard(uniform, rng, monkeypatch):
    monkeypatch.setattr(settings, "MEMORY_GUARD", 1000)
    with pytest.raises(ResourceLimitError):
        build_codebook(uniform, 0.5, 40, rng, CodebookRealization.EXPLICIT)
    assert resolve_realization(CodebookRealization.AUTO, 20, 40) == CodebookRealization.ENSEMBLE
    assert resolve_realization(CodebookRealization.AUTO, 3, 40) == CodebookRealization.EXPLICIT


def test_encoder_returns_lowest_minimum_distortion_index(uniform, hamming, rng):
    cb = build_codebook(uniform, 0.3, 12, rng)
    for t in range(20):
        x = rng.derive("x", t).generator().integers(0, 2, 12)
        index, reproduction = encode_array(x, cb, hamming)
        totals = (cb.words != x[None, :]).sum(axis=1)
        assert index == int(np.flatnonzero(totals == totals.min())[0])
        assert np.array_equal(reproduction, cb.words[index])


def test_encode_min_distortion_checks_length_and_alphabet(uniform, hamming, binary, rng):
    cb = build_codebook(uniform, 0.5, 8, rng)
    with pytest.raises(InvalidArgumentError):
        encode_min_distortion(Sequence.of(binary, [0, 1, 0]), cb, hamming)
    assert 0 <= encode_min_distortion(Sequence.of(binary, [0, 1] * 4), cb, hamming) < cb.size


def test_ensemble_encoder_pins_its_reproduction(uniform, hamming, rng):
    cb = build_codebook(uniform, 0.5, 40, rng, CodebookRealization.ENSEMBLE)
    x = rng.derive("input").generator().integers(0, 2, 40)
    index, reproduction = encode_array(x, cb, hamming)
    assert 0 <= index < cb.size
    assert np.array_equal(cb.codeword_array(index), reproduction)
    again, _ = encode_array(x, cb, hamming)
    assert again == index
    with pytest.raises(InvalidArgumentError):
        _ = cb.words


def test_ensemble_matches_explicit_in_distribution(uniform, hamming):
    explicit = build_codebook(uniform, 0.5, 20, SeededRng(seed=11), CodebookRealization.EXPLICIT)
    ensemble = build_codebook(uniform, 0.5, 20, SeededRng(seed=12), CodebookRealization.ENSEMBLE)
    a = measure_distortion(uniform, explicit, hamming, 0.2, 300, SeededRng(seed=1))
    b = measure_distortion(uniform, ensemble, hamming, 0.2, 300, SeededRng(seed=2))
    assert abs(a.mean_distortion - b.mean_distortion) < 0.03


def test_measure_distortion_report(uniform, hamming, rng):
    cb = build_codebook(uniform, 0.5, 16, rng)
    report = measure_distortion(uniform, cb, hamming, 0.25, 100, rng.derive("trials"))
    assert report.trials == 100
    assert report.excess_ci_low <= report.excess_estimate <= report.excess_ci_high
    assert report.mean_ci_low <= report.mean_distortion <= report.mean_ci_high
    assert report.rate_bits == 0.5


def test_measure_distortion_is_reproducible_across_workers(uniform, hamming, rng):
    cb = build_codebook(uniform, 0.5, 16, rng)
    serial = measure_distortion(uniform, cb, hamming, 0.25, 200, rng.derive("trials"), workers=1)
    parallel = measure_distortion(uniform, cb, hamming, 0.25, 200, rng.derive("trials"), workers=2)
    assert serial == parallel


def test_too_few_trials_are_rejected(uniform, hamming, rng):
    cb = build_codebook(uniform, 0.5, 8, rng)
    with pytest.raises(InvalidArgumentError):
        measure_distortion(uniform, cb, hamming, 0.25, 50, rng)


def test_excess_is_nonincreasing_in_D_for_a_fixed_code(uniform, hamming, rng):
    cb = build_codebook(uniform, 0.4, 30, rng, CodebookRealization.AUTO)
    reports = [measure_distortion(uniform, cb, hamming, D, 200, rng.derive("trials"))
               for D in (0.05, 0.1, 0.2, 0.3, 0.5)]
    excess = [r.excess_estimate for r in reports]
    assert all(a >= b for a, b in zip(excess, excess[1:]))
    assert excess[0] > excess[-1] == 0.0
    assert len({r.mean_distortion for r in reports}) == 1
    for r in reports:
        assert r.mean_distortion <= r.distortion_D + hamming.array.max() * r.excess_estimate + 1e-9


def test_summarize_counts_strict_excess():
    report = summarize_distortions(np.array([1.0, 2.0, 3.0, 2.0]), 10, 0.2)
    assert report.excess_estimate == 0.25
    assert report.mean_distortion == pytest.approx(0.2)


def test_random_index_is_in_range(rng):
    generator = rng.generator()
    assert random_index(0, generator) == 0
    draws = [random_index(70, generator) for _ in range(50)]
    assert all(0 <= v < 2 ** 70 for v in draws)
    assert max(draws) > 2 ** 60


@pytest.mark.slow
def test_excess_distortion_vanishes_above_rate_distortion(uniform, hamming):
    rate = rate_distortion(uniform, hamming, 0.1).rate_bits + 0.05
    cb = build_codebook(uniform, rate, 1000, SeededRng(seed=2024), CodebookRealization.AUTO)
    report = measure_distortion(uniform, cb, hamming, 0.1, 200, SeededRng(seed=99))
    assert report.excess_estimate <= 0.02
