import itertools

import numpy as np
import pytest

from blackbox_comm.core.errors import InvalidArgumentError
from blackbox_comm.models.schemas import (
    Alphabet,
    CodebookRealization,
    Distribution,
    DistortionSpec,
    SeededRng,
    Sequence,
)
from blackbox_comm.services.channel_code import (
    build_channel_codebook,
    compositions,
    decode_ensemble,
    e2_exact,
    is_jointly_typical,
    jt_decode,
    run_reliability,
    sanov_bound_check,
)
from blackbox_comm.services.channels import CompoundSet, DMCChannel, make_source_code_channel


def brute_force_e2(y, p, eps, dm, D):
    n = len(y)
    total = 0.0
    for x in itertools.product(range(len(p)), repeat=n):
        x = np.array(x)
        counts = np.bincount(x, minlength=len(p))
        typical = np.abs(counts / n - p).sum() <= eps + 1e-12
        if typical and dm[x, y].sum() <= n * D + 1e-9:
            total += float(np.prod(p[x]))
    return total


@pytest.mark.parametrize("p, y, eps, D", [
    ([0.5, 0.5], [0, 0, 0, 0, 1, 1, 1, 1], 0.25, 0.25),
    ([0.7, 0.3], [0, 0, 0, 0, 0, 1, 1, 1], 0.2, 0.375),
    ([0.7, 0.3], [1, 1, 1, 1, 1, 1, 0, 0], 0.5, 0.5),
])
def test_e2_exact_matches_enumeration(binary, hamming, p, y, eps, D):
    y = np.array(y)
    y_type = Distribution.from_array(binary, np.bincount(y, minlength=2) / y.size)
    expected = brute_force_e2(y, np.array(p), eps, hamming.array, D)
    assert e2_exact(y_type, Distribution.from_array(binary, p), eps, hamming, D, y.size) == pytest.approx(expected)


def test_e2_exact_with_weighted_ternary_distortion():
    three = Alphabet.of_size(3)
    d = DistortionSpec.from_array(three, three, [[0, 0.5, 1], [0.5, 0, 0.5], [1, 0.5, 0]])
    p = np.array([0.5, 0.3, 0.2])
    y = np.array([0, 1, 2, 2, 1, 0])
    y_type = Distribution.from_array(three, np.bincount(y, minlength=3) / y.size)
    expected = brute_force_e2(y, p, 0.4, d.array, 0.25)
    assert e2_exact(y_type, Distribution.from_array(three, p), 0.4, d, 0.25, 6) == pytest.approx(expected)


def test_e2_exact_rejects_unrealizable_types_and_large_inputs(binary, uniform, hamming):
    with pytest.raises(InvalidArgumentError):
        e2_exact(Distribution.uniform(binary), uniform, 0.1, hamming, 0.1, 7)
    with pytest.raises(InvalidArgumentError):
        e2_exact(Distribution.uniform(binary), uniform, 0.1, hamming, 0.1, 1002)
    with pytest.raises(InvalidArgumentError):
        e2_exact(Distribution.uniform(binary), uniform, -0.1, hamming, 0.1, 10)


@pytest.mark.parametrize("n", [20, 50, 100])
def test_union_bound_stays_below_type_bound(binary, uniform, hamming, n):
    check = sanov_bound_check(uniform, 0.05, hamming, 0.1, 0.3, n, Distribution.uniform(binary))
    assert 0.0 <= check.e2 <= 1.0
    assert check.holds


def enumerate_binary_e2(y, p1, eps, D):
    """Exact acceptance probability by visiting every binary codeword, in chunks."""
    n = y.size
    shifts = np.arange(n, dtype=np.int64)
    total = 0.0
    for start in range(0, 1 << n, 1 << 15):
        x = (np.arange(start, min(start + (1 << 15), 1 << n), dtype=np.int64)[:, None] >> shifts) & 1
        ones = x.sum(axis=1)
        typical = 2 * np.abs(ones / n - p1) <= eps + 1e-12
        close = (x != y).sum(axis=1) <= n * D + 1e-9
        total += float((p1 ** ones * (1 - p1) ** (n - ones))[typical & close].sum())
    return total


@pytest.mark.parametrize("n", [12, 16, pytest.param(20, marks=pytest.mark.slow)])
@pytest.mark.parametrize("p1, eps, D, y_ones", [
    (0.5, 0.17, 0.23, 0.5),
    (0.3, 0.17, 0.33, 0.25),
    (0.3, 0.41, 0.41, 0.0),
    (0.5, 0.41, 0.41, 1.0),
])
def test_e2_exact_matches_enumeration_at_longer_blocks(binary, hamming, n, p1, eps, D, y_ones):
    m = round(y_ones * n)
    y = np.array([1] * m + [0] * (n - m))
    expected = enumerate_binary_e2(y, p1, eps, D)
    assert expected > 0
    y_type = Distribution.from_array(binary, [(n - m) / n, m / n])
    p_X = Distribution.from_array(binary, [1 - p1, p1])
    assert e2_exact(y_type, p_X, eps, hamming, D, n) == pytest.approx(expected, rel=1e-10)


def test_e2_exact_grows_with_eps_and_D(binary, uniform, hamming):
    y_type = Distribution.from_array(binary, [0.6, 0.4])
    by_eps = [e2_exact(y_type, uniform, eps, hamming, 0.3, 40) for eps in (0.0, 0.05, 0.1, 0.2, 0.5)]
    by_D = [e2_exact(y_type, uniform, 0.1, hamming, D, 40) for D in (0.1, 0.2, 0.3, 0.4, 0.6)]
    for values in (by_eps, by_D):
        assert all(a <= b * (1 + 1e-12) for a, b in zip(values, values[1:]))
    assert 0.0 < by_eps[0] < by_eps[-1]
    assert 0.0 < by_D[0] < by_D[-1]


@pytest.mark.parametrize("n", [20, 50, 100, pytest.param(200, marks=pytest.mark.slow)])
@pytest.mark.parametrize("p1, eps, D, y1", [
    (0.5, 0.05, 0.1, 0.5),
    (0.5, 0.1, 0.2, 0.5),
    (0.5, 0.05, 0.25, 0.3),
    (0.5, 0.2, 0.3, 0.3),
    (0.3, 0.1, 0.25, 0.5),
    (0.3, 0.05, 0.1, 0.3),
    (0.3, 0.2, 0.3, 0.3),
    (0.3, 0.1, 0.2, 0.5),
])
def test_union_bound_never_exceeds_the_type_bound(binary, hamming, n, p1, eps, D, y1):
    p_X = Distribution.from_array(binary, [1 - p1, p1])
    y_type = Distribution.from_array(binary, [1 - y1, y1])
    check = sanov_bound_check(p_X, eps, hamming, D, 0.3, n, y_type)
    assert check.holds


def test_compositions():
    assert compositions(3, 2).tolist() == [[0, 3], [1, 2], [2, 1], [3, 0]]
    assert compositions(4, 3).shape == (15, 3)
    assert (compositions(4, 3).sum(axis=1) == 4).all()


def test_joint_typicality_thresholds(binary, uniform, hamming):
    x = Sequence.of(binary, [0, 1, 0, 1, 0, 1, 0, 1, 0, 1])
    y = Sequence.of(binary, [0, 1, 0, 1, 0, 1, 0, 1, 1, 0])
    assert is_jointly_typical(x, y, uniform, 0.0, hamming, 0.2)
    assert not is_jointly_typical(x, y, uniform, 0.0, hamming, 0.1)
    assert is_jointly_typical(x, y, uniform, 0.1, hamming, 0.1, relaxed=True)
    with pytest.raises(InvalidArgumentError):
        is_jointly_typical(x, Sequence.of(binary, [0, 1]), uniform, 0.1, hamming, 0.1)


def test_decoder_finds_the_unique_matching_codeword(binary, uniform, hamming, rng):
    cb = build_channel_codebook(uniform, 0.25, 16, rng)
    for i in range(cb.size):
        duplicated = (cb.words == cb.words[i]).all(axis=1).sum() > 1
        outcome = jt_decode(cb.codeword(i), cb, 2.0, hamming, 0.0)
        if duplicated:
            assert not outcome.is_message
        else:
            assert outcome.is_message and outcome.index == i


def test_decoder_reports_error_when_everything_matches(binary, uniform, hamming, rng):
    cb = build_channel_codebook(uniform, 0.25, 16, rng)
    outcome = jt_decode(Sequence.of(binary, [0] * 16), cb, 2.0, hamming, 1.0)
    assert not outcome.is_message
    assert outcome.candidates >= 2
    assert outcome.candidates_capped


def test_codebook_rejects_negative_rate(uniform, rng):
    with pytest.raises(InvalidArgumentError):
        build_channel_codebook(uniform, -0.1, 10, rng)
    assert build_channel_codebook(uniform, 0.0, 10, rng).size == 1


def test_ensemble_decoder_on_a_clean_channel(uniform, hamming, rng):
    cb = build_channel_codebook(uniform, 0.1, 40, rng, CodebookRealization.ENSEMBLE)
    sent = 5
    y = cb.codeword_array(sent)
    outcome, e1, e2 = decode_ensemble(y, cb, sent, 2.0, hamming, 0.1, rng.generator())
    assert outcome.is_message and outcome.index == sent
    assert not e1 and not e2


def test_ensemble_decoder_at_a_hopeless_rate(uniform, hamming, rng):
    cb = build_channel_codebook(uniform, 0.9, 40, rng, CodebookRealization.ENSEMBLE)
    y = cb.codeword_array(0)
    outcome, _, e2 = decode_ensemble(y, cb, 0, 2.0, hamming, 0.3, rng.generator())
    assert not outcome.is_message
    assert e2


def test_explicit_and_ensemble_reliability_agree(uniform, hamming):
    compound = CompoundSet.of(DMCChannel.bsc(0.02))
    common = dict(p_X=uniform, eps=0.4, d=hamming, D=0.1, R=0.2, n_list=[30], messages_sampled=2,
                  trials_per_message=150)
    explicit = run_reliability(compound, rng=SeededRng(seed=1), realization=CodebookRealization.EXPLICIT, **common)
    ensemble = run_reliability(compound, rng=SeededRng(seed=2), realization=CodebookRealization.ENSEMBLE, **common)
    assert abs(explicit.cells[0].mean_error - ensemble.cells[0].mean_error) < 0.05
    assert explicit.cells[0].mean_error < 0.1


def test_reliability_above_capacity_fails(uniform, hamming, rng):
    report = run_reliability(CompoundSet.of(DMCChannel.bsc(0.02)), uniform, 2.0, hamming, 0.1, 0.9, [30], 1, 50, rng)
    cell = report.cells[0]
    assert cell.mean_error > 0.9
    assert cell.e2_count >= cell.errors - cell.e1_count


def test_reliability_report_is_reproducible_and_worker_independent(uniform, hamming, rng):
    compound = CompoundSet.of(DMCChannel.bsc(0.05), DMCChannel.bsc(0.01))
    args = (compound, uniform, 0.4, hamming, 0.1, 0.2, [30], 2, 20, rng)
    serial = run_reliability(*args, workers=1)
    assert serial == run_reliability(*args, workers=2)
    assert [c.member for c in serial.cells] == ["bsc(0.05)", "bsc(0.01)"]
    assert serial.worst_member(30).max_error_estimate >= serial.for_member("bsc(0.01)")[0].max_error_estimate


def test_reliability_validates_arguments(uniform, hamming, rng):
    compound = CompoundSet.of(DMCChannel.bsc(0.02))
    with pytest.raises(InvalidArgumentError):
        run_reliability(compound, uniform, 0.1, hamming, 0.1, 0.0, [30], 1, 10, rng)
    with pytest.raises(InvalidArgumentError):
        run_reliability(compound, uniform, 0.1, hamming, 0.1, 0.2, [30], 0, 10, rng)


@pytest.mark.slow
def test_random_code_over_a_source_code_channel():
    rng = SeededRng(seed=2024)
    uniform = Distribution.uniform(Alphabet.binary())
    hamming = DistortionSpec.hamming(Alphabet.binary())
    channel = make_source_code_channel(uniform, hamming, 0.1, 0.05, [1000], rng.derive("channel"))
    report = run_reliability(CompoundSet.of(channel), uniform, 0.1, hamming, 0.1, 0.3, [1000], 2, 100,
                             rng.derive("reliability"))
    assert report.cells[0].max_error_estimate <= 0.05
