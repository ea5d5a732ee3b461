import itertools

import numpy as np
import pytest

from blackbox_comm.core.errors import CertificationError, InvalidArgumentError, PreconditionError
from blackbox_comm.models.schemas import Alphabet, SeededRng, TransitionKernel
from blackbox_comm.services.channels import CompoundSet, DMCChannel, SlidingWindowNoise, verify_direct_communication
from blackbox_comm.services.layering import (
    ChannelCertificate,
    CodedChannel,
    ConstantEncoderSystem,
    DirectSystem,
    IdentityLayer,
    Layer,
    NoiselessPipe,
    PermutationLayer,
    RandomCodeEncoder,
    ScramblerLayer,
    StackedLayer,
    behavioral_check,
    behavioral_threshold,
    best_constant,
    compose,
    equivalence_demo,
    measure_end_to_end,
    separation_architecture,
    source_code_plan,
)
from blackbox_comm.services.rd_solver import rate_distortion


@pytest.fixture
def modems(rng):
    return StackedLayer(layers=(PermutationLayer(seed=rng.derive("perm")),
                                ScramblerLayer(seed=rng.derive("scr"), alphabet_size=2)))


@pytest.fixture
def identity_certificate(binary, uniform, hamming, rng):
    evidence = verify_direct_communication(CompoundSet.of(DMCChannel.identity(binary)), uniform, hamming, 0.1,
                                           [100], 100, rng.derive("certify"))
    return ChannelCertificate.from_evidence(evidence, 0.1)


def test_layers_invert_themselves(modems, rng):
    x = rng.generator().integers(0, 2, 64)
    encoded = modems.encode_array(x)
    assert not np.array_equal(encoded, x)
    assert np.array_equal(modems.decode_array(encoded), x)


def test_composed_noiseless_channel_stays_noiseless(binary, modems, rng):
    composed = compose(DMCChannel.identity(binary), modems)
    assert composed.label == "identity+permutation+scrambler"
    x = rng.generator().integers(0, 2, 50)
    assert np.array_equal(composed.transmit_array(x, rng), x)


def test_scrambler_rejects_mismatched_alphabets(rng):
    ternary = DMCChannel.identity(Alphabet.of_size(3))
    with pytest.raises(InvalidArgumentError):
        compose(ternary, ScramblerLayer(seed=rng, alphabet_size=2))


def test_flatten_matches_nested_composition(rng):
    perm = PermutationLayer(seed=rng.derive("perm"))
    scr = ScramblerLayer(seed=rng.derive("scr"), alphabet_size=2)
    nested = compose(compose(DMCChannel.bsc(0.2), perm), scr)
    flat = nested.flatten()
    assert isinstance(flat.inner, DMCChannel)
    assert [layer.label for layer in flat.layer.layers] == ["permutation", "scrambler"]
    x = rng.derive("x").generator().integers(0, 2, 80)
    assert np.array_equal(nested.transmit_array(x, rng.derive("t")), flat.transmit_array(x, rng.derive("t")))


def test_identity_layer_flattens_away(rng):
    stacked = IdentityLayer().then(PermutationLayer(seed=rng))
    assert len(stacked.layers) == 1


MEMORYLESS_AND_BURSTY = {
    "bsc": DMCChannel.bsc(0.2),
    "bursty": SlidingWindowNoise(kernels=(TransitionKernel.bsc(0.01), TransitionKernel.bsc(0.3)), window=2,
                                 burst_prob=0.2),
}


def all_binary_blocks(n):
    return [np.array(x) for x in itertools.product([0, 1], repeat=n)]


@pytest.mark.parametrize("n", range(1, 9))
@pytest.mark.parametrize("channel", MEMORYLESS_AND_BURSTY.values(), ids=list(MEMORYLESS_AND_BURSTY))
def test_nested_and_flat_compositions_agree_on_every_block(channel, n, rng):
    nested = compose(compose(compose(channel, PermutationLayer(seed=rng.derive("perm"))),
                             ScramblerLayer(seed=rng.derive("scr"), alphabet_size=2)),
                     PermutationLayer(seed=rng.derive("outer")))
    flat = nested.flatten()
    assert len(flat.layer.layers) == 3
    for k, x in enumerate(all_binary_blocks(n)):
        t = rng.derive("t", n, k)
        assert np.array_equal(nested.transmit_array(x, t), flat.transmit_array(x, t))


@pytest.mark.parametrize("channel", MEMORYLESS_AND_BURSTY.values(), ids=list(MEMORYLESS_AND_BURSTY))
def test_identity_layer_leaves_the_channel_unchanged(channel, rng):
    composed = compose(channel, Layer.identity())
    assert composed.flatten().layer.layers == ()
    for n in (1, 4, 8):
        for k, x in enumerate(all_binary_blocks(n)):
            t = rng.derive("t", n, k)
            assert np.array_equal(composed.transmit_array(x, t), channel.transmit_array(x, t))

    perm = PermutationLayer(seed=rng.derive("perm"))
    padded = compose(compose(compose(channel, Layer.identity()), perm), Layer.identity())
    assert padded.flatten().layer.layers == (perm,)


def test_certificate_rejects_failing_evidence(binary, uniform, hamming, rng):
    evidence = verify_direct_communication(CompoundSet.of(DMCChannel.bsc(0.3)), uniform, hamming, 0.1, [100], 100,
                                           rng)
    with pytest.raises(CertificationError):
        ChannelCertificate.from_evidence(evidence, 0.1)
    with pytest.raises(CertificationError):
        ChannelCertificate.from_evidence([], 0.1)


def test_certificate_rate_is_the_rate_distortion_of_its_source(identity_certificate, uniform, hamming):
    assert identity_certificate.covers("identity")
    assert not identity_certificate.covers("bsc(0.1)")
    assert identity_certificate.achievable_rate() == pytest.approx(rate_distortion(uniform, hamming, 0.1).rate_bits)


def test_noiseless_pipe_drops_out_of_range_indices(rng):
    pipe = NoiselessPipe(rate_bits=0.1)
    assert pipe.carry(3, 20, rng) == (3, None)
    assert pipe.carry(4, 20, rng) == (None, None)


def test_separation_needs_a_certificate(binary, uniform, hamming):
    with pytest.raises(CertificationError):
        separation_architecture(uniform, hamming, 0.2, DMCChannel.identity(binary))


def test_separation_over_a_pipe_checks_rates(uniform, hamming):
    with pytest.raises(PreconditionError):
        separation_architecture(uniform, hamming, 0.1, NoiselessPipe(rate_bits=0.3))


def test_separation_rejects_rates_above_the_certificate(binary, uniform, hamming, identity_certificate):
    with pytest.raises(PreconditionError):
        separation_architecture(uniform, hamming, 0.3, DMCChannel.identity(binary), certificate=identity_certificate,
                                channel_rate=0.9)


def test_separation_over_a_pipe(uniform, hamming, rng):
    system = separation_architecture(uniform, hamming, 0.2, NoiselessPipe(rate_bits=0.6), seed=rng)
    assert system.source_rate_bits == pytest.approx(1.0 - 0.7219 + 0.1, abs=1e-3)
    report = measure_end_to_end(system, uniform, hamming, 0.2, 100, 100, rng.derive("e2e"))
    assert report.mean_distortion < 0.22
    assert report.rate_bits == system.source_rate_bits


def test_zero_rate_separation_sends_the_best_constant(bern, hamming, rng):
    p = bern(0.3)
    system = separation_architecture(p, hamming, 1.0, NoiselessPipe(rate_bits=0.0), seed=rng)
    assert system.zero_rate
    assert best_constant(p, hamming) == 0
    y, tap = system.run(np.array([1, 1, 0, 1]), rng)
    assert y.tolist() == [0, 0, 0, 0]
    assert tap is None


@pytest.mark.parametrize("D", [0.35, 0.9])
def test_zero_rate_starts_at_the_largest_useful_distortion(bern, hamming, rng, D):
    p = bern(0.3)
    assert source_code_plan(p, hamming, D, 0.1) == (0.0, None)
    system = separation_architecture(p, hamming, D, NoiselessPipe(rate_bits=0.0), seed=rng)
    assert system.zero_rate
    report = measure_end_to_end(system, p, hamming, D, 1000, 100, rng.derive("e2e"))
    assert report.mean_distortion == pytest.approx(0.3, abs=0.03)
    assert report.excess_estimate <= 0.02


def test_source_code_plan_below_the_largest_useful_distortion(bern, hamming):
    p = bern(0.3)
    rate, q_Y = source_code_plan(p, hamming, 0.25, 0.05)
    assert rate == pytest.approx(rate_distortion(p, hamming, 0.25).rate_bits + 0.05)
    assert q_Y.probs == pytest.approx((0.9, 0.1), abs=0.01)


def test_separation_systems_share_source_codebooks(uniform, hamming, rng):
    first = separation_architecture(uniform, hamming, 0.2, NoiselessPipe(rate_bits=0.6), seed=rng)
    second = separation_architecture(uniform, hamming, 0.2, NoiselessPipe(rate_bits=0.6), seed=rng)
    assert first.source_codebook(40) is second.source_codebook(40)
    assert first.source_codebook(40) is not first.source_codebook(41)
    x = rng.derive("x").generator().integers(0, 2, 40)
    first.run(x, rng)
    assert not first.__pydantic_private__


def test_separation_over_a_certified_channel(binary, uniform, hamming, identity_certificate, rng):
    system = separation_architecture(uniform, hamming, 0.3, DMCChannel.identity(binary), rate_margin=0.05,
                                     certificate=identity_certificate, eps=0.3, seed=rng)
    assert isinstance(system.transport, CodedChannel)
    report = measure_end_to_end(system, uniform, hamming, 0.3, 60, 100, rng.derive("e2e"))
    assert report.mean_distortion < 0.33


def test_separation_with_modems_needs_the_composed_label_certified(binary, uniform, hamming, identity_certificate,
                                                                  modems):
    with pytest.raises(CertificationError):
        separation_architecture(uniform, hamming, 0.3, DMCChannel.identity(binary), modems=modems,
                                certificate=identity_certificate)


def test_behavioral_check_separates_good_and_bad_encoders(uniform, rng):
    threshold = behavioral_threshold(2, 200, 50)
    assert threshold == pytest.approx(3.0 * np.sqrt(2 / 10000))
    assert behavioral_check(DirectSystem(p_X=uniform), uniform, 200, 50, threshold, rng).passed
    assert behavioral_check(RandomCodeEncoder(p_X=uniform, rate_bits=0.2), uniform, 200, 50, threshold, rng).passed
    constant = behavioral_check(ConstantEncoderSystem(letter=0), uniform, 200, 50, threshold, rng)
    assert not constant.passed
    assert constant.distance == pytest.approx(1.0)
    assert constant.empirical == (1.0, 0.0)


def test_behavioral_check_needs_a_channel_input(uniform, hamming, rng):
    system = separation_architecture(uniform, hamming, 0.2, NoiselessPipe(rate_bits=0.6), seed=rng)
    with pytest.raises(InvalidArgumentError):
        behavioral_check(system, uniform, 20, 2, 0.1, rng)


def test_equivalence_needs_a_rate_gap(binary, uniform, hamming, rng):
    with pytest.raises(PreconditionError):
        equivalence_demo(uniform, hamming, 0.1, uniform, hamming, 0.1, DMCChannel.identity(binary), [100], 100, rng)


@pytest.mark.slow
def test_equivalence_carries_a_cheaper_source(binary, uniform, bern, hamming):
    rng = SeededRng(seed=2024)
    report = equivalence_demo(uniform, hamming, 0.1, bern(0.2), hamming, 0.05, DMCChannel.identity(binary), [500],
                              100, rng, eps=0.2)
    assert report.carried_rate_bits < report.channel_rate_bits < report.pipe_rate_bits
    assert report.cells[0].mean_distortion < 0.08
