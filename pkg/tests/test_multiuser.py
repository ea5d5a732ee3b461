import pytest
from pydantic import ValidationError

from blackbox_comm.core.errors import CertificationError, PreconditionError
from blackbox_comm.models.schemas import Alphabet, Distribution, DistortionSpec, SeededRng, TransitionKernel
from blackbox_comm.services.channels import CompoundSet, DMCChannel, Medium, verify_direct_communication
from blackbox_comm.services.layering import ChannelCertificate
from blackbox_comm.services.multiuser import (
    PairSpec,
    UnicastSession,
    behavioral_induction_check,
    pair_channel,
    run_direct_multiuser,
    run_reliable_multiuser,
    separation_multiuser,
)
from blackbox_comm.services.rd_solver import rate_distortion

RING = [(0, 1), (1, 2), (2, 0)]


def make_session(uniform, hamming, medium, rate=0.2, D=0.1, eps=0.4, **spec_fields):
    pairs = tuple(PairSpec(i=i, j=j, p_X=uniform, distortion=hamming, distortion_D=D, rate_bits=rate, **spec_fields)
                  for i, j in medium.pairs)
    return UnicastSession(num_users=medium.num_users, pairs=pairs, medium=medium, eps=eps)


@pytest.fixture
def shared_medium():
    return Medium.shared_noise(RING, 0.02)


def test_session_pairs_must_match_the_medium(uniform, hamming, shared_medium):
    pairs = (PairSpec(i=0, j=1, p_X=uniform, distortion=hamming, distortion_D=0.1),)
    with pytest.raises(ValidationError):
        UnicastSession(num_users=3, pairs=pairs, medium=shared_medium)


def test_session_checks_source_alphabets(hamming, shared_medium):
    ternary = Distribution.uniform(Alphabet.of_size(3))
    pairs = tuple(PairSpec(i=i, j=j, p_X=ternary, distortion=hamming, distortion_D=0.1) for i, j in RING)
    with pytest.raises(ValidationError):
        UnicastSession(num_users=3, pairs=pairs, medium=shared_medium)


def test_pair_channel_is_labelled_by_its_pair(uniform, hamming, shared_medium):
    session = make_session(uniform, hamming, shared_medium)
    assert [pair_channel(session, k).label for k in range(3)] == ["pair0-1", "pair1-2", "pair2-0"]


def test_direct_multiuser_reports_every_pair(uniform, hamming, shared_medium, rng):
    session = make_session(uniform, hamming, shared_medium)
    reports = run_direct_multiuser(session, [200], 50, rng)
    assert [r.pair for r in reports] == RING
    assert all(r.estimate == 0.0 for r in reports)

    tight = make_session(uniform, hamming, shared_medium, D=0.005)
    assert all(r.estimate > 0.5 for r in run_direct_multiuser(tight, [200], 50, rng))


def test_reliable_multiuser_below_rate_distortion(uniform, hamming, shared_medium, rng):
    session = make_session(uniform, hamming, shared_medium, rate=0.2)
    reports = run_reliable_multiuser(session, [30], 60, rng)
    assert len(reports) == 3
    assert all(r.estimate < 0.15 for r in reports)
    assert all(r.mode == "reliable" and r.rate_bits == 0.2 for r in reports)


def test_reliable_multiuser_rejects_rates_at_or_above_rate_distortion(uniform, hamming, shared_medium, rng):
    with pytest.raises(PreconditionError):
        run_reliable_multiuser(make_session(uniform, hamming, shared_medium, rate=0.6), [30], 10, rng)
    with pytest.raises(PreconditionError):
        run_reliable_multiuser(make_session(uniform, hamming, shared_medium, rate=None), [30], 10, rng)


def test_induction_passes_with_independent_streams(uniform, hamming, shared_medium, rng):
    session = make_session(uniform, hamming, shared_medium)
    report = behavioral_induction_check(session, 200, 50, 0.04, rng)
    assert set(report.marginals) == {"pair0-1", "pair1-2", "pair2-0"}
    assert len(report.independence) == 3
    assert report.passed


def test_induction_flags_a_shared_stream(uniform, hamming, shared_medium, rng):
    session = make_session(uniform, hamming, shared_medium, stream=0)
    report = behavioral_induction_check(session, 200, 50, 0.04, rng)
    assert all(m.passed for m in report.marginals.values())
    assert not any(r.passed for r in report.independence)
    assert report.independence[0].distance == pytest.approx(1.0, abs=0.05)
    assert not report.passed


def test_induction_flags_a_constant_encoder(uniform, hamming, shared_medium, rng):
    session = make_session(uniform, hamming, shared_medium, encoder="constant")
    report = behavioral_induction_check(session, 100, 20, 0.04, rng)
    assert not any(m.passed for m in report.marginals.values())


def test_induction_measures_independence_against_the_product_of_sources(uniform, hamming, shared_medium, rng):
    # Two constant streams are independent of each other yet far from uniform x uniform.
    session = make_session(uniform, hamming, shared_medium, encoder="constant")
    report = behavioral_induction_check(session, 100, 20, 0.04, rng)
    assert not any(r.passed for r in report.independence)
    assert all(r.distance == pytest.approx(1.5) for r in report.independence)


def test_separation_multiuser_needs_certificates(uniform, hamming, shared_medium, rng):
    session = make_session(uniform, hamming, shared_medium, D=0.3)
    with pytest.raises(CertificationError):
        separation_multiuser(session, [60], 10, rng, certificates={})


def test_separation_multiuser_over_parallel_noiseless_links(binary, uniform, hamming, rng):
    identity = TransitionKernel.identity(binary)
    medium = Medium.parallel([(0, 1), (1, 0)], [identity, identity])
    session = make_session(uniform, hamming, medium, D=0.3, eps=0.3)
    certificates = {}
    for k, spec in enumerate(session.pairs):
        evidence = verify_direct_communication(CompoundSet.of(pair_channel(session, k)), uniform, hamming, 0.1,
                                               [100], 100, rng.derive("certify", k))
        certificates[spec.pair] = ChannelCertificate.from_evidence(evidence, 0.1)

    reports = separation_multiuser(session, [60], 50, rng, certificates, rate_margin=0.3)
    assert [r.pair for r in reports] == [(0, 1), (1, 0)]
    assert all(r.estimate < 0.15 for r in reports)

    with pytest.raises(PreconditionError):
        separation_multiuser(session, [60], 10, rng, certificates, rate_margin=0.5)


def test_parallel_medium_pairs_behave_like_their_own_channels(uniform, hamming, rng):
    bsc = TransitionKernel.bsc(0.05)
    medium = Medium.parallel([(0, 1), (1, 0)], [bsc, bsc])
    reports = run_direct_multiuser(make_session(uniform, hamming, medium, D=0.05), [200], 200, rng)
    [alone] = verify_direct_communication(CompoundSet.of(DMCChannel.bsc(0.05)), uniform, hamming, 0.05, [200], 200,
                                          rng.derive("alone"))
    cell = alone.at(200)
    assert 0.2 < cell.excess_estimate < 0.7
    for report in reports:
        assert report.ci_low <= cell.ci_high and cell.ci_low <= report.ci_high


@pytest.mark.slow
def test_reliable_multiuser_error_falls_with_blocklength():
    rng = SeededRng(seed=2024)
    uniform = Distribution.uniform(Alphabet.binary())
    hamming = DistortionSpec.hamming(Alphabet.binary())
    rate = 0.75 * rate_distortion(uniform, hamming, 0.1).rate_bits
    session = make_session(uniform, hamming, Medium.shared_noise(RING, 0.02), rate=rate, eps=0.1)
    reports = run_reliable_multiuser(session, [200, 500, 1000], 300, rng)
    for pair in RING:
        estimates = [r.estimate for r in sorted((r for r in reports if r.pair == pair), key=lambda r: r.n)]
        assert all(a >= b for a, b in zip(estimates, estimates[1:]))
        assert estimates[-1] <= 0.1
