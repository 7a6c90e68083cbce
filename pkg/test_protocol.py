#!/usr/bin/env python3
"""
Protocol tests: the four-round masking aggregation, Sagg, dropouts,
misbehaving clients and the communication transcript.
"""

import sys

import numpy as np
import pandas as pd
import pytest

import config
from codec import decode_sum, encode
from errors import InsufficientParticipationError, ParameterError
from field import get_field
from lwe import LweParams
from protocol import (
    REPORT_COLUMNS,
    SERVER,
    AdversarySpec,
    Behavior,
    Message,
    MessageBus,
    Phase,
    RoundState,
    measure_transcript,
    run_masking_aggregation,
    run_sagg,
    write_reports,
)
from shamir import SharingConfig

Q_A = config.LWE_PRESETS["a"][1]
FIELD = get_field(Q_A)


def _inputs(k, m, seed=0):
    return np.random.default_rng(seed).integers(0, 1 << 16, size=(k, m), dtype=np.int64)


def _exact(m=64, n=16):
    return LweParams(n=n, q=Q_A, m=m, zero_noise=True)


def test_honest_round_is_exact_with_zero_noise():
    inputs = _inputs(10, 64)
    outcome = run_masking_aggregation(inputs, _exact(), seed=1)
    assert not outcome.aborted
    assert outcome.participants == frozenset(range(10))
    assert outcome.state.phase is Phase.DONE
    assert np.array_equal(outcome.result, FIELD.sum(inputs))


def test_real_noise_stays_within_a_few_sigma():
    params = LweParams.preset("a", m=256)
    inputs = _inputs(8, 256, seed=2)
    outcome = run_masking_aggregation(inputs, params, seed=3)
    noise = FIELD.centered(FIELD.sub(outcome.result, FIELD.sum(inputs)))
    # sum of 8 chi errors has sd sqrt(8) * sigma_chi
    assert np.abs(noise).max() < 8 * np.sqrt(8) * params.sigma_chi
    assert noise.std() == pytest.approx(np.sqrt(8) * params.sigma_chi, rel=0.25)


@pytest.mark.parametrize("dropout_round", [1, 2, 3])
def test_dropouts_sum_exactly_over_survivors(dropout_round):
    inputs = _inputs(10, 32, seed=4)
    adversary = AdversarySpec(dropout_fraction=0.2, dropout_round=dropout_round)
    outcome = run_masking_aggregation(inputs, _exact(m=32), adversary=adversary, seed=5)
    assert not outcome.aborted
    survivors = sorted(outcome.participants)
    expected_size = 10 if dropout_round == 3 else 8
    assert len(survivors) == expected_size
    assert outcome.state.U2 <= outcome.state.U1 <= outcome.state.U
    assert np.array_equal(outcome.result, FIELD.sum(inputs[survivors]))


def test_too_many_dropouts_abort():
    inputs = _inputs(10, 16)
    sharing = SharingConfig(k=10, t=6, p=4, field=FIELD)
    outcome = run_masking_aggregation(inputs, _exact(m=16), sharing,
                                      AdversarySpec(dropout_fraction=0.2), seed=6)
    assert outcome.aborted
    assert outcome.result.stage == "sagg"
    assert outcome.state.phase is Phase.ABORTED
    assert measure_transcript(outcome).outcome == "abort"


def test_u1_at_threshold_aborts():
    inputs = _inputs(4, 16)
    sharing = SharingConfig(k=4, t=2, p=1, field=FIELD)
    outcome = run_masking_aggregation(inputs, _exact(m=16), sharing,
                                      AdversarySpec(dropout_fraction=0.5), seed=7)
    assert outcome.aborted and outcome.result.stage == "R2"


def test_malicious_mode_aborts_on_bad_share_sum():
    inputs = _inputs(10, 16)
    adversary = AdversarySpec.parse("corrupt=1;behavior=bad_share_sum")
    outcome = run_masking_aggregation(inputs, _exact(m=16), adversary=adversary,
                                      malicious=True, seed=8)
    assert outcome.aborted
    assert "inconsistency" in outcome.result.reason


def test_malicious_mode_aborts_on_bad_share():
    inputs = _inputs(10, 16)
    adversary = AdversarySpec(corrupt_clients={3}, behavior=Behavior.BAD_SHARE)
    outcome = run_masking_aggregation(inputs, _exact(m=16), adversary=adversary,
                                      malicious=True, seed=9)
    assert outcome.aborted


def test_semi_honest_mode_does_not_catch_bad_share_sum():
    inputs = _inputs(10, 16)
    adversary = AdversarySpec(corrupt_clients={1}, behavior=Behavior.BAD_SHARE_SUM)
    outcome = run_masking_aggregation(inputs, _exact(m=16), adversary=adversary, seed=10)
    assert not outcome.aborted
    assert not np.array_equal(outcome.result, FIELD.sum(inputs))


def test_malicious_honest_round_matches_semi_honest():
    inputs = _inputs(10, 16)
    plain = run_masking_aggregation(inputs, _exact(m=16), seed=11)
    verified = run_masking_aggregation(inputs, _exact(m=16), malicious=True, seed=11)
    assert not verified.aborted
    assert verified.sharing.malicious
    assert np.array_equal(plain.result, verified.result)


def test_broadcast_topology_agrees_with_server():
    inputs = _inputs(8, 16)
    server = run_masking_aggregation(inputs, _exact(m=16), seed=12)
    broadcast = run_masking_aggregation(inputs, _exact(m=16), seed=12, topology="broadcast")
    assert np.array_equal(server.result, broadcast.result)
    assert measure_transcript(broadcast).client_bytes > measure_transcript(server).client_bytes


def test_round_is_deterministic_in_seed():
    inputs = _inputs(6, 32)
    params = LweParams.preset("b", m=32)
    a = run_masking_aggregation(inputs, params, seed=13)
    b = run_masking_aggregation(inputs, params, seed=13)
    c = run_masking_aggregation(inputs, params, seed=14)
    assert a.bus.fingerprint() == b.bus.fingerprint() != c.bus.fingerprint()
    assert np.array_equal(a.result, b.result)


def test_hand_counted_transcript_two_clients():
    # masked: 10-byte header + 4 elements; one share out; one share-sum to the server
    params = LweParams(n=1, q=Q_A, m=4)
    outcome = run_masking_aggregation(_inputs(2, 4), params, seed=15)
    report = measure_transcript(outcome)
    assert (outcome.sharing.t, outcome.sharing.p) == (1, 1)
    assert report.client_bytes == 46
    assert report.expansion == pytest.approx(2.875)
    assert report.expansion_bitpacked == pytest.approx(6 * 25 / 64)
    assert report.server_received_bytes == 2 * (26 + 10)
    assert report.server_sent_bytes == 2 * (4 + 1)
    assert report.server_bytes == report.server_sent_bytes + report.server_received_bytes


def test_report_row_and_csv(tmp_path):
    outcome = run_masking_aggregation(_inputs(4, 8), _exact(m=8), seed=16)
    report = measure_transcript(outcome)
    row = report.to_row()
    assert list(row) == REPORT_COLUMNS
    assert row["outcome"] == "ok" and row["mode"] == "semi-honest"
    assert row["client_ms"] >= 0 and row["server_ms"] >= row["unmask_ms"]
    path = write_reports([report, report], tmp_path / "agg.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == REPORT_COLUMNS and len(frame) == 2


def test_sagg_sums_secret_vectors():
    sharing = SharingConfig(k=6, t=3, p=2, field=FIELD)
    secrets = {i: FIELD.random(5, np.random.default_rng(i)) for i in range(6)}
    total, participants = run_sagg(secrets, sharing, seed=17)
    assert participants == frozenset(range(6))
    assert np.array_equal(total, FIELD.sum(list(secrets.values())))

    # a client that deals and then goes quiet still counts toward the sum
    total, participants = run_sagg(secrets, sharing, seed=17, silent_after_sharing=frozenset({5}))
    assert participants == frozenset(range(6))
    assert np.array_equal(total, FIELD.sum(list(secrets.values())))

    with pytest.raises(InsufficientParticipationError):
        run_sagg({i: secrets[i] for i in range(4)}, sharing, seed=17)
    with pytest.raises(InsufficientParticipationError):
        run_sagg(secrets, sharing, seed=17, silent_after_sharing=frozenset({4, 5}))


def test_adversary_spec_parsing_and_limits():
    spec = AdversarySpec.parse("dropout=0.25; round=2; corrupt=1,4; behavior=bad_share_sum")
    assert spec.dropout_fraction == 0.25 and spec.dropout_round == 2
    assert spec.corrupt_clients == frozenset({1, 4})
    assert spec.behavior is Behavior.BAD_SHARE_SUM
    assert spec.dropout_count(10) == 2
    assert AdversarySpec.parse("") == AdversarySpec()
    with pytest.raises(ParameterError):
        AdversarySpec.parse("dropout")
    with pytest.raises(ParameterError):
        AdversarySpec.parse("colour=blue")
    with pytest.raises(ParameterError):
        AdversarySpec(dropout_fraction=1.0)
    with pytest.raises(ParameterError):
        AdversarySpec(corrupt_clients={0, 1}).validate(4)
    with pytest.raises(ParameterError):
        run_masking_aggregation(_inputs(1, 4), _exact(m=4))


def test_round_state_only_moves_forward():
    state = RoundState(U=frozenset(range(3)))
    state.advance(Phase.R2)
    with pytest.raises(ParameterError):
        state.advance(Phase.R1)
    state.advance(Phase.DONE)
    with pytest.raises(ParameterError):
        state.advance(Phase.ABORTED)


def test_bus_counts_traffic_but_not_self_sends():
    bus = MessageBus()
    bus.send(Message(0, 1, SERVER, "masked", b"abcd", elements=1))
    bus.send(Message(0, 1, 1, "share", b"xy", elements=1))
    assert bus.sent_bytes[1] == 4 and bus.received_bytes[SERVER] == 4
    assert bus.message_count == 1
    assert len(bus.collect(1, "share")) == 1
    assert bus.collect(1, "share") == []


@pytest.mark.slow
def test_bitpacked_expansion_at_scale():
    params = LweParams.preset("a", m=20000)
    outcome = run_masking_aggregation(_inputs(500, 20000), params, seed=18)
    report = measure_transcript(outcome)
    assert not outcome.aborted
    assert report.expansion_bitpacked == pytest.approx(1.68, abs=0.01)




@pytest.mark.slow
@pytest.mark.parametrize("case", range(200))
def test_randomized_zero_noise_rounds_are_exact(case):
    rng = np.random.default_rng(1000 + case)
    preset = ["a", "b", "c"][case % 3]
    k = int(rng.integers(2, 65))
    m = int(rng.integers(1, 1025))
    params = LweParams.preset(preset, m=m, zero_noise=True)
    field = params.field
    reals = rng.uniform(-3.2, 3.2, size=(k, m))
    inputs = np.stack([encode(g, field=field).elements for g in reals])
    outcome = run_masking_aggregation(inputs, params, seed=case)
    assert not outcome.aborted
    assert np.array_equal(outcome.result, field.sum(inputs))
    decoded = decode_sum(outcome.result, k, field=field)
    # each client rounds to the nearest 1e-4
    assert np.abs(decoded - reals.sum(axis=0)).max() <= k * 0.5e-4 + 1e-9


@pytest.mark.slow
def test_tampered_malicious_rounds_always_abort():
    aborts = 0
    for run in range(1000):
        rng = np.random.default_rng(run)
        corrupt = int(rng.integers(0, 6))
        behavior = [Behavior.BAD_SHARE, Behavior.BAD_SHARE_SUM][run % 2]
        adversary = AdversarySpec(corrupt_clients={corrupt}, behavior=behavior)
        outcome = run_masking_aggregation(_inputs(6, 4, seed=run), _exact(m=4, n=4),
                                          adversary=adversary, malicious=True, seed=run)
        aborts += outcome.aborted
    assert aborts == 1000


@pytest.mark.slow
def test_untampered_malicious_rounds_never_abort():
    aborts = 0
    for run in range(1000):
        inputs = _inputs(6, 4, seed=run)
        outcome = run_masking_aggregation(inputs, _exact(m=4, n=4), malicious=True, seed=run)
        aborts += outcome.aborted
        assert outcome.aborted or np.array_equal(outcome.result, FIELD.sum(inputs))
    assert aborts == 0


@pytest.mark.parametrize("k", [8, 32, pytest.param(128, marks=pytest.mark.slow)])
@pytest.mark.parametrize("dropout_round", [1, 2, 3])
def test_heavy_dropouts_sum_over_survivors(k, dropout_round):
    inputs = _inputs(k, 64, seed=k)
    adversary = AdversarySpec(dropout_fraction=0.29, dropout_round=dropout_round)
    outcome = run_masking_aggregation(inputs, _exact(m=64), adversary=adversary, seed=k + dropout_round)
    assert not outcome.aborted
    survivors = sorted(outcome.participants)
    dropped = adversary.dropout_count(k)
    assert len(survivors) == (k if dropout_round == 3 else k - dropped)
    assert np.array_equal(outcome.result, FIELD.sum(inputs[survivors]))


@pytest.mark.slow
def test_aggregate_noise_matches_summed_chi():
    k, m = 128, 10_000
    params = LweParams.preset("a", m=m)
    inputs = _inputs(k, m, seed=19)
    outcome = run_masking_aggregation(inputs, params, seed=20)
    assert not outcome.aborted
    noise = FIELD.centered(FIELD.sub(outcome.result, FIELD.sum(inputs))).astype(np.float64)
    expected = np.sqrt(k) * params.sigma_chi
    assert noise.std() == pytest.approx(expected, rel=0.10)
    assert abs(noise.mean()) < 4 * expected / np.sqrt(m)
    # same noise in real units after decoding
    assert noise.std() / config.FIXED_POINT_SCALE == pytest.approx(0.00144, rel=0.10)


def main():
    tests = [
        ("honest exact", test_honest_round_is_exact_with_zero_noise),
        ("noise bound", test_real_noise_stays_within_a_few_sigma),
        ("too many dropouts", test_too_many_dropouts_abort),
        ("U1 threshold", test_u1_at_threshold_aborts),
        ("bad share-sum caught", test_malicious_mode_aborts_on_bad_share_sum),
        ("bad share caught", test_malicious_mode_aborts_on_bad_share),
        ("semi-honest blind spot", test_semi_honest_mode_does_not_catch_bad_share_sum),
        ("malicious honest", test_malicious_honest_round_matches_semi_honest),
        ("broadcast topology", test_broadcast_topology_agrees_with_server),
        ("determinism", test_round_is_deterministic_in_seed),
        ("hand-counted transcript", test_hand_counted_transcript_two_clients),
        ("sagg", test_sagg_sums_secret_vectors),
        ("adversary spec", test_adversary_spec_parsing_and_limits),
        ("round state", test_round_state_only_moves_forward),
        ("message bus", test_bus_counts_traffic_but_not_self_sends),
    ] + [(f"dropouts round {r}", lambda r=r: test_dropouts_sum_exactly_over_survivors(r))
         for r in (1, 2, 3)] + [
        (f"29% dropouts k={k} round {r}", lambda k=k, r=r: test_heavy_dropouts_sum_over_survivors(k, r))
        for k in (8, 32) for r in (1, 2, 3)
    ]
    failed = 0
    for name, func in tests:
        try:
            func()
            print(f"  ✓ {name}")
        except Exception as e:
            failed += 1
            print(f"  ✗ {name}: {e}")
    print(f"\n{len(tests) - failed}/{len(tests)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
