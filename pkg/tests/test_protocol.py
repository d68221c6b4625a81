"""Key schedule, identifier derivation, and matching."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exposim.protocol import (
    ContactRecord,
    DiagnosisKey,
    RollingProximityIdentifier,
    TemporaryExposureKey,
    agent_id_from_token,
    day_interval_range,
    derive_day_rpis,
    derive_rpi,
    generate_tek,
    interval_number,
    match_observations,
    match_permanent,
    permanent_id,
)

# Generated once with an out-of-band HMAC-SHA256 oracle and frozen:
# (key hex, interval, expected rpi hex)
FROZEN_VECTORS = [
    ("000102030405060708090a0b0c0d0e0f", 0, "ce9327f97472be96994bb764d94a9983"),
    ("000102030405060708090a0b0c0d0e0f", 143, "745ecdbad5a4e940a3ec14521e423391"),
    ("00000000000000000000000000000000", 0, "17db51a8034e5c831175416ef8d85a67"),
    ("ffffffffffffffffffffffffffffffff", 71, "3d547f07780b3a39b9e22876b15cb85b"),
    ("2b7e151628aed2a6abf7158809cf4f3c", 42, "5e0a94418390f190eebebae3e927827d"),
]


def tek(key_hex: str, day: int = 0) -> TemporaryExposureKey:
    return TemporaryExposureKey(bytes.fromhex(key_hex), day)


def record_for(key: TemporaryExposureKey, interval: int, rotation: int = 10,
               attenuation: float = 45.0, duration: float = 1.0) -> ContactRecord:
    rpi = derive_rpi(key, interval, rotation)
    return ContactRecord(rpi, attenuation, interval, duration)


class TestTemporaryExposureKey:
    def test_generate_is_deterministic_per_seed(self):
        a = generate_tek(np.random.default_rng(42), 0)
        b = generate_tek(np.random.default_rng(42), 0)
        assert a.key_bytes == b.key_bytes
        assert len(a.key_bytes) == 16

    def test_different_seeds_differ(self):
        a = generate_tek(np.random.default_rng(42), 0)
        b = generate_tek(np.random.default_rng(43), 0)
        assert a.key_bytes != b.key_bytes

    def test_thousand_keys_pairwise_distinct(self):
        rng = np.random.default_rng(7)
        keys = {generate_tek(rng, 0).key_bytes for _ in range(1000)}
        assert len(keys) == 1000

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            TemporaryExposureKey(b"\x00" * 15, 0)

    def test_rejects_negative_day(self):
        with pytest.raises(ValueError):
            TemporaryExposureKey(b"\x00" * 16, -1)


class TestIntervalNumber:
    @pytest.mark.parametrize("minute,rotation,expected", [
        (0, 10, 0),
        (25, 10, 2),
        (199, 20, 9),
        (1439, 10, 143),
        (1440, 10, 144),
    ])
    def test_floor_division(self, minute, rotation, expected):
        assert interval_number(minute, rotation) == expected

    @pytest.mark.parametrize("rotation", [9, 21, 0, -5])
    def test_rejects_rotation_out_of_range(self, rotation):
        with pytest.raises(ValueError):
            interval_number(0, rotation)

    def test_rejects_negative_minute(self):
        with pytest.raises(ValueError):
            interval_number(-1, 10)


class TestDeriveRpi:
    @pytest.mark.parametrize("key_hex,interval,expected", FROZEN_VECTORS)
    def test_frozen_vectors(self, key_hex, interval, expected):
        rotation = 20 if interval == 71 else 10
        rpi = derive_rpi(tek(key_hex), interval, rotation)
        assert rpi.rpi_bytes.hex() == expected

    def test_deterministic(self):
        k = tek("2b7e151628aed2a6abf7158809cf4f3c")
        assert derive_rpi(k, 5).rpi_bytes == derive_rpi(k, 5).rpi_bytes

    def test_adjacent_intervals_differ(self):
        k = tek("2b7e151628aed2a6abf7158809cf4f3c")
        assert derive_rpi(k, 5).rpi_bytes != derive_rpi(k, 6).rpi_bytes

    def test_no_collisions_across_random_key_pairs(self):
        rng = np.random.default_rng(11)
        seen = set()
        for _ in range(10_000):
            k = generate_tek(rng, 0)
            seen_bytes = derive_rpi(k, 17).rpi_bytes
            assert seen_bytes not in seen
            seen.add(seen_bytes)

    def test_interval_outside_day_rejected(self):
        k = tek("2b7e151628aed2a6abf7158809cf4f3c", day=0)
        with pytest.raises(ValueError):
            derive_rpi(k, 144, 10)
        k1 = tek("2b7e151628aed2a6abf7158809cf4f3c", day=1)
        with pytest.raises(ValueError):
            derive_rpi(k1, 143, 10)
        derive_rpi(k1, 144, 10)  # first interval of day 1 is fine


class TestDeriveDayRpis:
    def test_rotation_10_gives_144(self):
        assert len(derive_day_rpis(tek("00" * 16), 10)) == 144

    def test_rotation_20_gives_72(self):
        assert len(derive_day_rpis(tek("00" * 16), 20)) == 72

    def test_elements_match_derive_rpi(self):
        k = tek("2b7e151628aed2a6abf7158809cf4f3c", day=2)
        rpis = derive_day_rpis(k, 10)
        window = day_interval_range(2, 10)
        assert [r.interval_number for r in rpis] == list(window)
        for rpi in rpis:
            assert rpi.rpi_bytes == derive_rpi(k, rpi.interval_number, 10).rpi_bytes

    def test_day_rpis_pairwise_distinct(self):
        # unlinkability: no equality relation across one key's day
        rpis = [r.rpi_bytes for r in derive_day_rpis(tek("ab" * 16), 10)]
        assert len(set(rpis)) == 144


def brute_force_match(published, stored, rotation):
    """Oracle: all-pairs comparison of every derived identifier against
    every stored record."""
    out = []
    for ref, dk in enumerate(published):
        day_rpis = derive_day_rpis(dk.tek, rotation)
        records = [
            rec for rec in stored
            if any(rec.observed_rpi.rpi_bytes == rpi.rpi_bytes
                   and rec.start_interval == rpi.interval_number
                   for rpi in day_rpis)
        ]
        if records:
            out.append((ref, records))
    return out


class TestMatchObservations:
    def test_empty_published(self):
        rng = np.random.default_rng(0)
        stored = [record_for(generate_tek(rng, 0), i) for i in range(3)]
        assert match_observations([], stored, 10) == []

    def test_recovers_exact_records(self):
        rng = np.random.default_rng(1)
        k = generate_tek(rng, 0)
        mine = [record_for(k, i) for i in (5, 6, 7)]
        noise = [record_for(generate_tek(rng, 0), 9) for _ in range(4)]
        matches = match_observations([DiagnosisKey(k, 6)], mine + noise, 10)
        assert len(matches) == 1
        assert matches[0].diagnosis_key_ref == 0
        assert matches[0].records == mine

    def test_unpublished_key_matches_nothing(self):
        rng = np.random.default_rng(2)
        never_seen = DiagnosisKey(generate_tek(rng, 0), 6)
        stored = []
        for _ in range(100_000):
            token = bytes(rng.bytes(16))
            stored.append(ContactRecord(RollingProximityIdentifier(token, 3), 50.0, 3, 1.0))
        assert match_observations([never_seen], stored, 10) == []

    def test_wrong_key_matches_nothing(self):
        # matching requires possession of the real key
        rng = np.random.default_rng(3)
        k, wrong = generate_tek(rng, 0), generate_tek(rng, 0)
        stored = [record_for(k, i) for i in range(20)]
        assert match_observations([DiagnosisKey(wrong, 6)], stored, 10) == []

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            keys = [generate_tek(rng, 0) for _ in range(int(rng.integers(1, 5)))]
            stored = []
            for _ in range(int(rng.integers(0, 30))):
                k = keys[int(rng.integers(0, len(keys)))]
                interval = int(rng.integers(0, 144))
                if rng.random() < 0.5:  # genuine observation
                    stored.append(record_for(k, interval))
                else:  # random garbage
                    stored.append(ContactRecord(
                        RollingProximityIdentifier(bytes(rng.bytes(16)), interval), 50.0, interval, 2.0))
            published = [DiagnosisKey(k, 6) for k in keys]
            got = match_observations(published, stored, 10)
            expected = brute_force_match(published, stored, 10)
            assert [(m.diagnosis_key_ref, m.records) for m in got] == expected


class TestPermanentId:
    def test_agent_zero_is_all_zero(self):
        assert permanent_id(0).rpi_bytes == bytes(16)

    def test_permanence(self):
        assert permanent_id(7).rpi_bytes == permanent_id(7).rpi_bytes

    def test_injective(self):
        assert permanent_id(7).rpi_bytes != permanent_id(8).rpi_bytes

    def test_round_trip(self):
        # the simplified mode's deliberate weakening: tokens invert to ids
        for agent_id in (0, 1, 7, 65535, 2**31):
            assert agent_id_from_token(permanent_id(agent_id).rpi_bytes) == agent_id

    def test_inversion_rejects_random_tokens(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            agent_id_from_token(bytes(rng.bytes(16)))

    def test_match_permanent(self):
        token = permanent_id(3)
        stored = [ContactRecord(token, 44.0, 12, 2.0), ContactRecord(permanent_id(4), 44.0, 12, 1.0)]
        published = [DiagnosisKey(TemporaryExposureKey(token.rpi_bytes, 0), 6)]
        matches = match_permanent(published, stored)
        assert len(matches) == 1
        assert matches[0].records == [stored[0]]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 143))
def test_derivation_pure(seed, interval):
    k = generate_tek(np.random.default_rng(seed), 0)
    assert derive_rpi(k, interval).rpi_bytes == derive_rpi(k, interval).rpi_bytes


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 20), st.integers(0, 5))
def test_day_window_consistency(rotation, day):
    window = day_interval_range(day, rotation)
    # every interval's start minute falls inside the day
    for interval in (window.start, window.stop - 1):
        assert day * 1440 <= interval * rotation < (day + 1) * 1440
    # and the neighbours fall outside
    assert (window.start - 1) * rotation < day * 1440
    assert window.stop * rotation >= (day + 1) * 1440
