#!/usr/bin/env python3
"""
Sampler tests: seeded streams, public-matrix expansion and the discrete Gaussian.
"""

import math
import sys

import numpy as np
import pytest
from scipy import stats

import config
from errors import ParameterError
from field import get_field
from sampler import (
    ChiParams,
    Prg,
    expand_matrix,
    expand_rows,
    parse_seed,
    sample_chi,
    sample_discrete_gaussian,
    sample_gaussian,
)

FIELD = get_field(config.LWE_PRESETS["a"][1])


def test_parse_seed_forms():
    raw = bytes(range(32))
    assert parse_seed(raw) == raw
    assert parse_seed(raw.hex()) == raw
    assert parse_seed("0x" + raw.hex()) == raw
    assert len(parse_seed(7)) == 32
    assert parse_seed(7) != parse_seed(8)
    with pytest.raises(ParameterError):
        parse_seed("not hex")
    with pytest.raises(ParameterError):
        parse_seed(-1)


def test_prg_is_deterministic_and_prefix_stable():
    a, b = Prg("ab" * 32), Prg("ab" * 32)
    assert a.read(64) == b.read(64)
    assert a.read(100)[:64] == a.read(64)
    assert a.next(16) != a.next(16)
    assert a.derive("x") == b.derive("x") != b.derive("y")


def test_named_generators_are_independent():
    prg = Prg(1)
    x = prg.generator("one").integers(0, 1 << 30, size=8)
    y = prg.generator("two").integers(0, 1 << 30, size=8)
    z = prg.generator("one").integers(0, 1 << 30, size=8)
    assert np.array_equal(x, z)
    assert not np.array_equal(x, y)


def test_matrix_is_deterministic_and_row_stable():
    seed = Prg(5).derive("A")
    A = expand_matrix(seed, 100, 16, FIELD)
    assert A.shape == (100, 16)
    assert np.all((A >= 0) & (A < FIELD.q))
    assert np.array_equal(A, expand_matrix(seed, 100, 16, FIELD))
    # a taller matrix extends a shorter one
    assert np.array_equal(expand_matrix(seed, 200, 16, FIELD)[:100], A)
    assert np.array_equal(expand_rows(seed, 70, 90, 16, FIELD), A[70:90])
    assert not np.array_equal(expand_matrix(Prg(6).derive("A"), 100, 16, FIELD), A)


def test_matrix_entries_look_uniform():
    A = expand_matrix(Prg(9).derive("A"), 256, 64, FIELD).ravel()
    counts, _ = np.histogram(A, bins=16, range=(0, FIELD.q))
    assert stats.chisquare(counts).pvalue > 1e-4


def test_matrix_rejects_empty_shape():
    with pytest.raises(ParameterError):
        expand_matrix(b"\x00" * 32, 0, 4, FIELD)


def test_chi_from_beta_q_conventions():
    assert ChiParams.from_beta_q(3.2, FIELD.q).sigma_chi == pytest.approx(1.2766, abs=1e-4)
    assert ChiParams.from_beta_q(3.2, FIELD.q, "width").sigma_chi == 3.2
    with pytest.raises(ParameterError):
        ChiParams.from_beta_q(3.2, FIELD.q, "radius")
    with pytest.raises(ParameterError):
        ChiParams(sigma_chi=0.4, q=FIELD.q)


@pytest.mark.parametrize("sigma", [0.8, 1.2766, 3.2, 40.0])
def test_discrete_gaussian_moments(sigma):
    x = sample_discrete_gaussian(sigma, 200_000, np.random.default_rng(11))
    assert x.dtype == np.int64
    assert abs(x.mean()) < 0.02 * max(1.0, sigma)
    assert x.std() == pytest.approx(sigma, rel=0.02)


def test_discrete_gaussian_matches_pmf():
    sigma = 1.5
    x = sample_discrete_gaussian(sigma, 100_000, np.random.default_rng(12))
    support = np.arange(-6, 7)
    weights = np.exp(-support.astype(float) ** 2 / (2 * sigma ** 2))
    expected = weights / weights.sum() * x.shape[0]
    observed = np.array([(x == v).sum() for v in support])
    # tails beyond 6 sigma-ish are folded out; renormalize to the observed mass
    expected *= observed.sum() / expected.sum()
    assert stats.chisquare(observed, expected).pvalue > 1e-4


def test_chi_samples_are_residues():
    params = ChiParams.from_beta_q(3.2, FIELD.q)
    e = sample_chi(params, 10_000, np.random.default_rng(13))
    assert np.all((e >= 0) & (e < FIELD.q))
    assert np.abs(FIELD.centered(e)).max() < 12 * params.sigma_chi


def test_sample_gaussian_edges():
    rng = np.random.default_rng(14)
    assert np.array_equal(sample_gaussian(0.0, 5, rng), np.zeros(5))
    assert sample_gaussian(2.0, 100_000, rng).std() == pytest.approx(2.0, rel=0.02)
    with pytest.raises(ParameterError):
        sample_gaussian(-1.0, 5, rng)
    with pytest.raises(ParameterError):
        sample_discrete_gaussian(0.0, 5, rng)
    assert sample_discrete_gaussian(1.0, 0, rng).shape == (0,)


def main():
    tests = [
        ("parse seed", test_parse_seed_forms),
        ("prg determinism", test_prg_is_deterministic_and_prefix_stable),
        ("named generators", test_named_generators_are_independent),
        ("matrix determinism", test_matrix_is_deterministic_and_row_stable),
        ("matrix uniformity", test_matrix_entries_look_uniform),
        ("matrix shape", test_matrix_rejects_empty_shape),
        ("chi conventions", test_chi_from_beta_q_conventions),
        ("discrete gaussian pmf", test_discrete_gaussian_matches_pmf),
        ("chi residues", test_chi_samples_are_residues),
        ("gaussian edges", test_sample_gaussian_edges),
    ] + [(f"moments sigma={s}", lambda s=s: test_discrete_gaussian_moments(s)) for s in (0.8, 3.2, 40.0)]
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
