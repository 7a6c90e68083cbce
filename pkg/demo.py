#!/usr/bin/env python3
"""
FLDP SECURE AGGREGATION - DEMO SCRIPT

Walks through one masking-aggregation round, the privacy accountant and a
short training run, printing what happens at each step.

Usage:
    python3 demo.py [--preset a|b|c] [--clients 16] [--dim 2048] [--dropout 0.25]

Example:
    python3 demo.py
    python3 demo.py --preset c --clients 64 --dropout 0.29
"""

import argparse
import sys

import numpy as np

import config
from accountant import DpConfig, epsilon
from codec import CodecConfig, decode_sum, encode
from fedsim import TrainingConfig, create_source, load_dataset, train
from lwe import LweParams
from protocol import AdversarySpec, measure_transcript, run_masking_aggregation
from sampler import Prg


def print_header():
    """Print nice header for demo."""
    print("\n" + "=" * 80)
    print(" " * 22 + "FLDP SECURE AGGREGATION SIMULATOR")
    print(" " * 18 + "LWE masking + packed Shamir sharing + DP-SGD")
    print("=" * 80 + "\n")


def print_section(title):
    """Print section header."""
    print(f"\n{'─' * 80}")
    print(f"  {title}")
    print('─' * 80)


def run_demo(preset: str = "a", clients: int = 16, dim: int = 2048, dropout: float = 0.25,
             epochs: int = 2) -> int:
    print_header()
    prg = Prg(config.DEFAULT_SEED)

    # STEP 1: Parameters
    print_section("STEP 1: LWE Parameters")
    params = LweParams.preset(preset, m=dim)
    print(f"✓ Preset {preset}: n={params.n}, q={params.q}, beta*q={params.beta_q}")
    print(f"  sigma_chi: {params.sigma_chi:.4f}")
    print(f"  NTT two-adicity: {params.field.two_adicity}")
    print(f"  Client capacity: {params.max_clients}")
    if clients > params.max_clients:
        print(f"❌ {clients} clients exceed the capacity of preset {preset}")
        return config.EXIT_CONFIG_ERROR

    # STEP 2: Encode client gradients
    print_section("STEP 2: Encoding Client Gradients")
    codec = CodecConfig()
    raw = prg.generator("demo/gradients").normal(scale=0.5, size=(clients, dim))
    encoded = [encode(g, codec, params.field) for g in raw]
    print(f"✓ {clients} gradients of length {dim} encoded to {codec.bits}-bit field elements")
    print(f"  Clamped entries: {sum(e.clamped for e in encoded)}")
    inputs = np.vstack([e.elements for e in encoded])

    # STEP 3: Exact round with the zero-noise hook
    print_section("STEP 3: Aggregation Round (zero-noise check)")
    exact_params = LweParams.preset(preset, m=dim, zero_noise=True)
    outcome = run_masking_aggregation(inputs, exact_params, seed=prg.derive("demo/exact"))
    if outcome.aborted:
        print(f"❌ ABORT: {outcome.result.reason}")
        return config.EXIT_PROTOCOL_ABORT
    matches = np.array_equal(outcome.result, exact_params.field.sum(inputs))
    print(f"{'✓' if matches else '❌'} Aggregate equals the plaintext sum: {matches}")

    # STEP 4: Real round with dropouts
    print_section(f"STEP 4: Aggregation Round ({dropout:.0%} dropout)")
    adversary = AdversarySpec(dropout_fraction=dropout)
    outcome = run_masking_aggregation(inputs, params, adversary=adversary, seed=prg.derive("demo/noisy"))
    if outcome.aborted:
        print(f"❌ ABORT at {outcome.result.stage}: {outcome.result.reason}")
        return config.EXIT_PROTOCOL_ABORT
    survivors = sorted(outcome.participants)
    decoded = decode_sum(outcome.result, len(survivors), codec, params.field)
    error = np.abs(decoded - raw[survivors].sum(axis=0))
    report = measure_transcript(outcome)
    print(f"✓ Survivors: {len(survivors)}/{clients}   (t={outcome.sharing.t}, p={outcome.sharing.p})")
    print(f"  Max decode error: {error.max():.5f}   (LWE noise + rounding)")
    print(f"  Client bytes: {report.client_bytes:,.0f}")
    print(f"  Expansion: {report.expansion:.3f}   bit-packed: {report.expansion_bitpacked:.3f}")
    print(f"  Client time: {report.client_ms:.1f} ms   Server time: {report.server_ms:.1f} ms")

    # STEP 5: Privacy
    print_section("STEP 5: Privacy Accounting")
    dp = DpConfig(sigma=1.0, clip_C=config.DEFAULT_CLIP_C, batch_size=32, epochs=epochs)
    eps_c, alpha_c = epsilon(dp)
    eps_d, alpha_d = epsilon(dp, discrete=True)
    print(f"✓ sigma=1, b=32, E={epochs}, delta={dp.delta}")
    print(f"  Continuous Gaussian: eps={eps_c:.4f} (alpha={alpha_c:g})")
    print(f"  Discrete Gaussian:   eps={eps_d:.4f} (alpha={alpha_d:g})")

    # STEP 6: Training
    print_section("STEP 6: Training (logistic regression, secure aggregation)")
    cfg = TrainingConfig(batch_size=32, epochs=epochs, sigma=1.0, lwe_preset=preset)
    dataset = load_dataset("synthetic", num_examples=1024, num_features=31)
    source = create_source("logreg", dataset)
    result = train(cfg, source)
    for _, row in result.metrics.iterrows():
        print(f"  Epoch {int(row['epoch'])}: accuracy={row['accuracy']:.3f} "
              f"eps={row['eps_continuous']:.4f}")
    if result.aborts:
        print(f"⚠ {result.aborts} batches aborted")

    print("\n" + "=" * 80)
    print("  ✓ DEMO COMPLETE")
    print("=" * 80 + "\n")
    return config.EXIT_OK


def main():
    """Main entry point with argument parsing."""
    parser = argparse.ArgumentParser(
        description='FLDP secure aggregation demo',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python3 demo.py
  python3 demo.py --preset c --clients 64 --dropout 0.29
        """
    )
    parser.add_argument('--preset', choices=sorted(config.LWE_PRESETS), default='a',
                        help='LWE parameter set (default: a)')
    parser.add_argument('--clients', type=int, default=16, help='number of clients (default: 16)')
    parser.add_argument('--dim', type=int, default=2048, help='vector length (default: 2048)')
    parser.add_argument('--dropout', type=float, default=0.25,
                        help='fraction of clients dropping out (default: 0.25)')
    parser.add_argument('--epochs', type=int, default=2, help='training epochs (default: 2)')
    args = parser.parse_args()

    return run_demo(args.preset, args.clients, args.dim, args.dropout, args.epochs)


if __name__ == "__main__":
    sys.exit(main())
