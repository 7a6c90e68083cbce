#!/usr/bin/env python3
"""
FLDP SECURE AGGREGATION SIMULATOR - COMMAND LINE

Usage:
    python3 cli.py [--config run.env] [--seed HEX] <command> [options]

Commands:
    aggregate   one masking-aggregation round, optional CSV report
    bench       sweep client counts / vector sizes, write CSVs and shape fits
    params      LWE parameter table (client capacity, NTT two-adicity)
    accountant  epsilon for a DP configuration, both analyses
    train       FLDP training on a built-in model
    report      merge sweep CSVs into plot-ready medians and curves

Exit codes: 0 ok, 2 configuration error, 3 protocol abort, 4 I/O error.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import dotenv_values

import config
from accountant import DpConfig, curve, degraded_guarantee, epsilon_grid, to_eps_delta
from bench import (
    BenchPlan,
    expansion_curves,
    load_reports,
    params_table,
    quadratic_vs_linear,
    run_bench,
    shape_checks,
    summarize,
    write_frame,
)
from codec import CodecConfig, encode
from errors import ConfigError, FldpError, GradientFileError
from fedsim import TrainingConfig, create_source, ingest_gradients, load_dataset, train
from lwe import LweParams
from protocol import AdversarySpec, measure_transcript, run_masking_aggregation, write_reports
from sampler import Prg, parse_seed
from shamir import SharingConfig

logger = logging.getLogger(__name__)

SNAPSHOT_NAME = "resolved_config.env"


def _bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _strs(text: str) -> tuple:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _optional_int(text: str) -> Optional[int]:
    return None if str(text).strip() in ("", "none") else int(text)


# key -> (parser, default as text)
KNOWN_KEYS = {
    "seed": (str, config.DEFAULT_SEED),
    "output_dir": (str, str(config.OUTPUTS_DIR)),
    "protocol.clients": (int, "8"),
    "protocol.dim": (int, "1024"),
    "protocol.dropout": (float, "0"),
    "protocol.dropout_round": (int, "1"),
    "protocol.adversary": (str, ""),
    "protocol.mode": (str, "semi-honest"),
    "protocol.topology": (str, "server"),
    "protocol.check": (str, "all"),
    "protocol.workers": (int, "0"),
    "lwe.preset": (str, "a"),
    "lwe.beta_q": (float, str(config.DEFAULT_BETA_Q)),
    "lwe.chi_convention": (str, config.DEFAULT_CHI_CONVENTION),
    "lwe.zero_noise": (_bool, "false"),
    "sharing.t": (_optional_int, ""),
    "sharing.p": (_optional_int, ""),
    "sharing.layout": (str, "lagrange"),
    "codec.clip_C": (float, str(config.DEFAULT_CLIP_C)),
    "dp.sigma": (float, "1.0"),
    "dp.clip_C": (float, str(config.DEFAULT_CLIP_C)),
    "dp.batch": (int, "64"),
    "dp.epochs": (int, "1"),
    "dp.delta": (float, str(config.DEFAULT_DELTA)),
    "dp.dim": (int, "1"),
    "dp.honest_fraction": (float, "1.0"),
    "train.model": (str, "logreg"),
    "train.data": (str, "synthetic"),
    "train.sigma": (float, "1.0"),
    "train.batch": (int, "32"),
    "train.epochs": (int, "5"),
    "train.learning_rate": (float, str(config.DEFAULT_LEARNING_RATE)),
    "train.momentum": (float, str(config.DEFAULT_MOMENTUM)),
    "train.hidden": (int, "16"),
    "bench.clients": (_ints, "8,32,128"),
    "bench.dims": (_ints, "1024,16384"),
    "bench.dropouts": (_floats, "0"),
    "bench.presets": (_strs, "a"),
    "bench.modes": (_strs, "semi-honest"),
    "bench.repetitions": (int, "3"),
    "bench.packing": (_optional_int, ""),
    "bench.workers": (int, "0"),
}


@dataclass
class RunConfig:
    """
    Resolved key/value settings: defaults, then the config file, then flags.

    Files use dotenv syntax with dotted section keys, e.g.
        protocol.clients=32
        lwe.preset=c
    """

    values: Dict[str, str] = dataclass_field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides: Dict[str, object] = None) -> "RunConfig":
        values = {key: default for key, (_, default) in KNOWN_KEYS.items()}
        if path is not None:
            if not Path(path).exists():
                raise ConfigError(f"config file not found: {path}")
            from_file = dotenv_values(path)
            unknown = sorted(set(from_file) - set(KNOWN_KEYS))
            if unknown:
                raise ConfigError(f"unknown config keys in {path}: {unknown}")
            values.update({k: "" if v is None else v for k, v in from_file.items()})
        for key, value in (overrides or {}).items():
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                values[key] = ",".join(str(v) for v in value) if isinstance(value, (list, tuple)) else str(value)
        run = cls(values)
        for key in KNOWN_KEYS:
            run.get(key)
        parse_seed(run.get("seed"))
        return run

    def get(self, key: str):
        parser, _ = KNOWN_KEYS[key]
        try:
            return parser(self.values[key])
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {self.values[key]!r} ({e})") from None

    @property
    def seed(self) -> str:
        return self.get("seed")

    @property
    def output_dir(self) -> Path:
        return Path(self.get("output_dir"))

    def write_snapshot(self, directory: Path = None) -> Path:
        directory = config.ensure_outputs_dir(directory or self.output_dir)
        path = directory / SNAPSHOT_NAME
        lines = [f"{key}={self.values[key]}" for key in sorted(self.values)]
        path.write_text("\n".join(lines) + "\n")
        return path


def print_header(title: str):
    print("\n" + "=" * 80)
    print(f"  {title}")
    print("=" * 80)


def print_section(title: str):
    print(f"\n{'─' * 80}")
    print(f"  {title}")
    print('─' * 80)


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def _lwe_params(run: RunConfig, m: int) -> LweParams:
    return LweParams.preset(
        run.get("lwe.preset"), m=m, beta_q=run.get("lwe.beta_q"),
        chi_convention=run.get("lwe.chi_convention"), zero_noise=run.get("lwe.zero_noise"),
    )


def _adversary(run: RunConfig) -> AdversarySpec:
    spec = AdversarySpec.parse(run.get("protocol.adversary"))
    if run.get("protocol.dropout") > 0 or run.get("protocol.dropout_round") != 1:
        spec = AdversarySpec(
            dropout_fraction=run.get("protocol.dropout"),
            dropout_round=run.get("protocol.dropout_round"),
            corrupt_clients=spec.corrupt_clients,
            behavior=spec.behavior,
        )
    return spec


def _sharing(run: RunConfig, k: int, params: LweParams, adversary: AdversarySpec) -> Optional[SharingConfig]:
    t, p, layout = run.get("sharing.t"), run.get("sharing.p"), run.get("sharing.layout")
    malicious = run.get("protocol.mode") == "malicious"
    if t is None and p is None and layout == "lagrange":
        return None
    default = SharingConfig.default(k, params.field, n=params.n,
                                    expected_dropouts=adversary.dropout_count(k),
                                    malicious=malicious, layout=layout)
    return SharingConfig(k=k, t=t or default.t, p=p or default.p, field=params.field,
                         layout=layout, malicious=malicious)


def cmd_aggregate(run: RunConfig, args) -> int:
    k = run.get("protocol.clients")
    codec = CodecConfig(clip_C=run.get("codec.clip_C"))
    prg = Prg(run.seed)

    if args.gradients:
        source = ingest_gradients(args.gradients)
        if source.num_examples < k:
            raise ConfigError(f"{args.gradients} holds {source.num_examples} gradients, {k} clients requested")
        m = source.dimension
        params = _lwe_params(run, m)
        inputs = np.vstack([encode(source.example_gradient(None, i), codec, params.field).elements
                            for i in range(k)])
    else:
        m = run.get("protocol.dim")
        params = _lwe_params(run, m)
        inputs = prg.generator("aggregate/inputs").integers(0, 1 << codec.bits, size=(k, m), dtype=np.int64)

    adversary = _adversary(run)
    sharing = _sharing(run, k, params, adversary)
    mode = run.get("protocol.mode")

    print_header("MASKING AGGREGATION")
    print(f"  Clients: {k}   Vector size: {m}   LWE: n={params.n}, q={params.q}")
    print(f"  Mode: {mode}   Topology: {run.get('protocol.topology')}   Adversary: {adversary}")
    if params.zero_noise:
        print("  ⚠ zero-noise test hook is ON (LWE errors forced to 0)")

    outcome = run_masking_aggregation(
        inputs, params, sharing, adversary, seed=prg.derive("aggregate/round"),
        malicious=(mode == "malicious"), topology=run.get("protocol.topology"),
        workers=run.get("protocol.workers"), check=run.get("protocol.check"),
    )
    report = measure_transcript(outcome)

    print_section("Result")
    if outcome.aborted:
        print(f"❌ ABORT at {outcome.result.stage}: {outcome.result.reason}")
    else:
        survivors = sorted(outcome.participants)
        print(f"✓ Aggregated {len(survivors)} of {k} clients")
        if params.zero_noise:
            expected = params.field.sum(inputs[survivors])
            exact = np.array_equal(expected, outcome.result)
            print(f"  {'✓' if exact else '❌'} exact match with plaintext sum over U2")
    print(f"  Client bytes: {report.client_bytes:,.0f}   Expansion: {report.expansion:.3f} "
          f"(bit-packed {report.expansion_bitpacked:.3f})")
    print(f"  Client ms: {report.client_ms:.1f}   Server ms: {report.server_ms:.1f}")

    if args.report:
        path = write_reports([report], args.report)
        print(f"✓ Report saved: {path}")
    return config.EXIT_PROTOCOL_ABORT if outcome.aborted else config.EXIT_OK


def cmd_bench(run: RunConfig, args) -> int:
    overrides = dict(
        clients=run.get("bench.clients"),
        dims=run.get("bench.dims"),
        dropouts=run.get("bench.dropouts"),
        presets=run.get("bench.presets"),
        modes=run.get("bench.modes"),
        repetitions=run.get("bench.repetitions"),
        packing=run.get("bench.packing"),
        dropout_round=run.get("protocol.dropout_round"),
        topology=run.get("protocol.topology"),
        seed=run.seed,
    )
    if args.full_scale:
        for key in ("clients", "dims", "dropouts", "presets"):
            overrides.pop(key)
        plan = BenchPlan.full_scale(**overrides)
    else:
        plan = BenchPlan.desk(**overrides)
    plan.validate()

    print_header("BENCHMARK SWEEP")
    print(f"  Cells: {len(plan.cells())} x {plan.repetitions} repetitions")

    def progress(i, total, cell):
        print(f"  [{i}/{total}] k={cell['k']} m={cell['m']} dropout={cell['dropout']} "
              f"{cell['mode']} ({cell['preset']})")

    raw = run_bench(plan, workers=run.get("bench.workers"), progress=progress)
    summary = summarize(raw)
    shapes = shape_checks(raw)
    out = config.ensure_outputs_dir(run.output_dir)
    write_frame(raw, out / "bench_raw.csv")
    write_frame(summary, out / "bench_summary.csv")
    write_frame(shapes, out / "bench_shapes.csv")

    print_section("Shape checks")
    for _, row in shapes.iterrows():
        print(f"  k={row['k']:>5} {row['mode']:<12} client time vs m R²={row['client_ms_r2']:.3f}   "
              f"bytes/elem={row['client_bytes_slope']:.2f}")
    for (preset, m, dropout, mode), group in summary.groupby(["preset", "m", "dropout", "mode"]):
        if group["k"].nunique() >= 4:
            fit = quadratic_vs_linear(group["k"], group["sagg_reconstruct_ms"])
            print(f"  m={m} {mode} dropout={dropout}: quadratic-vs-linear in k p={fit['p_value']:.4g}")
    print(f"\n✓ CSVs saved to: {out}/")
    return config.EXIT_OK


def cmd_params(run: RunConfig, args) -> int:
    if args.q is not None:
        custom = (args.n or 1, args.q, args.beta_q or config.DEFAULT_BETA_Q)
        table = params_table(custom=custom)
    else:
        table = params_table([args.preset] if args.preset else None)
    print_header("LWE PARAMETERS")
    print(table.to_string(index=False))
    print("\nℹ Security levels are taken from an external lattice estimator; nothing here estimates them.")
    return config.EXIT_OK


def cmd_accountant(run: RunConfig, args) -> int:
    if args.grid:
        frame = epsilon_grid(epochs=run.get("dp.epochs"), delta=run.get("dp.delta"),
                            clip_C=run.get("dp.clip_C"), dimension=run.get("dp.dim"))
        print_header("EPSILON OVER THE EVALUATED (sigma, b) GRID")
        print(frame.to_string(index=False))
        if args.curves:
            write_frame(frame, args.curves)
        return config.EXIT_OK

    cfg = DpConfig(
        sigma=run.get("dp.sigma"), clip_C=run.get("dp.clip_C"), batch_size=run.get("dp.batch"),
        epochs=run.get("dp.epochs"), delta=run.get("dp.delta"), dimension=run.get("dp.dim"),
        honest_fraction=run.get("dp.honest_fraction"),
    )
    continuous = curve(cfg)
    eps, alpha = to_eps_delta(continuous, cfg.delta)
    print_header("PRIVACY ACCOUNTANT")
    print(f"  sigma={cfg.sigma} C={cfg.clip_C} b={cfg.batch_size} E={cfg.epochs} delta={cfg.delta}")
    print(f"  ✓ continuous: eps={eps:.6f} at alpha={alpha:g}")

    frame = continuous.to_frame().rename(columns={"eps_rdp": "eps_rdp_continuous"})
    if args.discrete:
        discrete = curve(cfg, discrete=True)
        eps_d, alpha_d = to_eps_delta(discrete, cfg.delta)
        print(f"  ✓ discrete:   eps={eps_d:.6f} at alpha={alpha_d:g}")
        frame["eps_rdp_discrete"] = discrete.values
    if cfg.honest_fraction < 1.0:
        degraded = degraded_guarantee(cfg)
        eps_g, alpha_g = to_eps_delta(degraded, cfg.delta)
        print(f"  ⚠ honest fraction {cfg.honest_fraction}: eps={eps_g:.6f} at alpha={alpha_g:g}")
        frame["eps_rdp_degraded"] = degraded.values

    if args.curves:
        write_frame(frame, args.curves)
        print(f"✓ Curves saved: {args.curves}")
    else:
        print()
        print(frame.to_csv(index=False), end="")
    return config.EXIT_OK


def cmd_train(run: RunConfig, args) -> int:
    cfg = TrainingConfig(
        batch_size=run.get("train.batch"), epochs=run.get("train.epochs"),
        learning_rate=run.get("train.learning_rate"), momentum=run.get("train.momentum"),
        clip_C=run.get("codec.clip_C"), sigma=run.get("train.sigma"), seed=run.seed,
        lwe_preset=run.get("lwe.preset"), beta_q=run.get("lwe.beta_q"),
        zero_noise=run.get("lwe.zero_noise"), malicious=run.get("protocol.mode") == "malicious",
        topology=run.get("protocol.topology"),
    )
    dataset = load_dataset(run.get("train.data"))
    source = create_source(run.get("train.model"), dataset, hidden=run.get("train.hidden"))
    metrics_path = args.metrics or config.ensure_outputs_dir(run.output_dir) / "train_metrics.csv"

    print_header("FLDP TRAINING")
    print(f"  Model: {source.name} (m={source.dimension})   Data: {dataset.name}")
    print(f"  sigma={cfg.sigma} b={cfg.batch_size} E={cfg.epochs} "
          f"{'plaintext' if args.plaintext else 'secure aggregation'}")

    result = train(cfg, source, adversary=_adversary(run), secure=not args.plaintext,
                   metrics_path=metrics_path, dump_gradients=args.dump_gradients)

    print_section("Metrics")
    print(result.metrics.to_string(index=False))
    if result.aborts:
        print(f"\n⚠ {result.aborts} batch(es) aborted and skipped")
    if result.clamp_count:
        print(f"⚠ {result.clamp_count} gradient entries clamped to the 16-bit range")
    print(f"\n✓ Metrics saved: {metrics_path}")
    if args.dump_gradients:
        print(f"✓ Gradients saved: {args.dump_gradients}")
    return config.EXIT_OK


def cmd_report(run: RunConfig, args) -> int:
    raw = load_reports(args.csv)
    summary = summarize(raw)
    curves = expansion_curves(summary)
    out = config.ensure_outputs_dir(Path(args.out) if args.out else run.output_dir)
    write_frame(summary, out / "report_medians.csv")
    write_frame(curves, out / "report_expansion.csv")
    print(f"✓ {len(raw)} rows from {len(args.csv)} file(s) -> {len(summary)} configurations")
    print(f"✓ Saved: {out / 'report_medians.csv'}, {out / 'report_expansion.csv'}")
    return config.EXIT_OK


# ----------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='FLDP secure aggregation simulator',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python3 cli.py params
  python3 cli.py aggregate --clients 16 --dim 4096 --dropout 0.25 --report outputs/agg.csv
  python3 cli.py accountant --sigma 1 --clip 5 --batch 64 --epochs 275 --discrete
  python3 cli.py train --model logreg --sigma 1 --batch 32 --epochs 5
        """
    )
    parser.add_argument('--config', help='dotenv-style run configuration file')
    parser.add_argument('--seed', help='master seed (hex)')
    parser.add_argument('--output-dir', help='directory for CSVs and the config snapshot')
    parser.add_argument('--log-level', default=config.LOG_LEVEL,
                        help=f'logging level (default: {config.LOG_LEVEL})')
    sub = parser.add_subparsers(dest='command', required=True)

    agg = sub.add_parser('aggregate', help='run one masking-aggregation round')
    agg.add_argument('--clients', type=int)
    agg.add_argument('--dim', type=int)
    agg.add_argument('--lwe-preset', choices=sorted(config.LWE_PRESETS))
    agg.add_argument('--dropout', type=float)
    agg.add_argument('--dropout-round', type=int, choices=[1, 2, 3])
    agg.add_argument('--adversary', help="e.g. 'corrupt=1;behavior=bad_share_sum'")
    agg.add_argument('--mode', choices=['semi-honest', 'malicious'])
    agg.add_argument('--topology', choices=['server', 'broadcast'])
    agg.add_argument('--workers', type=int)
    agg.add_argument('--zero-noise', action='store_true', default=None,
                     help='TEST HOOK: force LWE errors to zero')
    agg.add_argument('--gradients', help='aggregate records from a gradient file')
    agg.add_argument('--report', help='write a CommunicationReport CSV')

    bench = sub.add_parser('bench', help='benchmark sweep')
    bench.add_argument('--clients', help='comma-separated client counts')
    bench.add_argument('--dims', help='comma-separated vector sizes')
    bench.add_argument('--dropouts', help='comma-separated dropout fractions')
    bench.add_argument('--presets', help='comma-separated LWE presets')
    bench.add_argument('--modes', help='comma-separated modes')
    bench.add_argument('--reps', type=int)
    bench.add_argument('--packing', type=int, help='fix the packing width p')
    bench.add_argument('--workers', type=int)
    bench.add_argument('--paper-scale', '--full-scale', dest='full_scale', action='store_true',
                       help='largest client count per preset at m=100000')

    params = sub.add_parser('params', help='LWE parameter report')
    params.add_argument('--preset', choices=sorted(config.LWE_PRESETS))
    params.add_argument('--n', type=int)
    params.add_argument('--q', type=int)
    params.add_argument('--beta-q', type=float)

    acc = sub.add_parser('accountant', help='privacy accounting')
    acc.add_argument('--sigma', type=float)
    acc.add_argument('--clip', type=float)
    acc.add_argument('--batch', type=int)
    acc.add_argument('--epochs', type=int)
    acc.add_argument('--delta', type=float)
    acc.add_argument('--dim', type=int)
    acc.add_argument('--honest-fraction', type=float)
    acc.add_argument('--discrete', action='store_true')
    acc.add_argument('--grid', action='store_true', help='epsilon over the evaluated (sigma, b) grid')
    acc.add_argument('--curves', help='write curves CSV here instead of stdout')

    tr = sub.add_parser('train', help='FLDP training')
    tr.add_argument('--model', choices=['logreg', 'mlp'])
    tr.add_argument('--data', help="CSV path with a 'label' column, or 'synthetic'")
    tr.add_argument('--sigma', type=float)
    tr.add_argument('--batch', type=int)
    tr.add_argument('--epochs', type=int)
    tr.add_argument('--lr', type=float)
    tr.add_argument('--momentum', type=float)
    tr.add_argument('--lwe-preset', choices=sorted(config.LWE_PRESETS))
    tr.add_argument('--adversary')
    tr.add_argument('--mode', choices=['semi-honest', 'malicious'])
    tr.add_argument('--topology', choices=['server', 'broadcast'])
    tr.add_argument('--zero-noise', action='store_true', default=None)
    tr.add_argument('--plaintext', action='store_true', help='skip the cryptography')
    tr.add_argument('--metrics', help='metrics CSV path')
    tr.add_argument('--dump-gradients', help='write noisy clipped gradients to this file')

    rep = sub.add_parser('report', help='merge sweep CSVs')
    rep.add_argument('csv', nargs='+')
    rep.add_argument('--out', help='output directory')
    return parser


def overrides_from_args(args) -> Dict[str, object]:
    """Map parsed flags onto config keys; unset flags stay None and do not override."""
    get = lambda name: getattr(args, name, None)
    common = {"seed": get("seed"), "output_dir": get("output_dir")}
    per_command = {
        "aggregate": {
            "protocol.clients": get("clients"), "protocol.dim": get("dim"),
            "lwe.preset": get("lwe_preset"), "protocol.dropout": get("dropout"),
            "protocol.dropout_round": get("dropout_round"), "protocol.adversary": get("adversary"),
            "protocol.mode": get("mode"), "protocol.topology": get("topology"),
            "protocol.workers": get("workers"), "lwe.zero_noise": get("zero_noise"),
        },
        "bench": {
            "bench.clients": get("clients"), "bench.dims": get("dims"),
            "bench.dropouts": get("dropouts"), "bench.presets": get("presets"),
            "bench.modes": get("modes"), "bench.repetitions": get("reps"),
            "bench.packing": get("packing"), "bench.workers": get("workers"),
        },
        "accountant": {
            "dp.sigma": get("sigma"), "dp.clip_C": get("clip"), "dp.batch": get("batch"),
            "dp.epochs": get("epochs"), "dp.delta": get("delta"), "dp.dim": get("dim"),
            "dp.honest_fraction": get("honest_fraction"),
        },
        "train": {
            "train.model": get("model"), "train.data": get("data"), "train.sigma": get("sigma"),
            "train.batch": get("batch"), "train.epochs": get("epochs"),
            "train.learning_rate": get("lr"), "train.momentum": get("momentum"),
            "lwe.preset": get("lwe_preset"), "protocol.adversary": get("adversary"),
            "protocol.mode": get("mode"), "protocol.topology": get("topology"),
            "lwe.zero_noise": get("zero_noise"),
        },
    }
    out = dict(common)
    out.update(per_command.get(args.command, {}))
    return out


COMMANDS = {
    "aggregate": cmd_aggregate,
    "bench": cmd_bench,
    "params": cmd_params,
    "accountant": cmd_accountant,
    "train": cmd_train,
    "report": cmd_report,
}


def main(argv: List[str] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = RunConfig.load(args.config, overrides_from_args(args))
        run.write_snapshot()
        return COMMANDS[args.command](run, args)
    except (GradientFileError, OSError) as e:
        print(f"❌ I/O error: {e}", file=sys.stderr)
        return config.EXIT_IO_ERROR
    except FldpError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return config.EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
