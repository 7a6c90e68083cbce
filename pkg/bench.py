"""
Benchmark Sweeps and Report Shaping

Runs masking aggregation over a grid of client counts, vector sizes,
dropout rates, LWE presets and security modes, and records one
CommunicationReport row per repetition. Shape checks then regress the
measurements: client time and bytes against m, server reconstruction time
against k.

Absolute milliseconds depend on the machine; only the shapes are compared.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

import config
from errors import ParameterError, PlanValidationError, SchemaError
from field import get_field
from lwe import LweParams, PublicMatrix
from protocol import REPORT_COLUMNS, AdversarySpec, measure_transcript, run_masking_aggregation
from sampler import Prg
from shamir import SharingConfig, clear_caches

logger = logging.getLogger(__name__)

MODES = ("semi-honest", "malicious")
BENCH_COLUMNS = ["preset"] + REPORT_COLUMNS + ["rep"]
GROUP_KEYS = ["preset", "k", "m", "n", "q", "dropout", "mode", "topology"]
TIMING_COLUMNS = ["client_ms", "server_ms", "h_sum_ms", "sagg_reconstruct_ms", "unmask_ms"]


@dataclass(frozen=True)
class BenchPlan:
    """
    A sweep. Cells are the cross product of every axis, unless `paired` is
    set, in which case `clients` and `presets` are zipped (one k per preset).
    """

    clients: Tuple[int, ...] = (8, 32, 128)
    dims: Tuple[int, ...] = (1024, 16384)
    dropouts: Tuple[float, ...] = (0.0,)
    presets: Tuple[str, ...] = ("a",)
    modes: Tuple[str, ...] = ("semi-honest",)
    repetitions: int = 3
    dropout_round: int = 1
    topology: str = "server"
    packing: Optional[int] = None
    paired: bool = False
    seed: str = config.DEFAULT_SEED

    @classmethod
    def desk(cls, **overrides) -> "BenchPlan":
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides) -> "BenchPlan":
        """Largest client count per preset at m = 100,000, with and without 29% dropouts."""
        presets = tuple(sorted(config.LWE_PRESETS))
        clients = tuple(
            min(config.FULL_SCALE_CLIENTS, LweParams.preset(p, m=1).max_clients) for p in presets
        )
        base = dict(clients=clients, presets=presets, dims=(config.FULL_SCALE_DIM,),
                    dropouts=(0.0, 0.29), paired=True)
        base.update(overrides)
        return cls(**base)

    def pairs(self) -> List[Tuple[int, str]]:
        if self.paired:
            if len(self.clients) != len(self.presets):
                raise ParameterError("paired plan needs one client count per preset")
            return list(zip(self.clients, self.presets))
        return list(itertools.product(self.clients, self.presets))

    def cells(self) -> List[Dict]:
        return [
            {"k": k, "preset": preset, "m": m, "dropout": dropout, "mode": mode}
            for (k, preset), m, dropout, mode in itertools.product(
                self.pairs(), self.dims, self.dropouts, self.modes
            )
        ]

    def validate(self):
        if self.repetitions < 3:
            raise PlanValidationError("at least 3 repetitions are needed for medians",
                                      {"repetitions": self.repetitions})
        for cell in self.cells():
            if cell["preset"] not in config.LWE_PRESETS:
                raise PlanValidationError("unknown LWE preset", cell)
            if cell["mode"] not in MODES:
                raise PlanValidationError(f"mode must be one of {MODES}", cell)
            if cell["m"] < 1:
                raise PlanValidationError("vector size must be >= 1", cell)
            q = config.LWE_PRESETS[cell["preset"]][1]
            if cell["k"] * (1 << config.FIXED_POINT_BITS) >= q:
                raise PlanValidationError(
                    f"k * 2^{config.FIXED_POINT_BITS} does not fit below q={q}", cell
                )
            try:
                self.sharing_for(cell)
                AdversarySpec(dropout_fraction=cell["dropout"], dropout_round=self.dropout_round)
            except ParameterError as e:
                raise PlanValidationError(str(e), cell) from None

    def sharing_for(self, cell: Dict) -> SharingConfig:
        k = cell["k"]
        n, q = config.LWE_PRESETS[cell["preset"]]
        field = get_field(q)
        malicious = cell["mode"] == "malicious"
        dropped = AdversarySpec(dropout_fraction=cell["dropout"]).dropout_count(k)
        if self.packing is None:
            return SharingConfig.default(k, field, n=n, expected_dropouts=dropped, malicious=malicious)
        t = min(k // 2 + 1, k - 1)
        return SharingConfig(k=k, t=t, p=self.packing, field=field, malicious=malicious)


def run_cell(cell: Dict, plan: BenchPlan) -> List[Dict]:
    """All repetitions of one sweep cell, as CSV rows."""
    params = LweParams.preset(cell["preset"], m=cell["m"])
    field = params.field
    sharing = plan.sharing_for(cell)
    adversary = AdversarySpec(dropout_fraction=cell["dropout"], dropout_round=plan.dropout_round)
    prg = Prg(plan.seed).child(f"bench/{cell['preset']}/{cell['k']}/{cell['m']}/{cell['dropout']}/{cell['mode']}")
    # A is public and precomputable, so its expansion stays outside the timed rounds
    matrix = PublicMatrix(prg.derive("A"), params.m, params.n, field)
    matrix.matvec(np.zeros(params.n, dtype=np.int64))

    rows = []
    for rep in range(plan.repetitions):
        clear_caches()
        rng = prg.generator(f"inputs/{rep}")
        inputs = rng.integers(0, 1 << config.FIXED_POINT_BITS, size=(cell["k"], cell["m"]), dtype=np.int64)
        outcome = run_masking_aggregation(
            inputs, params, sharing, adversary, seed=prg.derive(f"round/{rep}"),
            topology=plan.topology, matrix=matrix,
        )
        row = measure_transcript(outcome).to_row()
        row.update(preset=cell["preset"], rep=rep)
        rows.append(row)
    logger.info("bench cell %s done", cell)
    return rows


def run_bench(plan: BenchPlan, workers: int = 0, progress=None) -> pd.DataFrame:
    """Every repetition of every cell; `progress(i, total, cell)` is called per finished cell."""
    plan.validate()
    cells = plan.cells()
    frames = []

    def one(item):
        i, cell = item
        rows = run_cell(cell, plan)
        if progress is not None:
            progress(i + 1, len(cells), cell)
        return rows

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, enumerate(cells)))
    else:
        results = [one(item) for item in enumerate(cells)]
    for rows in results:
        frames.extend(rows)
    return pd.DataFrame(frames, columns=BENCH_COLUMNS)


# ----------------------------------------------------------------------
# Summaries and shape regressions
# ----------------------------------------------------------------------


def summarize(raw: pd.DataFrame) -> pd.DataFrame:
    """
    Median per configuration with the report columns, plus p10/p90 of the
    timing columns and the number of runs.
    """
    grouped = raw.groupby(GROUP_KEYS, sort=True, dropna=False)
    numeric = [c for c in REPORT_COLUMNS if c not in GROUP_KEYS and c != "outcome"]
    medians = grouped[numeric].median()
    medians["outcome"] = grouped["outcome"].agg(lambda s: s.iloc[0] if s.nunique() == 1 else "mixed")
    for col in TIMING_COLUMNS:
        medians[f"{col}_p10"] = grouped[col].quantile(0.1)
        medians[f"{col}_p90"] = grouped[col].quantile(0.9)
    medians["runs"] = grouped.size()
    out = medians.reset_index()
    ordered = ["preset"] + REPORT_COLUMNS
    return out[ordered + [c for c in out.columns if c not in ordered]]


def expansion_curves(summary: pd.DataFrame) -> pd.DataFrame:
    """Tidy expansion-vs-m series, one per (preset, k, dropout, mode)."""
    keys = ["preset", "k", "dropout", "mode"]
    cols = keys + ["m", "expansion", "expansion_bitpacked", "client_bytes"]
    return summary[cols].sort_values(keys + ["m"]).reset_index(drop=True)


def linear_fit(x: Sequence[float], y: Sequence[float]) -> Dict[str, float]:
    fit = stats.linregress(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.rvalue ** 2}


def quadratic_vs_linear(x: Sequence[float], y: Sequence[float]) -> Dict[str, float]:
    """Nested-model F-test: does adding an x^2 term explain significantly more variance?"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 4:
        raise ParameterError("quadratic-vs-linear test needs at least 4 points")
    rss = []
    for degree in (1, 2):
        coeffs = np.polyfit(x, y, degree)
        rss.append(float(np.sum((np.polyval(coeffs, x) - y) ** 2)))
    dof = x.shape[0] - 3
    if rss[1] <= 0:
        return {"f": np.inf, "p_value": 0.0, "rss_linear": rss[0], "rss_quadratic": rss[1]}
    f_stat = (rss[0] - rss[1]) / (rss[1] / dof)
    return {"f": f_stat, "p_value": float(stats.f.sf(f_stat, 1, dof)),
            "rss_linear": rss[0], "rss_quadratic": rss[1]}


def shape_checks(raw: pd.DataFrame) -> pd.DataFrame:
    """Per-k fits of client time and bytes against m (needs >= 2 distinct m per k)."""
    rows = []
    for (preset, k, dropout, mode), group in raw.groupby(["preset", "k", "dropout", "mode"]):
        if group["m"].nunique() < 2:
            continue
        timing = linear_fit(group["m"], group["client_ms"])
        size = linear_fit(group["m"], group["client_bytes"])
        rows.append({
            "preset": preset, "k": k, "dropout": dropout, "mode": mode,
            "client_ms_slope": timing["slope"], "client_ms_r2": timing["r2"],
            "client_bytes_slope": size["slope"], "client_bytes_intercept": size["intercept"],
            "client_bytes_r2": size["r2"],
        })
    return pd.DataFrame(rows)


# ----------------------------------------------------------------------
# Report merging
# ----------------------------------------------------------------------


def load_reports(paths: Iterable) -> pd.DataFrame:
    """Concatenate sweep CSVs after checking every file has the bench schema."""
    frames = []
    expected = set(BENCH_COLUMNS)
    for path in paths:
        frame = pd.read_csv(path)
        have = set(frame.columns)
        # protocol-only reports (no preset/rep) are accepted too
        if have != expected and have != set(REPORT_COLUMNS):
            raise SchemaError(path, expected - have, have - expected)
        if "preset" not in frame.columns:
            frame.insert(0, "preset", "custom")
            frame["rep"] = 0
        frames.append(frame[BENCH_COLUMNS])
    if not frames:
        raise ParameterError("no report files given")
    return pd.concat(frames, ignore_index=True)


def params_table(presets: Iterable[str] = None, custom: Tuple[int, int, float] = None) -> pd.DataFrame:
    """n, q, beta*q, sigma_chi, two-adicity and client capacity per parameter set."""
    rows = []
    if custom is not None:
        n, q, beta_q = custom
        entries = [("custom", LweParams(n=n, q=q, m=1, beta_q=beta_q))]
    else:
        names = sorted(config.LWE_PRESETS) if presets is None else list(presets)
        entries = [(name, LweParams.preset(name, m=1)) for name in names]
    for name, params in entries:
        rows.append({
            "preset": name,
            "n": params.n,
            "q": params.q,
            "beta_q": params.beta_q,
            "sigma_chi": params.sigma_chi,
            "two_adicity": params.field.two_adicity,
            "max_clients": params.max_clients,
        })
    return pd.DataFrame(rows)


def write_frame(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path
