"""Experiment grids, aggregation, and file formats.

This module turns a grid description (coherence modes x condition numbers
x sample sizes x oracles x averaging variants x seeds) into independent
solver runs, executes them serially or across a process pool, and
aggregates iteration counts into median/IQR rows.  It also owns the
on-disk formats: dataset CSV and binary files, per-iteration trace CSV,
and the benchmark result table.

Seeding: every run's seed is derived from the base seed plus a hash of
the cell coordinates (coherence, kappa power, s multiple, oracle, variant,
seed slot), so editing a grid never reshuffles the seeds of cells that
stay, and any cell can be reproduced in isolation from its recorded seed.
The run seed drives only the solver's oracle stream; all runs of a setup
share one dataset whose seed hashes just (coherence, kappa power), and the
deterministic BFGS baseline runs once per dataset.

Aggregation conventions: runs that fail to converge within max_iter count
as infinity and render as "dnf"; medians and quartiles use the inverted-CDF
(lower) convention so results are platform-stable integers.
"""

import hashlib
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .averaging import LastOnly, LogPower, Uniform
from .datagen import DataGenConfig, generate
from .oracles import CountSketch, Exact, GaussianSketch, LessUniform, Subsample
from .problem import Dataset, RegularizedLogistic, solve_reference
from .solver import SolverConfig, bfgs_run, run

CSV_VERSION = "# hessavg-csv v1"
BIN_MAGIC = b"HAVG1"
DNF = "dnf"
TRACE_COLUMNS = ("t", "f", "grad_norm", "hstar_error", "stepsize",
                 "skipped", "backtracks")

VARIANTS = ("noavg", "unifavg", "weightavg")
ORACLES = ("exact", "subsample", "gauss", "countsketch", "less")


# The weighted variant grows w(t) as (t+1)^{log10(t+1)}.  The natural-base
# sequence puts roughly 2 ln(t) / t of the weight on the newest estimate,
# which at benchmark scale (tolerance 1e-6 is reached near t = 25) leaves
# too little averaging to damp the per-draw noise of the sketching oracles;
# the base-10 exponent keeps the same eventual growth class while widening
# the window enough for those cells to finish contracting.
WEIGHTAVG_WEIGHTS = LogPower(scale=1.0 / math.log(10.0))


def weights_for_variant(name: str):
    if name == "noavg":
        return LastOnly()
    if name == "unifavg":
        return Uniform()
    if name == "weightavg":
        return WEIGHTAVG_WEIGHTS
    raise ValueError("unknown variant %r" % (name,))


def oracle_for_name(name: str, s: int):
    if name == "exact":
        return Exact()
    if s < 1:
        raise ValueError("oracle %r needs a sample/sketch size s >= 1" % name)
    if name == "subsample":
        return Subsample(s)
    if name == "gauss":
        return GaussianSketch(s)
    if name == "countsketch":
        return CountSketch(s)
    if name == "less":
        return LessUniform(s)
    raise ValueError("unknown oracle %r" % (name,))


@dataclass
class ExperimentGrid:
    """Grid description; kappa_list holds powers of d, s_list multiples of d."""

    coherence_modes: list = field(default_factory=lambda: ["low"])
    kappa_list: list = field(default_factory=lambda: [1.0])
    s_list: list = field(default_factory=lambda: [1.0])
    oracle_kinds: list = field(default_factory=lambda: ["subsample"])
    variants: list = field(default_factory=lambda: list(VARIANTS))
    num_seeds: int = 50
    base_seed: int = 0
    tol: float = 1e-6
    max_iter: int = 999
    n: int = 1000
    d: int = 100
    reg_nu: float = 1e-3
    include_bfgs: bool = False
    beta: float = 1e-4
    rho: float = 0.5

    def __post_init__(self):
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")
        for mode in self.coherence_modes:
            if mode not in ("low", "high"):
                raise ValueError("unknown coherence mode %r" % (mode,))
        for name in self.oracle_kinds:
            if name not in ORACLES:
                raise ValueError("unknown oracle %r" % (name,))
        for name in self.variants:
            if name not in VARIANTS:
                raise ValueError("unknown variant %r" % (name,))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentGrid":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError("unknown grid fields: %s" % ", ".join(sorted(unknown)))
        return cls(**data)


@dataclass
class RunSpec:
    """One independent run; all fields are plain values (pool-friendly)."""

    coherence: str
    kappa_power: float
    s_mult: float
    oracle: str
    variant: str
    slot: int
    seed: int
    dataset_seed: int
    n: int
    d: int
    reg_nu: float
    tol: float
    max_iter: int
    beta: float
    rho: float
    keep_trace: bool = False


def stable_seed(base_seed: int, *parts) -> int:
    """Seed from identifying parts, independent of grid layout.

    Hashing the identifiers (rather than enumerating grid positions) means
    inserting or reordering grid rows never changes the seed of a cell that
    stays.
    """
    words = ["%.12g" % p if isinstance(p, float) else str(p) for p in parts]
    digest = hashlib.sha256("|".join(words).encode("ascii")).digest()
    return int(base_seed) + int.from_bytes(digest[:6], "big")


def _setups(grid: ExperimentGrid):
    for coherence in grid.coherence_modes:
        for kappa_power in grid.kappa_list:
            for s_mult in grid.s_list:
                for oracle in grid.oracle_kinds:
                    yield coherence, float(kappa_power), float(s_mult), oracle


def expand_grid(grid: ExperimentGrid, keep_trace: bool = False) -> list:
    """All run specs in deterministic order (solver cells, then BFGS).

    The deterministic BFGS baseline gets a single spec per dataset; the
    stochastic variants get one per seed slot.
    """
    specs = []

    def add(coherence, kappa_power, s_mult, oracle, variant, slot):
        specs.append(RunSpec(
            coherence=coherence, kappa_power=kappa_power, s_mult=s_mult,
            oracle=oracle, variant=variant, slot=slot,
            seed=stable_seed(grid.base_seed, coherence, kappa_power, s_mult,
                             oracle, variant, slot),
            dataset_seed=stable_seed(grid.base_seed, "dataset", coherence,
                                     kappa_power),
            n=grid.n, d=grid.d, reg_nu=grid.reg_nu, tol=grid.tol,
            max_iter=grid.max_iter, beta=grid.beta, rho=grid.rho,
            keep_trace=keep_trace))

    for coherence, kappa_power, s_mult, oracle in _setups(grid):
        for variant in grid.variants:
            for slot in range(grid.num_seeds):
                add(coherence, kappa_power, s_mult, oracle, variant, slot)
    if grid.include_bfgs:
        for coherence in grid.coherence_modes:
            for kappa_power in grid.kappa_list:
                add(coherence, float(kappa_power), 0.0, "none", "bfgs", 0)
    return specs


@lru_cache(maxsize=32)
def _shared_problem(n, d, coherence, kappa_a, reg_nu, seed):
    """Dataset, objective, and reference solution shared by a setup's runs.

    Cached per process so a worker pays the reference solve once per setup
    it touches; everything returned is treated as immutable downstream.
    """
    cfg = DataGenConfig(n=n, d=d, coherence_mode=coherence, kappa_A=kappa_a,
                        reg_nu=reg_nu, seed=seed)
    ds, _ = generate(cfg)
    obj = RegularizedLogistic(ds, reg_nu)
    ref = solve_reference(obj, np.zeros(d))
    return obj, ref


def execute_run(spec: RunSpec) -> dict:
    """Solve one run against its setup's shared dataset and report the count.

    Failures are captured in the record's "error" field so a grid keeps
    going when one cell breaks.
    """
    out = asdict(spec)
    del out["keep_trace"]
    out["kappa_a"] = float(spec.d) ** spec.kappa_power
    out["s"] = max(1, round(spec.s_mult * spec.d)) if spec.oracle != "none" else 0
    out.update(iterations=None, converged=False, error=None)
    try:
        obj, ref = _shared_problem(spec.n, spec.d, spec.coherence,
                                   out["kappa_a"], spec.reg_nu,
                                   spec.dataset_seed)
        x0 = np.zeros(spec.d)
        if spec.variant == "bfgs":
            result = bfgs_run(obj, x0, spec.beta, spec.rho, spec.max_iter,
                              spec.tol, ref)
        else:
            solver_cfg = SolverConfig(
                beta=spec.beta, rho_backtrack=spec.rho,
                max_iter=spec.max_iter, tol_hstar=spec.tol,
                oracle=oracle_for_name(spec.oracle, out["s"]),
                weights=weights_for_variant(spec.variant), seed=spec.seed)
            result = run(obj, x0, solver_cfg, ref)
        out["iterations"] = result.iterations_to_tol
        out["converged"] = result.converged
        if spec.keep_trace:
            out["hstar_trace"] = [r.hstar_error for r in result.records]
    except Exception as exc:
        out["error"] = "%s: %s" % (type(exc).__name__, exc)
    return out


def run_grid(grid: ExperimentGrid, jobs: int = 1,
             keep_trace: bool = False) -> dict:
    """Execute every run and aggregate; identical output for any jobs value."""
    specs = expand_grid(grid, keep_trace=keep_trace)
    if jobs <= 1:
        runs = [execute_run(spec) for spec in specs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(execute_run, specs, chunksize=1))
    return {"rows": aggregate_rows(grid, runs), "runs": runs}


def _cell_quantiles(values):
    """(median, iqr) strings/ints from iteration counts with None as dnf."""
    arr = np.array([np.inf if v is None else float(v) for v in values])
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75], method="inverted_cdf")
    med_out = int(med) if np.isfinite(med) else DNF
    iqr_out = int(q3 - q1) if np.isfinite(q3 - q1) else DNF
    return med_out, iqr_out


def aggregate_rows(grid: ExperimentGrid, runs: list) -> list:
    """One row per setup with per-variant medians and IQRs."""
    by_cell = {}
    for rec in runs:
        key = (rec["coherence"], rec["kappa_power"], rec["s_mult"],
               rec["oracle"], rec["variant"])
        cell = by_cell.setdefault(key, {})
        cell[rec["slot"]] = None if rec["error"] else rec["iterations"]
    rows = []
    for coherence, kappa_power, s_mult, oracle in _setups(grid):
        row = {
            "coherence": coherence,
            "kappa_a": float(grid.d) ** kappa_power,
            "s": max(1, round(s_mult * grid.d)),
            "oracle": oracle,
        }
        for variant in grid.variants:
            cell = by_cell[(coherence, kappa_power, s_mult, oracle, variant)]
            med, iqr = _cell_quantiles(
                [cell.get(slot) for slot in range(grid.num_seeds)])
            row["%s_median" % variant] = med
            row["%s_iqr" % variant] = iqr
        if grid.include_bfgs:
            cell = by_cell[(coherence, kappa_power, 0.0, "none", "bfgs")]
            med, iqr = _cell_quantiles([cell.get(0)])
            row["bfgs_median"] = med
            row["bfgs_iqr"] = iqr
        rows.append(row)
    return rows


def rows_to_csv(grid: ExperimentGrid, rows: list) -> str:
    """Render aggregated rows as the versioned benchmark CSV."""
    columns = ["coherence", "kappa_a", "s", "oracle"]
    for variant in grid.variants:
        columns += ["%s_median" % variant, "%s_iqr" % variant]
    if grid.include_bfgs:
        columns += ["bfgs_median", "bfgs_iqr"]
    lines = [CSV_VERSION, ",".join(columns)]
    for row in rows:
        parts = []
        for col in columns:
            value = row[col]
            parts.append("%g" % value if isinstance(value, float) else str(value))
        lines.append(",".join(parts))
    return "\n".join(lines) + "\n"


def save_dataset_csv(path, ds: Dataset) -> None:
    """Dataset CSV: version comment, "n,d", n feature rows, one label row."""
    lines = [CSV_VERSION, "%d,%d" % (ds.n, ds.d)]
    for i in range(ds.n):
        lines.append(",".join("%.17g" % v for v in ds.A[i]))
    lines.append(",".join("%d" % v for v in ds.b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset_csv(path) -> Dataset:
    with open(path) as fh:
        rows = [line.strip() for line in fh
                if line.strip() and not line.startswith("#")]
    if not rows:
        raise ValueError("%s: empty dataset file" % path)
    n, d = (int(v) for v in rows[0].split(","))
    if len(rows) != n + 2:
        raise ValueError("%s: expected %d rows, found %d"
                         % (path, n + 2, len(rows)))
    A = np.array([[float(v) for v in rows[1 + i].split(",")]
                  for i in range(n)])
    b = np.array([int(float(v)) for v in rows[n + 1].split(",")],
                 dtype=np.int64)
    return Dataset(A=A, b=b)


def save_dataset_binary(path, ds: Dataset) -> None:
    """Dataset binary: magic HAVG1, uint64 n and d, then row-major f64 A, f64 labels (all little-endian)."""
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack("<QQ", ds.n, ds.d))
        fh.write(np.ascontiguousarray(ds.A, dtype="<f8").tobytes())
        fh.write(ds.b.astype("<f8").tobytes())


def load_dataset_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(BIN_MAGIC)] != BIN_MAGIC:
        raise ValueError("%s: not a dataset binary (bad magic)" % path)
    n, d = struct.unpack_from("<QQ", blob, len(BIN_MAGIC))
    offset = len(BIN_MAGIC) + 16
    expected = offset + 8 * n * d + 8 * n
    if len(blob) != expected:
        raise ValueError("%s: truncated dataset binary" % path)
    A = np.frombuffer(blob, dtype="<f8", count=n * d,
                      offset=offset).reshape(n, d).copy()
    b = np.frombuffer(blob, dtype="<f8", count=n,
                      offset=offset + 8 * n * d).astype(np.int64)
    return Dataset(A=A, b=b)


def load_dataset(path) -> Dataset:
    """Load either dataset format, sniffing the binary magic."""
    with open(path, "rb") as fh:
        head = fh.read(len(BIN_MAGIC))
    if head == BIN_MAGIC:
        return load_dataset_binary(path)
    return load_dataset_csv(path)


def save_trace_csv(path, records) -> None:
    """Per-iteration trace CSV with the versioned header."""
    lines = [CSV_VERSION, ",".join(TRACE_COLUMNS)]
    for r in records:
        lines.append("%d,%.17g,%.17g,%.17g,%.17g,%d,%d" % (
            r.t, r.f_value, r.grad_norm, r.hstar_error, r.stepsize,
            int(r.skipped), r.backtracks))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trace_csv(path) -> dict:
    """Trace CSV back as {column: array}."""
    with open(path) as fh:
        rows = [line.strip() for line in fh
                if line.strip() and not line.startswith("#")]
    if not rows:
        raise ValueError("%s: empty trace file" % path)
    header = rows[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in rows[1:]])
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise ValueError("%s: ragged trace file" % path)
    return {name: data[:, j] for j, name in enumerate(header)}


def ratio_series(errors: np.ndarray):
    """(index, ratio) arrays of consecutive error ratios e_{t+1}/e_t.

    Same omission rule as the solver diagnostics: pairs touching an exact
    zero are dropped.
    """
    errors = np.asarray(errors, dtype=float)
    prev, nxt = errors[:-1], errors[1:]
    mask = (prev > 0.0) & (nxt > 0.0)
    idx = np.nonzero(mask)[0]
    return idx, nxt[mask] / prev[mask]
