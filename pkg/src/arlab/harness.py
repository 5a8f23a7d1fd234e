"""Seeded experiment runner.

A run is one (scenario, seed index) pair. Its random streams come from
``SeedSequence([global_seed, crc32(scenario_id), seed_index])``; the first
spawned child builds the instance and the second drives the learner.
Configs sharing ``scenario_id`` therefore see the same instances and the
same learner noise, which matched comparisons rely on.

Output layout under ``out_dir``::

    config.json            validated config snapshot
    summary.json           per-seed rows, aggregates and a digest of all tables
    seed_<k>/episodes.csv  one row per episode
    seed_<k>/epochs.csv    one row per epoch
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .arl_gen import lock_in_summary, run_arl_gen, schedule
from .arl_lin import VARIANTS, run_arl_lin_dim, run_arl_lin_norm, support_lock_in
from .families import GenerationError
from .linear import InfeasibleProfileError
from .mdp import RunLedger
from .scenarios import C_BETA, general_scenario, sparse_linear_scenario
from .ucrl_vtr import UcrlVtr

SCHEMA_VERSION = 1
KINDS = ("general", "linear-dim", "linear-norm", "baseline-oracle", "baseline-largest")
ORACLE_FAMILIES = ("realizable", "true")

EPISODE_COLUMNS = (
    "episode", "epoch", "phase", "selected_class", "active_coords", "b_estimate",
    "instant_regret", "cum_regret", "beta", "lambda_min",
)

_GENERAL_KEYS = {"M", "m_star", "sizes", "target_delta", "tv_radius", "horizon", "tilt", "concentration"}
_LINEAR_KEYS = {
    "n_states", "n_actions", "horizon", "d", "d_star", "profile", "weights", "spread",
    "heterogeneity", "signed_inactive", "mix_concentration", "scale", "norm_slack",
}


class ConfigError(ValueError):
    """Invalid experiment config; ``errors`` lists ``field: message`` entries."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


class SeedMismatchError(ValueError):
    """Summaries being compared were not run on matched seeds and budgets."""


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``seeds`` are seed indices fed to the splitting rule, not raw RNG seeds.
    ``b`` is the norm bound for ``linear-dim`` and the initial estimate for
    ``linear-norm``; when None they default to the true norm and
    ``b_init_factor`` times the true norm respectively. ``general`` and
    ``linear`` override the instance generators' keyword arguments.
    """

    scenario: str
    episodes: int
    seeds: list = field(default_factory=lambda: [0])
    scenario_id: str | None = None
    global_seed: int = 0
    delta: float = 0.1
    out_dir: str | None = None
    general: dict = field(default_factory=dict)
    linear: dict = field(default_factory=dict)
    k0: int = 16
    k1: int = 64
    b: float | None = None
    b_init_factor: float = 10.0
    c_beta: float = C_BETA
    schedule_variant: str = "literal"
    oracle_family: str = "realizable"
    store_curves: bool = True
    workers: int = 1
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.scenario_id is None:
            self.scenario_id = "general" if self.scenario in ("general", "baseline-oracle", "baseline-largest") \
                else "linear-sparse"
        self.seeds = [int(s) if isinstance(s, (int, np.integer)) else s for s in self.seeds]
        self.validate()

    def validate(self) -> None:
        err = []
        if self.schema_version != SCHEMA_VERSION:
            err.append(f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version!r}")
        if self.scenario not in KINDS:
            err.append(f"scenario: must be one of {', '.join(KINDS)}, got {self.scenario!r}")
        if not isinstance(self.episodes, int) or isinstance(self.episodes, bool) or self.episodes < 1:
            err.append("episodes: must be a positive integer")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            err.append("seeds: must be a nonempty list of nonnegative integers")
        elif len(set(self.seeds)) != len(self.seeds):
            err.append("seeds: must be distinct")
        if not isinstance(self.global_seed, int) or self.global_seed < 0:
            err.append("global_seed: must be a nonnegative integer")
        if not (isinstance(self.delta, (int, float)) and 0 < self.delta < 1):
            err.append("delta: must lie in (0, 1)")
        if not isinstance(self.k0, int) or self.k0 < 1:
            err.append("k0: must be a positive integer")
        if not isinstance(self.k1, int) or self.k1 < 1:
            err.append("k1: must be a positive integer")
        if self.b is not None and not (isinstance(self.b, (int, float)) and self.b > 0):
            err.append("b: must be positive or null")
        if not self.b_init_factor >= 1:
            err.append("b_init_factor: must be >= 1")
        if not self.c_beta > 0:
            err.append("c_beta: must be positive")
        if self.schedule_variant not in VARIANTS:
            err.append(f"schedule_variant: must be one of {', '.join(VARIANTS)}")
        if self.oracle_family not in ORACLE_FAMILIES:
            err.append(f"oracle_family: must be one of {', '.join(ORACLE_FAMILIES)}")
        if not isinstance(self.workers, int) or self.workers < 1:
            err.append("workers: must be a positive integer")
        for key in set(self.general) - _GENERAL_KEYS:
            err.append(f"general.{key}: unknown parameter")
        for key in set(self.linear) - _LINEAR_KEYS:
            err.append(f"linear.{key}: unknown parameter")
        if err:
            raise ConfigError(err)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError(["<root>: config must be a mapping"])
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        missing = [k for k in ("scenario", "episodes") if k not in doc]
        err = [f"{k}: unknown field" for k in unknown] + [f"{k}: required" for k in missing]
        if "schema_version" not in doc:
            err.append("schema_version: required")
        if err:
            raise ConfigError(err)
        try:
            return cls(**doc)
        except TypeError as exc:  # pragma: no cover - guarded by the key checks
            raise ConfigError([str(exc)]) from exc


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: not valid JSON ({exc})"]) from exc
    return ExperimentConfig.from_dict(doc)


def run_seed_sequence(global_seed: int, scenario_id: str, seed_index: int) -> np.random.SeedSequence:
    """Documented splitting rule: ``SeedSequence([global, crc32(id), index])``."""
    return np.random.SeedSequence([int(global_seed), zlib.crc32(scenario_id.encode()), int(seed_index)])


def run_streams(config: ExperimentConfig, seed_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    inst, learn = run_seed_sequence(config.global_seed, config.scenario_id, seed_index).spawn(2)
    return np.random.default_rng(inst), np.random.default_rng(learn)


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple, np.ndarray)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def episode_rows(ledger: RunLedger) -> list[list[str]]:
    return [[_fmt(getattr(e, c)) for c in EPISODE_COLUMNS] for e in ledger.episodes]


def epoch_rows(epochs: list[dict]) -> tuple[list[str], list[list[str]]]:
    cols: list[str] = []
    for row in epochs:
        for k in row:
            if k not in cols:
                cols.append(k)
    return cols, [[_fmt(row.get(c)) for c in cols] for row in epochs]


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _episode_start_of_epoch(ledger: RunLedger, epoch: int, phase: str | None = None) -> int:
    for e in ledger.episodes:
        if e.epoch == epoch and (phase is None or e.phase == phase):
            return e.episode
    return len(ledger.episodes) + 1


def _run_general(config, mdp, fams, rng):
    res = run_arl_gen(mdp, fams, config.episodes, config.delta, rng)
    info = lock_in_summary(res.selected, fams.realizable_index)
    start = 1
    if info["lock_in_epoch"] is not None:
        start = _episode_start_of_epoch(res.ledger, info["lock_in_epoch"])
    extra = {
        "lock_in_epoch": info["lock_in_epoch"],
        "locked": info["locked"],
        "deviations": info["deviations"],
        "selected": res.selected,
        "monotone": all(bool(np.all(np.diff(r.statistics) <= 0)) for r in res.selections if r.epoch > 1),
        "tail_start": start,
        "separation": float(fams.separation),
    }
    return res.ledger, extra


def _run_baseline(config, mdp, fams, rng):
    if config.scenario == "baseline-largest":
        family, m = fams.family(fams.n_families), fams.n_families
        true_index = fams.true_index
    elif config.oracle_family == "true":
        family, m, true_index = fams.pool[[fams.true_index]], fams.realizable_index, 0
    else:
        family, m = fams.family(fams.realizable_index), fams.realizable_index
        true_index = fams.true_index
    ledger = RunLedger(mdp)
    learner = UcrlVtr(mdp, family, true_index=true_index)
    for sched, n in schedule(config.episodes, config.delta):
        learner.play(ledger, rng, n, sched.epoch_delta, epoch=sched.epoch, selected_class=m)
        ledger.epochs.append({"epoch": sched.epoch, "episodes": n, "delta": sched.epoch_delta, "selected": m})
    return ledger, {"tail_start": 1}


def _run_linear_dim(config, lmdp, rng):
    res = run_arl_lin_dim(lmdp, config.k0, config.delta, config.b, config.episodes, rng,
                          variant=config.schedule_variant, c_beta=config.c_beta)
    info = support_lock_in(res.supports, lmdp.support)
    start = 1
    if info["first_recovery"] is not None:
        start = _episode_start_of_epoch(res.ledger, info["first_recovery"], "regret")
    extra = {
        "support_recovered": info["recovered"],
        "first_recovery": info["first_recovery"],
        "deviations": info["deviations"],
        "supports": [[int(x) for x in D] for D in res.supports],
        "sup_errors": [float(x) for x in res.sup_errors],
        "complete_epochs": res.complete_epochs,
        "tail_start": start,
    }
    return res.ledger, extra


def _run_linear_norm(config, lmdp, rng):
    b_init = config.b if config.b is not None else config.b_init_factor * lmdp.theta_norm
    res = run_arl_lin_norm(lmdp, config.k1, config.delta, b_init, config.episodes, rng, c_beta=config.c_beta)
    extra = {
        "b_sequence": [float(x) for x in res.b_sequence],
        "theta_norm": lmdp.theta_norm,
        "norm_covered": [bool(c) for c in res.covered],
        "complete_epochs": res.complete_epochs,
        "tail_start": 1,
    }
    return res.ledger, extra


def run_single(config: ExperimentConfig, seed_index: int) -> dict:
    """Run one seed; returns its tables and summary row (nothing is written)."""
    inst_rng, rng = run_streams(config, seed_index)
    if config.scenario in ("general", "baseline-oracle", "baseline-largest"):
        mdp, fams = general_scenario(rng=inst_rng, **config.general)
        if config.scenario == "general":
            ledger, extra = _run_general(config, mdp, fams, rng)
        else:
            ledger, extra = _run_baseline(config, mdp, fams, rng)
    else:
        lmdp = sparse_linear_scenario(rng=inst_rng, **config.linear)
        if config.scenario == "linear-dim":
            ledger, extra = _run_linear_dim(config, lmdp, rng)
        else:
            ledger, extra = _run_linear_norm(config, lmdp, rng)

    covered = [e.covered for e in ledger.episodes if e.covered is not None]
    curve = ledger.regret_curve()
    row = {
        "seed_index": seed_index,
        "final_regret": float(curve[-1]) if curve.size else 0.0,
        "episodes": len(ledger),
        "coverage_checked": len(covered),
        "coverage_held": bool(all(covered)) if covered else None,
        "regret_slope": regret_slope(curve),
        "anomalies": list(ledger.anomalies),
        **extra,
    }
    if config.store_curves:
        row["regret_curve"] = [float(x) for x in curve]
    cols, erows = epoch_rows(ledger.epochs)
    return {
        "row": row,
        "episodes_csv": _csv_bytes(EPISODE_COLUMNS, episode_rows(ledger)),
        "epochs_csv": _csv_bytes(cols, erows),
    }


def regret_slope(curve) -> float:
    """Least-squares slope of log cumulative regret on log episode, second half.

    Only episodes with positive cumulative regret enter; a flat or empty tail
    has slope 0.
    """
    R = np.asarray(curve, dtype=np.float64)
    K = R.size
    if K < 4:
        return 0.0
    k = np.arange(1, K + 1, dtype=np.float64)
    half = slice(K // 2, K)
    x, y = k[half], R[half]
    keep = y > 0
    if keep.sum() < 2 or np.ptp(y[keep]) == 0:
        return 0.0
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def _median(xs):
    xs = [x for x in xs if x is not None]
    return float(np.median(xs)) if xs else None


def aggregate(kind: str, rows: list[dict]) -> dict:
    """Aggregates recomputable from the per-seed rows alone."""
    final = [r["final_regret"] for r in rows]
    out = {
        "n_seeds": len(rows),
        "median_final_regret": _median(final),
        "q10_final_regret": float(np.quantile(final, 0.1)) if final else None,
        "q90_final_regret": float(np.quantile(final, 0.9)) if final else None,
        "median_regret_slope": _median([r["regret_slope"] for r in rows]),
    }
    cov = [r["coverage_held"] for r in rows if r.get("coverage_held") is not None]
    out["coverage_rate"] = float(np.mean(cov)) if cov else None
    if kind == "general":
        out["lock_in_rate"] = float(np.mean([bool(r["locked"]) for r in rows])) if rows else None
        out["monotone_rate"] = float(np.mean([bool(r["monotone"]) for r in rows])) if rows else None
    if kind == "linear-dim":
        out["recovery_rate"] = float(np.mean([bool(r["support_recovered"]) for r in rows])) if rows else None
    if kind == "linear-norm" and rows:
        n = min(len(r["b_sequence"]) for r in rows)
        gaps = np.array([[abs(b - r["theta_norm"]) for b in r["b_sequence"][:n]] for r in rows])
        out["median_b_gap"] = [float(x) for x in np.median(gaps, axis=0)]
    return out


@dataclass
class RunSummary:
    config: dict
    per_seed: list
    aggregates: dict
    digest: str
    interrupted: bool = False

    @property
    def seeds(self) -> list[int]:
        return [r["seed_index"] for r in self.per_seed]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunSummary":
        return cls(doc["config"], doc["per_seed"], doc["aggregates"], doc["digest"],
                   bool(doc.get("interrupted", False)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunSummary":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def recomputed(self) -> dict:
        return aggregate(self.config["scenario"], self.per_seed)


def _write(out: Path | None, seed_index: int, result: dict) -> None:
    if out is None:
        return
    d = out / f"seed_{seed_index}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "episodes.csv").write_bytes(result["episodes_csv"])
    (d / "epochs.csv").write_bytes(result["epochs_csv"])


def _finish(config, out, results, digest, interrupted) -> RunSummary:
    rows = [r["row"] for r in results]
    summary = RunSummary(config.to_dict(), rows, aggregate(config.scenario, rows), digest.hexdigest(), interrupted)
    if out is not None:
        summary.save(out / "summary.json")
    return summary


def run_experiment(config: ExperimentConfig) -> RunSummary:
    """Execute every seed of ``config`` and persist tables and summary.

    Seeds run in index order (or in a process pool when ``workers > 1``);
    tables are written as each seed finishes, so an interruption leaves the
    completed seeds plus a summary flagged ``interrupted`` on disk.

    Raises
    ------
    GenerationError
        If an instance cannot be generated.
    """
    config.validate()
    out = Path(config.out_dir) if config.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n")
    digest = hashlib.sha256()
    results = []
    try:
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                it = pool.map(run_single, [config] * len(config.seeds), config.seeds)
                for seed_index, res in zip(config.seeds, it):
                    _write(out, seed_index, res)
                    digest.update(res["episodes_csv"])
                    digest.update(res["epochs_csv"])
                    results.append(res)
        else:
            for seed_index in config.seeds:
                res = run_single(config, seed_index)
                _write(out, seed_index, res)
                digest.update(res["episodes_csv"])
                digest.update(res["epochs_csv"])
                results.append(res)
    except KeyboardInterrupt:
        _finish(config, out, results, digest, True)
        raise
    return _finish(config, out, results, digest, False)


def compare_to_oracle(adaptive: RunSummary, oracle: RunSummary) -> dict:
    """Per-seed regret ratios over the adaptive run's post-lock-in window.

    The window starts at the first episode of the lock-in epoch (first
    recovery for support adaptation) and runs to the end; seeds that never
    lock in use the whole run. ``0/0`` counts as a ratio of 1. The additive
    gap is the difference of regrets accumulated before the window.

    Raises
    ------
    SeedMismatchError
        If the seeds or episode budgets differ, or curves were not stored.
    """
    if adaptive.seeds != oracle.seeds:
        raise SeedMismatchError(f"seed lists differ: {adaptive.seeds} vs {oracle.seeds}")
    if adaptive.config.get("episodes") != oracle.config.get("episodes"):
        raise SeedMismatchError("episode budgets differ")
    if adaptive.config.get("global_seed") != oracle.config.get("global_seed") or \
            adaptive.config.get("scenario_id") != oracle.config.get("scenario_id"):
        raise SeedMismatchError("global seed or scenario id differ, so seeds are not matched")
    per_seed = []
    for ra, ro in zip(adaptive.per_seed, oracle.per_seed):
        if "regret_curve" not in ra or "regret_curve" not in ro:
            raise SeedMismatchError("summaries must store regret curves")
        ca, co = np.asarray(ra["regret_curve"]), np.asarray(ro["regret_curve"])
        start = int(ra.get("tail_start", 1))
        before_a = float(ca[start - 2]) if start > 1 else 0.0
        before_o = float(co[start - 2]) if start > 1 else 0.0
        tail_a = float(ca[-1]) - before_a
        tail_o = float(co[-1]) - before_o
        per_seed.append({
            "seed_index": ra["seed_index"],
            "tail_start": start,
            "tail_adaptive": tail_a,
            "tail_oracle": tail_o,
            "ratio": tail_ratio(tail_a, tail_o),
            "pre_lock_in_gap": before_a - before_o,
        })
    ratios = [r["ratio"] for r in per_seed]
    return {
        "per_seed": per_seed,
        "median_ratio": float(np.median(ratios)),
        "median_pre_lock_in_gap": float(np.median([r["pre_lock_in_gap"] for r in per_seed])),
    }


def tail_ratio(adaptive: float, oracle: float, tol: float = 1e-12) -> float:
    if oracle <= tol:
        return 1.0 if adaptive <= tol else math.inf
    return adaptive / oracle


__all__ = [
    "ConfigError", "EPISODE_COLUMNS", "ExperimentConfig", "GenerationError", "InfeasibleProfileError",
    "KINDS", "RunSummary", "SeedMismatchError", "aggregate", "compare_to_oracle", "load_config",
    "regret_slope", "run_experiment", "run_seed_sequence", "run_single", "tail_ratio",
]
