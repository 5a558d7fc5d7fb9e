"""Paired base-vs-augmented experiments and their statistics.

Each instance is solved once by the base oracle (exploration disabled) and once
per augmentation seed. Instances are scored by

    delta = h_base - median_s h_aug_s

and labelled win / tie / loss with tolerance 1e-12. Wins against losses are
tested with an exact one-sided McNemar (sign) test.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import ExplorationParams, Trajectory, run
from .diagnostics import DStatReport, certify
from .oracles import DcaConfig, DcaOracle, ProxLinearConfig, ProxLinearOracle
from .problems import generate_lts, generate_relu, generate_trimmed_lasso
from .samplers import DirectionSampler, StepSampler

log = logging.getLogger(__name__)

DELTA_TOL = 1e-12


class ConfigError(ValueError):
    pass


# --- statistics -----------------------------------------------------------------

def classify_delta(h_base: float, h_aug_median: float) -> tuple[float, str]:
    delta = float(h_base) - float(h_aug_median)
    if delta > DELTA_TOL:
        return delta, "win"
    if delta < -DELTA_TOL:
        return delta, "loss"
    return delta, "tie"


def mcnemar_exact_one_sided(wins: int, losses: int) -> float:
    """P(X >= wins) for X ~ Binomial(wins + losses, 1/2); 1 with no discordant pairs."""
    if wins < 0 or losses < 0:
        raise ValueError("counts must be nonnegative")
    n = wins + losses
    if n == 0 or wins == 0:
        return 1.0
    log_binom = lambda i: gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1) - n * math.log(2.0)
    if 2 * wins > n:
        return float(math.exp(logsumexp(log_binom(np.arange(wins, n + 1)))))
    # upper tail near 1: subtract the small lower tail instead
    return float(-math.expm1(logsumexp(log_binom(np.arange(0, wins)))))


def verify_rate_bound(traj: Trajectory, mu_total: float, h_star: float,
                      rtol: float = 1e-9) -> bool:
    """min_{k<N} ||x^k - z^{k+1}|| <= sqrt(2 (h(x^0) - h*) / (mu_total N)) for all N."""
    if not mu_total > 0:
        raise ValueError("mu_total must be positive")
    best = np.minimum.accumulate(np.asarray(traj.residual, dtype=float))
    N = np.arange(1, best.size + 1)
    bound = np.sqrt(2.0 * max(traj.h0 - h_star, 0.0) / (mu_total * N))
    return bool(np.all(best <= bound * (1.0 + rtol) + rtol))


def hash64(*parts) -> int:
    """Stable 64-bit seed from the string forms of ``parts`` (blake2b)."""
    msg = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


# --- configuration --------------------------------------------------------------

GENERATOR_DEFAULTS = {
    "trimmed_lasso": {"m": 50, "n": 100, "k": 5, "noise_std": 0.1, "lam": 1.0,
                      "design": "normalized"},
    "lts": {"m": 100, "n": 50, "q": 10, "outlier_std": 10.0, "clean_std": 4.0},
    "relu": {"m": 200, "n": 50, "q_param": 0.2, "rho_b": 2.0, "noise_std": 0.1,
             "corruption": "mirror", "design": "standard"},
}
FAMILY_ORACLE = {"trimmed_lasso": "dca", "lts": "dca", "relu": "prox_linear"}
ORACLE_KEYS = {
    "dca": {"inner_tol": float, "inner_max_iter": int},
    "prox_linear": {"rho_prox": float, "inner_tol": float, "inner_max_iter": int,
                    "inner_solver": str},
}


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    generator: dict = field(default_factory=dict)
    n_instances: int = 1
    aug_seeds: tuple = (0, 1, 2)
    N_outer: int = 1000
    sampler: DirectionSampler = DirectionSampler()
    oracle: dict = field(default_factory=dict)
    gamma: float = 1.0
    r: float = 1.0
    master_seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.family not in GENERATOR_DEFAULTS:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.n_instances < 1:
            raise ConfigError("n_instances must be >= 1")
        if len(self.aug_seeds) == 0:
            raise ConfigError("aug_seeds must be nonempty")
        if self.N_outer < 1:
            raise ConfigError("N_outer must be >= 1")
        unknown = set(self.generator) - set(GENERATOR_DEFAULTS[self.family])
        if unknown:
            raise ConfigError(f"unknown generator keys for {self.family}: {sorted(unknown)}")
        kind = self.oracle.get("oracle", FAMILY_ORACLE[self.family])
        if kind != FAMILY_ORACLE[self.family]:
            raise ConfigError(f"oracle {kind!r} does not apply to {self.family}")
        opts = {k: v for k, v in self.oracle.items() if k != "oracle"}
        try:
            ExplorationParams(self.gamma, self.r)
            (DcaConfig if kind == "dca" else ProxLinearConfig)(**opts)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    @property
    def generator_params(self) -> dict:
        return {**GENERATOR_DEFAULTS[self.family], **self.generator}

    @property
    def oracle_kind(self) -> str:
        return FAMILY_ORACLE[self.family]

    def exploration(self, enabled: bool = True) -> ExplorationParams:
        return ExplorationParams(self.gamma, self.r, enabled)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "generator": self.generator_params,
            "n_instances": self.n_instances,
            "aug_seeds": list(self.aug_seeds),
            "N_outer": self.N_outer,
            "sampler": self.sampler.to_config(),
            "oracle": {"oracle": self.oracle_kind,
                       **{k: v for k, v in self.oracle.items() if k != "oracle"}},
            "gamma": self.gamma,
            "r": self.r,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        """Build from string-valued key/value pairs (as read from a config file)."""
        raw = dict(raw)
        try:
            family = raw.pop("family")
        except KeyError:
            raise ConfigError("missing required key 'family'") from None
        if family not in GENERATOR_DEFAULTS:
            raise ConfigError(f"unknown family {family!r}")
        kw: dict = {"family": family}
        gen_defaults = GENERATOR_DEFAULTS[family]
        oracle_kind = raw.pop("oracle", FAMILY_ORACLE[family])
        oracle: dict = {"oracle": oracle_kind}
        generator: dict = {}
        sampler_cfg: dict = {}
        try:
            for key, val in raw.items():
                if key in gen_defaults:
                    generator[key] = type(gen_defaults[key])(val)
                elif key in ORACLE_KEYS.get(oracle_kind, {}):
                    oracle[key] = ORACLE_KEYS[oracle_kind][key](val)
                elif key in ("sampler", "mu"):
                    sampler_cfg[key] = val
                elif key in ("n_instances", "N_outer", "master_seed"):
                    kw[key] = int(val)
                elif key in ("gamma", "r"):
                    kw[key] = float(val)
                elif key == "aug_seeds":
                    kw[key] = _parse_seeds(val)
                elif key == "output_dir":
                    kw[key] = val
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            kw["sampler"] = DirectionSampler.from_config(sampler_cfg)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return cls(generator=generator, oracle=oracle, **kw)


def _parse_seeds(val: str) -> tuple:
    seeds = tuple(int(v) for v in val.split(",") if v.strip())
    if not seeds:
        raise ConfigError("aug_seeds must be nonempty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("aug_seeds must be distinct")
    return seeds


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return ExperimentConfig.from_mapping(parse_config_text(text))


# --- building blocks ------------------------------------------------------------

def make_instance(cfg: ExperimentConfig, seed: int):
    rng = np.random.default_rng(seed)
    p = cfg.generator_params
    if cfg.family == "trimmed_lasso":
        return generate_trimmed_lasso(p["m"], p["n"], p["k"], p["noise_std"], rng,
                                      lam=p["lam"], design=p["design"], seed=seed)
    if cfg.family == "lts":
        return generate_lts(p["m"], p["n"], p["q"], p["outlier_std"], rng,
                            clean_std=p["clean_std"], seed=seed)
    return generate_relu(p["m"], p["n"], p["q_param"], p["rho_b"], rng,
                         noise_std=p["noise_std"], corruption=p["corruption"],
                         design=p["design"], seed=seed)


def make_oracle(cfg: ExperimentConfig, inst):
    opts = {k: v for k, v in cfg.oracle.items() if k != "oracle"}
    if cfg.oracle_kind == "dca":
        return DcaOracle(inst, DcaConfig(**opts))
    return ProxLinearOracle(inst, ProxLinearConfig(**opts))


@dataclass
class PairedResult:
    instance_id: int
    h_base: float
    h_aug_per_seed: list
    h_aug_median: float
    delta: float
    label: str
    dstat_base: DStatReport | None
    dstat_aug: DStatReport | None
    aug_median_seed: int = 0
    aug_accepted: list = field(default_factory=list)
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.error is None


@dataclass
class SummaryTable:
    wins: int
    ties: int
    losses: int
    attempted: int
    completed: int
    mean_delta: float | None
    median_win_delta: float | None
    mcnemar_p: float
    non_dstat_base: int
    non_dstat_aug: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_results(cls, results: list) -> "SummaryTable":
        done = [r for r in results if r.completed]
        labels = [r.label for r in done]
        wins, losses = labels.count("win"), labels.count("loss")
        deltas = [r.delta for r in done]
        win_deltas = [r.delta for r in done if r.label == "win"]
        return cls(
            wins=wins, ties=labels.count("tie"), losses=losses,
            attempted=len(results), completed=len(done),
            mean_delta=float(np.mean(deltas)) if deltas else None,
            median_win_delta=float(np.median(win_deltas)) if win_deltas else None,
            mcnemar_p=mcnemar_exact_one_sided(wins, losses),
            non_dstat_base=sum(not r.dstat_base.passed for r in done),
            non_dstat_aug=sum(not r.dstat_aug.passed for r in done),
        )


def _median_seed_index(values) -> int:
    # the seed whose objective is the (lower) median; ties keep the earlier seed
    order = np.argsort(np.asarray(values), kind="stable")
    return int(order[(len(values) - 1) // 2])


def run_instance(cfg: ExperimentConfig, i: int, traj_dir: Path | None = None) -> PairedResult:
    inst_seed = hash64(cfg.master_seed, i)
    inst = make_instance(cfg, inst_seed)
    oracle = make_oracle(cfg, inst)
    steps = StepSampler(cfg.r)
    base = run(inst, oracle, cfg.sampler, steps, cfg.exploration(False), cfg.N_outer,
               hash64(inst_seed, "base", 0))
    aug = [run(inst, oracle, cfg.sampler, steps, cfg.exploration(True), cfg.N_outer,
               hash64(inst_seed, "aug", s)) for s in cfg.aug_seeds]
    if traj_dir is not None:
        base.to_csv(traj_dir / f"instance{i:04d}_base.csv")
        for j, t in enumerate(aug):
            t.to_csv(traj_dir / f"instance{i:04d}_aug_s{j}.csv")
    h_aug = [t.h_final for t in aug]
    h_med = float(np.median(h_aug))
    delta, label = classify_delta(base.h_final, h_med)
    j_med = _median_seed_index(h_aug)
    return PairedResult(
        instance_id=i, h_base=base.h_final, h_aug_per_seed=h_aug, h_aug_median=h_med,
        delta=delta, label=label,
        dstat_base=certify(inst, base.x_final, seed=inst_seed),
        dstat_aug=certify(inst, aug[j_med].x_final, seed=inst_seed),
        aug_median_seed=j_med,
        aug_accepted=[t.n_accepted for t in aug],
    )


def run_experiment(cfg: ExperimentConfig, save_trajectories: bool = False,
                   progress=None) -> tuple[SummaryTable, list]:
    """Run every instance of ``cfg``; write outputs when ``cfg.output_dir`` is set.

    A failing instance is logged and kept as an error row; it does not stop
    the sweep.
    """
    out = Path(cfg.output_dir) if cfg.output_dir else None
    traj_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if save_trajectories:
            traj_dir = out / "trajectories"
            traj_dir.mkdir(exist_ok=True)
    results = []
    for i in range(cfg.n_instances):
        try:
            res = run_instance(cfg, i, traj_dir)
        except Exception as e:  # noqa: BLE001 - one bad instance must not end the sweep
            log.error("instance %d failed: %s", i, e)
            res = PairedResult(i, math.nan, [math.nan] * len(cfg.aug_seeds), math.nan,
                               math.nan, "error", None, None, error=f"{type(e).__name__}: {e}")
        results.append(res)
        if progress is not None:
            progress(res)
    summary = SummaryTable.from_results(results)
    if out is not None:
        write_summary(out / "summary.json", cfg, summary)
        write_instances_csv(out / "instances.csv", results, len(cfg.aug_seeds))
    return summary, results


# --- output ---------------------------------------------------------------------

def write_summary(path, cfg: ExperimentConfig, summary: SummaryTable) -> None:
    doc = {
        "config": cfg.to_dict(),
        "summary": summary.to_dict(),
        "metadata": {
            "initial_point": "zero",
            "aug_certified_iterate": "final iterate of the median-objective seed",
            "delta_tolerance": DELTA_TOL,
            "seed_hash": "blake2b-64",
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def csv_columns(n_seeds: int) -> list:
    return (["instance_id", "h_base"] + [f"h_aug_s{j}" for j in range(n_seeds)]
            + ["delta", "label", "dstat_base_pass", "dstat_base_gap",
               "dstat_aug_pass", "dstat_aug_gap"])


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_instances_csv(path, results: list, n_seeds: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_columns(n_seeds))
        for r in results:
            cert = []
            for rep in (r.dstat_base, r.dstat_aug):
                cert += ["", ""] if rep is None else [int(rep.passed), _fmt(rep.gap)]
            w.writerow([r.instance_id, _fmt(r.h_base)] + [_fmt(h) for h in r.h_aug_per_seed]
                       + [_fmt(r.delta), r.label] + cert)


def read_instances_csv(path) -> list:
    """Rows of ``instances.csv`` as dicts with numeric fields parsed."""
    def num(s):
        return math.nan if s == "" else float(s)

    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            seeds = sorted((k for k in row if k.startswith("h_aug_s")), key=lambda k: int(k[7:]))
            rows.append({
                "instance_id": int(row["instance_id"]),
                "h_base": num(row["h_base"]),
                "h_aug_per_seed": [num(row[k]) for k in seeds],
                "delta": num(row["delta"]),
                "label": row["label"],
                "dstat_base_pass": row["dstat_base_pass"] == "1",
                "dstat_base_gap": num(row["dstat_base_gap"]),
                "dstat_aug_pass": row["dstat_aug_pass"] == "1",
                "dstat_aug_gap": num(row["dstat_aug_gap"]),
            })
    return rows
