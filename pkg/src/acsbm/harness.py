"""Monte-Carlo experiment driver: sweep n, fit replicates, score and summarise."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .linalg import solve_assignment
from .model import ModelSpec, SparsitySchedule, model_from_dict, model_to_dict
from .pipeline import fit
from .sampler import child_seed, sample_attributes, sample_network

log = logging.getLogger(__name__)

CSV_HEADER = ["n", "replicate", "seed", "edges", "misclassification", "fit_ms"]
TIMING_HEADER = ["n", "replicate", "sample_ms", "fit_ms", "error"]


class ConfigError(ValueError):
    pass


def misclassification(theta_hat, theta_true, K: int) -> float:
    """Fraction of nodes mislabelled under the best relabelling of ``theta_hat``."""
    theta_hat = np.asarray(theta_hat, dtype=np.int64)
    theta_true = np.asarray(theta_true, dtype=np.int64)
    if theta_hat.shape != theta_true.shape:
        raise ValueError(f"label vectors differ in length: {theta_hat.size} vs {theta_true.size}")
    n = theta_hat.size
    if n == 0:
        return 0.0
    for name, lab in (("theta_hat", theta_hat), ("theta_true", theta_true)):
        if lab.min() < 1 or lab.max() > K:
            raise ValueError(f"{name} labels must lie in 1..{K}")
    confusion = np.zeros((K, K))
    np.add.at(confusion, (theta_hat - 1, theta_true - 1), 1.0)
    agree = -solve_assignment(-confusion).cost
    return float((n - round(agree)) / n)


@dataclass
class ExperimentConfig:
    spec: ModelSpec
    sched: SparsitySchedule
    n_values: list[int]
    replicates: int = 20
    method: str = "gmm"
    d: int | None = None
    master_seed: int = 0
    out_dir: str | None = None
    record_timings: bool = False

    def __post_init__(self):
        self.n_values = [int(n) for n in self.n_values]
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ConfigError("n_values must be a nonempty list of positive integers")
        if any(a >= b for a, b in zip(self.n_values, self.n_values[1:])):
            raise ConfigError("n_values must be strictly ascending")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.method not in ("gmm", "kmeans"):
            raise ConfigError(f"unknown method {self.method!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            spec, sched = model_from_dict(doc["model"])
            return cls(spec=spec, sched=sched, n_values=doc["n_values"],
                       replicates=int(doc.get("replicates", 20)),
                       method=doc.get("method", "gmm"), d=doc.get("d"),
                       master_seed=int(doc.get("master_seed", 0)),
                       out_dir=doc.get("out_dir"),
                       record_timings=bool(doc.get("record_timings", False)))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    def to_dict(self) -> dict:
        return {"model": model_to_dict(self.spec, self.sched), "n_values": self.n_values,
                "replicates": self.replicates, "method": self.method, "d": self.d,
                "master_seed": self.master_seed, "out_dir": self.out_dir,
                "record_timings": self.record_timings}


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


@dataclass
class ReplicateRecord:
    n: int
    replicate: int
    seed: int
    misclassification: float | None
    edges: int
    fit_ms: float = 0.0
    sample_ms: float = 0.0
    stage_ms: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def replicate_seed(master_seed: int, n: int, replicate: int) -> int:
    return child_seed(master_seed, n, replicate)


def run_replicate(spec, sched, n, replicate, seed, method="gmm", d=None) -> ReplicateRecord:
    # one BLAS thread per replicate keeps results independent of the pool size
    with threadpool_limits(1):
        return _run_replicate(spec, sched, n, replicate, seed, method, d)


def _run_replicate(spec, sched, n, replicate, seed, method, d):
    edges = 0
    try:
        t0 = time.perf_counter()
        attrs = sample_attributes(spec, n, seed)
        net = sample_network(spec, attrs, sched, seed)
        edges = net.num_edges
        t1 = time.perf_counter()
        result = fit(net, spec.K, d=d, method=method, seed=seed, levels=spec.levels)
        t2 = time.perf_counter()
        rate = misclassification(result.theta_hat, attrs.theta, spec.K)
        return ReplicateRecord(n, replicate, seed, rate, edges, fit_ms=(t2 - t1) * 1e3,
                               sample_ms=(t1 - t0) * 1e3,
                               stage_ms=dict(result.diagnostics["timings_ms"]))
    except Exception as exc:
        log.warning("replicate n=%d r=%d failed: %s", n, replicate, exc)
        return ReplicateRecord(n, replicate, seed, None, edges, error=f"{type(exc).__name__}: {exc}")


def _run_task(args):
    spec_doc, n, r, seed, method, d = args
    spec, sched = model_from_dict(spec_doc)
    return run_replicate(spec, sched, n, r, seed, method, d)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[ReplicateRecord], dict]:
    """Run every ``(n, replicate)`` pair and return records in that order.

    Seeds depend only on ``(master_seed, n, replicate)``, so results do not
    depend on ``threads``.
    """
    spec_doc = model_to_dict(cfg.spec, cfg.sched)
    tasks = [(spec_doc, n, r, replicate_seed(cfg.master_seed, n, r), cfg.method, cfg.d)
             for n in cfg.n_values for r in range(cfg.replicates)]
    if threads <= 1:
        records = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_task, tasks))
    return records, summarize(records, cfg.spec.K)


def _quantiles(values):
    q1, med, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75], method="linear")
    return float(q1), float(med), float(q3)


def summarize(records, K: int | None = None) -> dict:
    """Per-n median, quartiles, mean and failure count of misclassification."""
    by_n = {}
    for rec in records:
        entry = by_n.setdefault(int(rec.n), {"values": [], "failures": 0})
        if rec.failed or rec.misclassification is None:
            entry["failures"] += 1
        else:
            entry["values"].append(rec.misclassification)
    rows = []
    for n in sorted(by_n):
        vals = by_n[n]["values"]
        row = {"n": n, "replicates": len(vals), "failures": by_n[n]["failures"]}
        if vals:
            q1, med, q3 = _quantiles(vals)
            row.update(median=med, q1=q1, q3=q3, mean=float(np.mean(vals)))
        else:
            row.update(median=None, q1=None, q3=None, mean=None)
        rows.append(row)
    out = {"per_n": rows}
    if K is not None:
        out["K"] = int(K)
        out["worst_case"] = 1.0 - 1.0 / K
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def records_to_csv(records, record_timings: bool = False) -> str:
    """CSV text for successful records; ``fit_ms`` is blank unless requested."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        if rec.failed:
            continue
        w.writerow([rec.n, rec.replicate, rec.seed, rec.edges, _fmt(rec.misclassification),
                    f"{rec.fit_ms:.3f}" if record_timings else ""])
    return buf.getvalue()


def read_records_csv(path) -> list[ReplicateRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"{path}: header must be {','.join(CSV_HEADER)}")
        return [ReplicateRecord(int(r["n"]), int(r["replicate"]), int(r["seed"]),
                                float(r["misclassification"]), int(r["edges"]),
                                fit_ms=float(r["fit_ms"]) if r["fit_ms"] else 0.0)
                for r in reader]


def write_outputs(out_dir, records, summary, record_timings=False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "replicates.csv", "summary": out / "summary.json",
             "timings": out / "timings.csv"}
    paths["csv"].write_text(records_to_csv(records, record_timings))
    paths["summary"].write_text(json.dumps(summary, indent=2) + "\n")
    with open(paths["timings"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_HEADER)
        for rec in records:
            w.writerow([rec.n, rec.replicate, f"{rec.sample_ms:.3f}", f"{rec.fit_ms:.3f}", rec.error or ""])
    return paths
