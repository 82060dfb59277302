"""Run records, CSV/JSON emission and baseline-vs-candidate comparison."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
CSV_COLUMNS = ("round", "virtual_time", "train_loss", "eval_metric", "utilization", "mean_E")
CSV_NAME = "metrics.csv"
SUMMARY_NAME = "summary.json"


class IncompatibleRuns(ValueError):
    pass


@dataclass
class RoundMetrics:
    round: int
    virtual_time: float  # cumulative seconds at round close
    round_time: float
    train_loss: float
    eval_metric: float
    per_client_E: list[int]
    utilization: float

    @property
    def mean_E(self) -> float:
        return float(np.mean(self.per_client_E)) if self.per_client_E else 0.0


@dataclass
class MetricsLog:
    config_fingerprint: str
    problem_fingerprint: str = ""
    strategy: str = ""
    rounds: list[RoundMetrics] = field(default_factory=list)
    config: dict | None = None
    # global weights after each round; kept in memory only
    weights: list[np.ndarray] | None = None

    def append(self, rm: RoundMetrics) -> None:
        if self.rounds:
            last = self.rounds[-1]
            if rm.round != last.round + 1:
                raise ValueError("rounds must increase by one")
            if not rm.virtual_time > last.virtual_time:
                raise ValueError("virtual time must strictly increase")
        self.rounds.append(rm)

    @property
    def summary(self) -> dict:
        s = {
            "schema": SCHEMA_VERSION,
            "config_fingerprint": self.config_fingerprint,
            "problem_fingerprint": self.problem_fingerprint,
            "strategy": self.strategy,
            "rounds": len(self.rounds),
        }
        if self.rounds:
            last = self.rounds[-1]
            s.update(
                final_train_loss=last.train_loss,
                final_eval_metric=last.eval_metric,
                total_time=last.virtual_time,
                mean_round_time=last.virtual_time / len(self.rounds),
                mean_utilization=float(np.mean(utilization(self))),
                mean_E=float(np.mean([r.mean_E for r in self.rounds])),
            )
        return s


def utilization(log: MetricsLog) -> list[float]:
    """Per-round fraction of time client compute tracks spent training."""
    if not log.rounds:
        raise ValueError("utilization of an empty log")
    return [r.utilization for r in log.rounds]


def _fmt(x: float) -> str:
    return format(x, ".12g")


def emit_csv(log: MetricsLog, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in log.rounds:
            w.writerow([r.round, _fmt(r.virtual_time), _fmt(r.train_loss),
                        _fmt(r.eval_metric), _fmt(r.utilization), _fmt(r.mean_E)])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (int(v) if k == "round" else float(v)) for k, v in row.items()} for row in rows]


def emit_summary(log: MetricsLog, path) -> Path:
    path = Path(path)
    doc = dict(log.summary)
    doc["per_client_E"] = [r.per_client_E for r in log.rounds]
    if log.config is not None:
        doc["config"] = log.config
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_run(log: MetricsLog, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return emit_csv(log, out / CSV_NAME), emit_summary(log, out / SUMMARY_NAME)


def load_run(run_dir) -> MetricsLog:
    """Rebuild a log from a run directory (rounds come from the CSV)."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / SUMMARY_NAME).read_text())
    if summary.get("schema") != SCHEMA_VERSION:
        raise IncompatibleRuns(f"{run_dir}: unsupported summary schema {summary.get('schema')}")
    rows = read_csv(run_dir / CSV_NAME)
    per_E = summary.get("per_client_E", [[] for _ in rows])
    log = MetricsLog(summary["config_fingerprint"], summary.get("problem_fingerprint", ""),
                     summary.get("strategy", ""), config=summary.get("config"))
    prev = 0.0
    for row, E in zip(rows, per_E):
        log.rounds.append(RoundMetrics(
            row["round"], row["virtual_time"], row["virtual_time"] - prev,
            row["train_loss"], row["eval_metric"], list(E), row["utilization"]))
        prev = row["virtual_time"]
    return log


@dataclass
class ComparisonReport:
    baseline_mean_time: float
    candidate_mean_time: float
    saving: float  # fraction of baseline time saved
    time_ratio: list[float]  # candidate / baseline, per round
    train_loss_delta: float  # candidate - baseline, final round
    eval_metric_delta: float

    @property
    def saving_percent(self) -> float:
        return 100.0 * self.saving

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "baseline_mean_time": self.baseline_mean_time,
            "candidate_mean_time": self.candidate_mean_time,
            "saving": self.saving,
            "saving_percent": self.saving_percent,
            "time_ratio": self.time_ratio,
            "train_loss_delta": self.train_loss_delta,
            "eval_metric_delta": self.eval_metric_delta,
        }


def saving(baseline_time: float, candidate_time: float) -> float:
    return 1.0 - candidate_time / baseline_time


def compare(baseline: MetricsLog, candidate: MetricsLog) -> ComparisonReport:
    if len(baseline.rounds) != len(candidate.rounds):
        raise IncompatibleRuns(
            f"round counts differ: {len(baseline.rounds)} vs {len(candidate.rounds)}")
    if not baseline.rounds:
        raise IncompatibleRuns("nothing to compare: empty logs")
    if baseline.problem_fingerprint != candidate.problem_fingerprint:
        raise IncompatibleRuns("runs were made on different model/dataset setups")
    tb = baseline.rounds[-1].virtual_time / len(baseline.rounds)
    tc = candidate.rounds[-1].virtual_time / len(candidate.rounds)
    b, c = baseline.rounds[-1], candidate.rounds[-1]
    return ComparisonReport(
        baseline_mean_time=tb,
        candidate_mean_time=tc,
        saving=saving(tb, tc),
        time_ratio=[rc.round_time / rb.round_time
                    for rb, rc in zip(baseline.rounds, candidate.rounds)],
        train_loss_delta=c.train_loss - b.train_loss,
        eval_metric_delta=c.eval_metric - b.eval_metric,
    )


def rounds_to_reach(log: MetricsLog, target_loss: float) -> float:
    """First round (1-based count) whose training loss is <= ``target_loss``."""
    for i, r in enumerate(log.rounds):
        if r.train_loss <= target_loss:
            return i + 1
    return math.inf
