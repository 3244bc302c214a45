"""End-to-end run loop and its on-disk artifacts."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import _rng
from .config import RunConfig, dump
from .detectors import (
    DynamicModel,
    LabeledSample,
    StaticOracleDetector,
    dyn_predict,
    dyn_update,
)
from .exceptions import EndOfStream, ShapeError, TrackLearnError, VersionError
from .metrics import (
    EvalRecord,
    MetricsLog,
    converged,
    correct_count,
    eval_arrays,
    hindsight_optimum,
    stability_rate,
    windowed_stability,
)
from .pipeline import FRAMEWORK_A, new_state, replay_samples, seed_supervision, step
from .simulator import HUMAN, ReplayWorld, World, class_means, eval_set

logger = logging.getLogger(__name__)

METRICS_HEADER = [
    "step",
    "u",
    "eval_accuracy",
    "stability_rate",
    "cum_online_loss",
    "dyn_eval_accuracy",
    "static_eval_accuracy",
    "converged_flag",
]
SNAPSHOT_VERSION = 1


@dataclass
class RunArtifacts:
    output_dir: Path
    metrics_csv: Path
    events_jsonl: Path
    snapshots: List[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    log: Optional[MetricsLog] = None
    state: object = None

    @property
    def ok(self) -> bool:
        return self.summary.get("status") == "completed"


# -- snapshots ----------------------------------------------------------------


def snapshot_record(model: DynamicModel, seed: int, frame: int, config: Optional[dict] = None) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "frame": frame,
        "f": model.n_features,
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "updates": model.updates,
        "lr0": model.lr0,
        "seed": seed,
        "config": config,
    }


def write_snapshot(path: Path, model: DynamicModel, seed: int, frame: int, config: Optional[dict] = None) -> Path:
    path.write_text(json.dumps(snapshot_record(model, seed, frame, config), indent=1) + "\n")
    return path


def load_snapshot(path) -> DynamicModel:
    rec = json.loads(Path(path).read_text())
    if rec.get("version") != SNAPSHOT_VERSION:
        raise VersionError(f"unsupported snapshot version {rec.get('version')!r}")
    w = np.array(rec["weights"], dtype=float)
    if w.shape != (rec["f"],):
        raise ShapeError(f"snapshot declares f={rec['f']} but holds {w.shape[0]} weights")
    return DynamicModel(w, float(rec["bias"]), int(rec["updates"]), float(rec["lr0"]))


# -- sample log ---------------------------------------------------------------

_PROV = ["seed", "p_expert", "n_expert", "fusion"]


def save_samples(path: Path, samples: List[LabeledSample], n_features: int) -> None:
    X = np.array([s.x for s in samples], dtype=float).reshape(len(samples), n_features)
    np.savez(
        path,
        X=X,
        y=np.array([s.y for s in samples], dtype=np.int8),
        weight=np.array([s.weight for s in samples], dtype=float),
        provenance=np.array([_PROV.index(s.provenance) for s in samples], dtype=np.int8),
        frame=np.array([s.frame for s in samples], dtype=np.int64),
    )


def load_samples(path) -> List[LabeledSample]:
    with np.load(path) as d:
        X, y, w, prov, frame = (d[k] for k in ("X", "y", "weight", "provenance", "frame"))
    return [
        LabeledSample(X[i], int(y[i]), float(w[i]), _PROV[prov[i]], int(frame[i]))
        for i in range(len(y))
    ]


# -- run ----------------------------------------------------------------------


def _seed_samples(cfg: RunConfig) -> List[LabeledSample]:
    """Hand-labelled examples, drawn like real clusters of each class."""
    rng = _rng.generator(cfg.seed, _rng.SEED_SAMPLES)
    human, clutter = class_means(cfg.world)
    out = []
    for label, mean, count in ((1, human, cfg.learner.seed_positives), (0, clutter, cfg.learner.seed_negatives)):
        for _ in range(count):
            x = mean + cfg.world.feature_noise * rng.standard_normal(cfg.world.feature_dim)
            out.append(LabeledSample(x, label, 1.0, "seed", 0))
    return out


def static_detector_for(cfg: RunConfig) -> StaticOracleDetector:
    s = cfg.static_detector
    seed = s.seed if s.seed is not None else _rng.substream(cfg.seed, _rng.STATIC_DETECTOR)
    return StaticOracleDetector(s.accuracy, s.confidence_concentration, seed).reset()


def _fmt(x) -> str:
    return repr(float(x))


def metrics_rows(log: MetricsLog, window: int, tau: float, delta: float) -> List[list]:
    """CSV rows; the convergence flag of each row only looks at rows so far."""
    rows = []
    partial = MetricsLog(log.eval_set_size, log.baseline_accuracy)
    for i, rec in enumerate(log.records, start=1):
        partial.records.append(rec)
        flag = i >= window and converged(partial, window, tau, delta)
        rows.append(
            [
                str(rec.t),
                str(rec.u),
                _fmt(rec.eval_accuracy),
                _fmt(stability_rate(partial, i)),
                _fmt(rec.online_loss),
                _fmt(rec.eval_accuracy),
                _fmt(log.static_eval_accuracy),
                "1" if flag else "0",
            ]
        )
    return rows


def write_metrics_csv(path: Path, rows: List[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def run_experiment(cfg: RunConfig, output_dir=None, stream_path=None, dump_stream: bool = False) -> RunArtifacts:
    """Run the configured pipeline over the whole horizon and write artifacts.

    Numerical failures stop the run; whatever was produced is still written
    and the summary is flagged ``partial``.
    """
    cfg = cfg.validate()
    out = Path(output_dir or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    resolved = cfg.to_dict()
    # where a run is written is not part of what it computes
    portable = {k: v for k, v in resolved.items() if k != "output_dir"}
    (out / "config.resolved.yaml").write_text(dump(cfg))

    world = ReplayWorld(stream_path) if stream_path else World(cfg.world)
    wcfg = world.cfg
    f, dt = wcfg.feature_dim, wcfg.dt
    evaluation = eval_set(wcfg, cfg.metrics.eval_size)
    X_eval, y_eval = eval_arrays(evaluation)

    static = static_detector_for(cfg)
    static_acc = static.eval_accuracy(evaluation, _rng.substream(cfg.seed, _rng.STATIC_EVALUATION))
    state = new_state(
        cfg.mode, f, cfg.learner.lr0, dt, cfg.tracker, cfg.experts,
        static if cfg.mode != FRAMEWORK_A else None, cfg.learner.fusion_window,
    )
    log = MetricsLog(len(evaluation), static_acc, static_eval_accuracy=static_acc)
    artifacts = RunArtifacts(out, out / "metrics.csv", out / "events.jsonl", log=log, state=state)

    status, error = "completed", None
    started = time.perf_counter()
    events = open(artifacts.events_jsonl, "w")
    stream_fh = open(out / "stream.jsonl", "w") if dump_stream else None
    if stream_fh:
        stream_fh.write(json.dumps({"world_config": resolved["world"]}) + "\n")

    def emit(rec):
        events.write(json.dumps(rec) + "\n")

    def evaluate(frame):
        u = correct_count(state.model, X_eval, y_eval)
        log.append(EvalRecord(frame, u, state.cum_loss, u / log.eval_set_size))
        emit({"type": "eval", "frame": frame, "u": u, "cum_online_loss": state.cum_loss})

    try:
        emit({"type": "run_start", "seed": cfg.seed, "mode": cfg.mode, "config": resolved,
              "static_eval_accuracy": static_acc, "eval_set_size": len(evaluation)})
        if cfg.mode == FRAMEWORK_A:
            seed_supervision(state, _seed_samples(cfg))
            emit({"type": "seed", "n": len(state.sample_log)})
        while True:
            try:
                clusters = world.tick()
            except EndOfStream:
                break
            _, fo = step(state, clusters, dt, world.frame)
            if stream_fh:
                stream_fh.write(json.dumps({"frame": world.frame, "clusters": [c.to_record() for c in clusters]}) + "\n")
            if cfg.frame_events:
                emit(fo.to_record())
            if state.frame % cfg.metrics.eval_every == 0:
                evaluate(state.frame)
            if state.frame % cfg.snapshot_every == 0:
                artifacts.snapshots.append(
                    write_snapshot(snap_dir / f"snapshot_{state.frame:07d}.json", state.model, cfg.seed, state.frame, portable)
                )
        if not log.records or log.records[-1].t != state.frame:
            evaluate(state.frame)
    except TrackLearnError as exc:
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        logger.error("run stopped at frame %d: %s", state.frame, error)

    elapsed = time.perf_counter() - started
    artifacts.snapshots.append(
        write_snapshot(snap_dir / "final.json", state.model, cfg.seed, state.frame, portable)
    )
    save_samples(out / "samples.npz", state.sample_log, f)

    hindsight = None
    if state.sample_log:
        opt = hindsight_optimum(state.sample_log)
        h_acc = correct_count(opt.as_model(), X_eval, y_eval) / log.eval_set_size
        hindsight = {"training_loss": opt.training_loss, "eval_accuracy": h_acc,
                     "converged": bool(opt.converged_flag), "iterations": opt.iterations,
                     "grad_norm": opt.grad_norm}
        emit({"type": "hindsight", **hindsight})
        if cfg.mode == FRAMEWORK_A:
            log.baseline_accuracy = h_acc
    m = cfg.metrics
    rows = metrics_rows(log, m.window, m.tau, m.delta)
    write_metrics_csv(artifacts.metrics_csv, rows)

    artifacts.summary = summarize(cfg, log, rows, hindsight, status, error, state, elapsed)
    emit({"type": "run_end", **{k: v for k, v in artifacts.summary.items() if k != "config"}})
    events.close()
    if stream_fh:
        stream_fh.close()
    (out / "summary.json").write_text(json.dumps(artifacts.summary, indent=1) + "\n")
    return artifacts


def summarize(cfg, log, rows, hindsight, status, error, state, elapsed) -> dict:
    last = log.records[-1] if log.records else None
    conv = next((int(r[0]) for r in rows if r[-1] == "1"), None)
    m = cfg.metrics
    window = min(m.window, len(log.records))
    summary = {
        "status": status,
        "partial": status != "completed",
        "error": error,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "frames": state.frame,
        "n_samples": len(state.sample_log),
        "dyn_eval_accuracy": last.eval_accuracy if last else None,
        "static_eval_accuracy": log.static_eval_accuracy,
        "baseline_accuracy": log.baseline_accuracy,
        "hindsight_eval_accuracy": hindsight["eval_accuracy"] if hindsight else None,
        "cum_online_loss": last.online_loss if last else 0.0,
        "regret": (last.online_loss - hindsight["training_loss"]) if (hindsight and last) else None,
        "stability_rate": stability_rate(log, len(log.records)) if log.records else None,
        "windowed_stability": windowed_stability(log, window) if window else None,
        "converged_step": conv,
        "elapsed_seconds": elapsed,
        "config": cfg.to_dict(),
    }
    return summary


# -- post-hoc tools -----------------------------------------------------------


def evaluate_snapshot(snapshot_path, cfg: RunConfig) -> dict:
    model = load_snapshot(snapshot_path)
    if model.n_features != cfg.world.feature_dim:
        raise ShapeError(f"snapshot has f={model.n_features}, config has f={cfg.world.feature_dim}")
    evaluation = eval_set(cfg.world, cfg.metrics.eval_size)
    X, y = eval_arrays(evaluation)
    u = correct_count(model, X, y)
    return {"snapshot": str(snapshot_path), "u": u, "eval_set_size": len(y), "eval_accuracy": u / len(y)}


def replay_run(run_dir) -> dict:
    """Re-apply a run's sample log to a fresh model and compare with its
    final snapshot."""
    run_dir = Path(run_dir)
    final = load_snapshot(run_dir / "snapshots" / "final.json")
    samples = load_samples(run_dir / "samples.npz")
    model = replay_samples(samples, final.n_features, final.lr0)
    identical = (
        np.array_equal(model.weights, final.weights)
        and model.bias == final.bias
        and model.updates == final.updates
    )
    return {"run_dir": str(run_dir), "n_samples": len(samples), "identical": bool(identical),
            "max_abs_diff": float(np.max(np.abs(model.params() - final.params()), initial=0.0))}


def bench(cfg: RunConfig, frames: int = 500, calls: int = 100_000) -> dict:
    """Wall-time per frame, per prediction and per update at f and 4f."""
    report = {"frames_timed": frames}
    base_f = cfg.world.feature_dim
    rng = np.random.default_rng(0)
    for label, f in (("f", base_f), ("4f", 4 * base_f)):
        model = DynamicModel(rng.standard_normal(f), 0.1, 0, cfg.learner.lr0)
        x = rng.standard_normal(f)
        t0 = time.perf_counter_ns()
        for _ in range(calls):
            dyn_predict(model, x)
        pred_ns = (time.perf_counter_ns() - t0) / calls
        sample = LabeledSample(x, 1, 1.0, "fusion")
        n_upd = max(calls // 10, 1)
        t0 = time.perf_counter_ns()
        m = model
        for _ in range(n_upd):
            m = dyn_update(m, sample)
        upd_ns = (time.perf_counter_ns() - t0) / n_upd
        report[label] = {"feature_dim": f, "predict_ns": pred_ns, "update_ns": upd_ns}

    wcfg = replace(cfg.world, frames=frames)
    world = World(wcfg)
    state = new_state(cfg.mode, wcfg.feature_dim, cfg.learner.lr0, wcfg.dt, cfg.tracker, cfg.experts,
                      static_detector_for(cfg) if cfg.mode != FRAMEWORK_A else None, cfg.learner.fusion_window)
    if cfg.mode == FRAMEWORK_A:
        seed_supervision(state, _seed_samples(cfg))
    t0 = time.perf_counter_ns()
    for _ in range(frames):
        step(state, world.tick(), wcfg.dt, world.frame)
    report["frame_ns"] = (time.perf_counter_ns() - t0) / frames
    report["predict_ratio_4f_over_f"] = report["4f"]["predict_ns"] / report["f"]["predict_ns"]
    report["update_ratio_4f_over_f"] = report["4f"]["update_ns"] / report["f"]["update_ns"]
    return report
