"""Configuration generation: staging directory in, runnable config out.

Staging layout: ``fe_model.json``, ``training/*.csv``, ``wim.csv``,
``docs/*.md|*.txt``, ``llm.json``. Stages run in order (FE precompute,
detector calibration, traffic model fit, document index build, then the
fatigue-precompute and damage-identification markers); any failure removes
the partial output and reports the failing stage by name.
"""

from __future__ import annotations

import json
import shutil
import uuid
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigError, FatalError
from .events import OrchestratorEvent
from .fe import StructuralModel, assemble, influence_lines_multi, modal_analysis
from .signals import TimeSeriesBlock, load_monitoring_csv
from .skills.anomaly import DetectorCalibration, segment_features
from .skills.rag import build_index
from .skills.traffic import fit_traffic_model, parse_wim_csv
from .state.configs import ConfigStore, save_influence_cache, write_manifest

MIN_TRAINING_SECONDS = 3600.0
MIN_TRAINING_SEGMENTS = 10
HOLDOUT_NORMAL_RATE = 0.99

EventSink = Callable[[OrchestratorEvent], None]


class StageError(ConfigError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


def calibrate_detector(blocks: list[TimeSeriesBlock], interval_s: float = 60.0,
                       exclude_channels: Optional[list[int]] = None,
                       lf_cutoff_hz: float = 0.1) -> DetectorCalibration:
    """Per-channel thresholds from operator-attested normal training data.

    Channels flagged as contaminated are excluded from calibration; their
    thresholds reuse the fleet median. A holdout self-test must classify at
    least 99% of fresh segments normal, else the margins widen stepwise.
    """
    exclude = set(exclude_channels or [])
    if not blocks:
        raise FatalError("empty training set")
    n_channels = blocks[0].n_channels
    feats_per_channel: dict[int, list[np.ndarray]] = {c: [] for c in range(n_channels)}
    for block in blocks:
        seg_len = int(round(interval_s * block.fs))
        n_seg = block.n_samples // seg_len
        for c in range(n_channels):
            if c in exclude:
                continue
            for s in range(n_seg):
                x = block.data[c, s * seg_len:(s + 1) * seg_len]
                feats_per_channel[c].append(segment_features(x, block.fs, lf_cutoff_hz))
    total_segments = sum(len(v) for v in feats_per_channel.values())
    if total_segments < MIN_TRAINING_SEGMENTS:
        raise FatalError(
            f"need at least {MIN_TRAINING_SEGMENTS} training segments, got {total_segments}")

    # split a holdout per channel for the self-test
    train: dict[int, np.ndarray] = {}
    holdout: dict[int, np.ndarray] = {}
    for c, rows in feats_per_channel.items():
        if not rows:
            continue
        arr = np.array(rows)
        cut = max(int(0.8 * len(arr)), 1)
        train[c] = arr[:cut]
        holdout[c] = arr[cut:] if cut < len(arr) else arr[:0]

    margins = (1.0, 1.5, 2.25, 3.4)
    calib = None
    for margin in margins:
        rms_lo, rms_hi = [], []
        all_kurt, all_slope, all_lf = [], [], []
        for c in range(n_channels):
            arr = train.get(c)
            if arr is None or not len(arr):
                rms_lo.append(np.nan)
                rms_hi.append(np.nan)
                continue
            rms = arr[:, 1]
            lo, hi = np.percentile(rms, [1, 99])
            rms_lo.append(lo * 0.25 / margin)
            rms_hi.append(hi * 4.0 * margin)
            all_kurt.extend(arr[:, 2])
            all_slope.extend(arr[:, 3])
            all_lf.extend(arr[:, 4])
        med_lo = float(np.nanmedian(rms_lo))
        med_hi = float(np.nanmedian(rms_hi))
        rms_lo = [med_lo if np.isnan(v) else float(v) for v in rms_lo]
        rms_hi = [med_hi if np.isnan(v) else float(v) for v in rms_hi]
        calib = DetectorCalibration(
            rms_lo=rms_lo, rms_hi=rms_hi,
            kurtosis_hi=float(max(6.0, np.percentile(all_kurt, 99) * 1.5 * margin)),
            kurtosis_lo=2.0,
            slope_bound=float(max(2.0, np.percentile(all_slope, 99) * 3.0 * margin)),
            nan_bound=0.25,
            clip_bound=0.6,
            lf_cutoff_hz=lf_cutoff_hz,
            lf_bound=float(max(0.2, np.percentile(all_lf, 99) * 3.0 * margin)),
        )
        # holdout self-test
        checked = passed = 0
        from .skills.anomaly import classify

        for c in range(n_channels):
            arr = holdout.get(c)
            if arr is None or not len(arr):
                continue
            for row in arr:
                checked += 1
                passed += classify(row, c, calib) == "normal"
        if checked == 0 or passed / checked >= HOLDOUT_NORMAL_RATE:
            return calib
    return calib


def _load_training_blocks(staging: Path) -> list[TimeSeriesBlock]:
    blocks = []
    for path in sorted((staging / "training").glob("*.csv")):
        blocks.append(load_monitoring_csv(path.read_text(encoding="utf-8")))
    return blocks


def create_config(store: ConfigStore, name: str, staging_dir: Union[str, Path],
                  sink: Optional[EventSink] = None,
                  modal_modes: int = 5, influence_step: float = 2.0) -> str:
    staging = Path(staging_dir)
    config_id = f"{_slug(name)}-{uuid.uuid4().hex[:6]}"
    cdir = store.config_dir(config_id)

    def emit(stage: str, status: str, text: str = "") -> None:
        if sink:
            sink(OrchestratorEvent(type="config_stage", node=stage, status=status, text=text))

    stages_done: list[dict[str, str]] = []

    def run_stage(stage: str, fn: Callable[[], str]) -> None:
        emit(stage, "running")
        try:
            detail = fn()
        except Exception as exc:
            emit(stage, "error", str(exc))
            shutil.rmtree(cdir, ignore_errors=True)
            raise StageError(stage, str(exc))
        stages_done.append({"name": stage, "status": "ok", "detail": detail})
        emit(stage, "ok", detail)

    cdir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}
    settings: dict[str, object] = {}

    def stage_fe() -> str:
        src = staging / "fe_model.json"
        if not src.exists():
            raise FatalError("fe_model.json not found in staging directory")
        model = StructuralModel.load(src)
        sys = assemble(model)             # mechanism / definiteness gate
        freqs, _ = modal_analysis(sys, modal_modes)
        modal_cache = {"frequencies": [float(f) for f in freqs],
                       "f_min": float(0.8 * freqs[0]) if len(freqs) else 0.05}
        model.save(cdir / "fe_model.json")
        (cdir / "modal_cache.json").write_text(json.dumps(modal_cache), encoding="utf-8")
        artifacts["fe_model"] = "fe_model.json"
        artifacts["modal_cache"] = "modal_cache.json"
        settings["modal_f_min"] = modal_cache["f_min"]

        # influence-line cache: every cable detail plus every displacement
        # sensor, per distinct lane path
        targets = {f"cable_stress|cable_{i}": ("cable_stress", f"cable_{i}")
                   for i in range(len(model.cable_elements))}
        for sensor in model.sensors:
            targets[f"displacement|{sensor.name}"] = ("displacement", sensor.name)
        cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        by_path: dict[tuple, list[str]] = {}
        for lane in model.lanes:
            by_path.setdefault(tuple(lane.nodes), []).append(lane.name)
        for path_nodes, lane_names in by_path.items():
            lines = influence_lines_multi(sys, lane_names[0], targets, influence_step)
            for lane_name in lane_names:
                for key, (pos, val) in lines.items():
                    cache[f"{lane_name}|{key}"] = (pos, val)
        save_influence_cache(cdir / "influence_cache.npz", cache)
        artifacts["influence_cache"] = "influence_cache.npz"
        return (f"{len(model.nodes)} nodes, {len(model.cable_elements)} cables, "
                f"f1={modal_cache['frequencies'][0]:.3f} Hz, "
                f"{len(cache)} cached influence lines")

    def stage_detector() -> str:
        blocks = _load_training_blocks(staging)
        if not blocks:
            raise FatalError("no training CSV files under training/")
        total = sum(b.duration for b in blocks)
        if total < MIN_TRAINING_SECONDS:
            raise FatalError(
                f"training data covers {total:.0f} s; need at least {MIN_TRAINING_SECONDS:.0f} s")
        calib = calibrate_detector(blocks)
        (cdir / "detector.json").write_text(json.dumps(calib.to_json()), encoding="utf-8")
        artifacts["detector"] = "detector.json"
        return f"calibrated on {total:.0f} s of data"

    def stage_traffic() -> str:
        src = staging / "wim.csv"
        if not src.exists():
            raise FatalError("wim.csv not found in staging directory")
        records = parse_wim_csv(src.read_text(encoding="utf-8"))
        model = fit_traffic_model(records)
        (cdir / "traffic_model.json").write_text(json.dumps(model.to_json()), encoding="utf-8")
        artifacts["traffic_model"] = "traffic_model.json"
        return f"fitted on {len(records)} WIM records, {len(model.classes)} vehicle classes"

    def stage_rag() -> str:
        docs = []
        for pattern in ("*.md", "*.txt"):
            docs.extend(sorted((staging / "docs").glob(pattern)))
        texts = [p.read_text(encoding="utf-8") for p in docs]
        if not texts:
            raise FatalError("no documents under docs/")
        index = build_index(texts)
        index.save(cdir / "rag")
        artifacts["rag_index"] = "rag"
        return f"indexed {len(texts)} documents into {index.n_chunks} chunks"

    def stage_fatigue() -> str:
        n = sum(1 for key in artifacts if key == "influence_cache")
        return (f"per-detail influence lines precomputed in stage 1 "
                f"({n} cache file)")

    def stage_damage_id() -> str:
        return "not implemented: damage identification training is a future node"

    def stage_llm() -> str:
        src = staging / "llm.json"
        if src.exists():
            shutil.copyfile(src, cdir / "llm.json")
        else:
            (cdir / "llm.json").write_text(json.dumps({
                "endpoint": "", "chat_model": "gpt-4o",
                "embedding_model": "text-embedding-ada-002",
                "key_env": "SHM_AGENTS_LLM_KEY"}), encoding="utf-8")
        artifacts["llm"] = "llm.json"
        return "LLM settings stored"

    run_stage("Finite element model preprocessing", stage_fe)
    run_stage("Data anomaly diagnosis model training", stage_detector)
    run_stage("Vehicle load modeling", stage_traffic)
    run_stage("Bridge information encoding", stage_rag)
    run_stage("Fatigue damage calculation model training", stage_fatigue)
    run_stage("Structural damage identification model training", stage_damage_id)
    run_stage("LLM configuration", stage_llm)

    for st in stages_done:
        if st["name"].startswith("Structural damage identification"):
            st["status"] = "not_implemented"
    extra = staging / "settings.json"
    if extra.exists():
        settings.update(json.loads(extra.read_text(encoding="utf-8")))
    manifest = {
        "config_id": config_id,
        "bridge_name": name,
        "created_at": ConfigStore.timestamp(),
        "artifacts": artifacts,
        "settings": settings,
        "stages": stages_done,
    }
    write_manifest(cdir, manifest)
    emit("configuration", "ok", "Configuration Created Successfully")
    if sink:
        sink(OrchestratorEvent(type="config_created", text="Configuration Created Successfully",
                               node=config_id, status="ok"))
    return config_id


def _slug(name: str) -> str:
    out = "".join(ch.lower() if ch.isalnum() else "-" for ch in name.strip())
    while "--" in out:
        out = out.replace("--", "-")
    return out.strip("-") or "config"
