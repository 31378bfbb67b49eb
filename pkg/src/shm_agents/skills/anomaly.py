"""Data anomaly diagnosis and reconstruction.

Segments each channel at a fixed interval, labels every cell with one of
seven classes from thresholded time/spectrum features, and rebuilds
anomalous cells from concurrent normal channels by least-squares regression
plus spliced residual noise. Thresholds come from per-bridge calibration
(config pipeline); without one, robust self-calibration from the block's
own median statistics is used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..errors import FatalError, ResolvableError
from ..signals import TimeSeriesBlock
from ..types import STATUS_OK
from .base import SkillContext, SkillNode, SkillOutput, register_block, require_block
from ..state.registry import AlgorithmCard, InputRequirement

LABELS = ("normal", "missing", "minor", "outlier", "square", "trend", "drift")

FEATURE_NAMES = ("nan_const_frac", "rms", "kurtosis", "slope_sig", "lf_ratio", "clip_frac")


@dataclass
class DetectorCalibration:
    rms_lo: list[float]            # per channel
    rms_hi: list[float]
    kurtosis_hi: float = 6.0
    kurtosis_lo: float = 2.0
    slope_bound: float = 2.0
    nan_bound: float = 0.25
    clip_bound: float = 0.6
    lf_cutoff_hz: float = 0.1
    lf_bound: float = 0.2

    def to_json(self) -> dict[str, Any]:
        return {
            "rms_lo": list(self.rms_lo), "rms_hi": list(self.rms_hi),
            "kurtosis_hi": self.kurtosis_hi, "kurtosis_lo": self.kurtosis_lo,
            "slope_bound": self.slope_bound, "nan_bound": self.nan_bound,
            "clip_bound": self.clip_bound, "lf_cutoff_hz": self.lf_cutoff_hz,
            "lf_bound": self.lf_bound,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "DetectorCalibration":
        return cls(**doc)

    def for_channel(self, ch: int) -> tuple[float, float]:
        i = min(ch, len(self.rms_lo) - 1)
        return self.rms_lo[i], self.rms_hi[i]


@dataclass
class AnomalyReport:
    interval_s: float
    labels: np.ndarray             # channels x segments, dtype object (label strings)
    features: np.ndarray           # channels x segments x n_features

    @property
    def n_segments(self) -> int:
        return self.labels.shape[1]

    def anomalous_cells(self) -> list[tuple[int, int]]:
        chs, segs = np.nonzero(self.labels != "normal")
        return list(zip(chs.tolist(), segs.tolist()))

    def counts(self) -> dict[str, int]:
        out = {}
        for label in LABELS:
            n = int(np.sum(self.labels == label))
            if n:
                out[label] = n
        return out


# --- features ---------------------------------------------------------------

def segment_features(x: np.ndarray, fs: float, lf_cutoff_hz: float) -> np.ndarray:
    n = x.size
    finite = np.isfinite(x)
    nan_frac = 1.0 - finite.mean()
    xf = x[finite]
    const_frac = 0.0
    if xf.size >= 2:
        same = np.diff(xf) == 0.0
        if same.any():
            # longest run of identical consecutive samples
            padded = np.concatenate([[False], same, [False]]).astype(int)
            edges = np.flatnonzero(np.diff(padded))
            runs = edges[1::2] - edges[0::2]
            const_frac = float(runs.max() + 1) / n
    nan_const = max(nan_frac, const_frac)
    if xf.size < 8:
        return np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    xc = xf - xf.mean()
    rms = float(np.sqrt(np.mean(xc**2)))
    if rms < 1e-300:
        return np.array([nan_const, rms, 0.0, 0.0, 0.0, 0.0])
    kurt = float(np.mean(xc**4) / rms**4)
    t = np.flatnonzero(finite) / fs
    tbar = t - t.mean()
    denom = float(np.dot(tbar, tbar))
    slope = float(np.dot(tbar, xc) / denom) if denom > 0 else 0.0
    resid = xc - slope * tbar
    resid_std = float(resid.std()) or 1e-300
    slope_sig = abs(slope) * (n / fs) / resid_std
    spec = np.abs(np.fft.rfft(resid)) ** 2
    freqs = np.fft.rfftfreq(resid.size, d=1.0 / fs)
    total = float(spec[1:].sum()) or 1e-300
    lf_ratio = float(spec[(freqs > 0) & (freqs < lf_cutoff_hz)].sum() / total)
    lo, hi = xf.min(), xf.max()
    span = (hi - lo) or 1e-300
    near_edge = (np.abs(xf - hi) < 0.02 * span) | (np.abs(xf - lo) < 0.02 * span)
    clip_frac = float(near_edge.mean())
    return np.array([nan_const, rms, kurt, slope_sig, lf_ratio, clip_frac])


def classify(features: np.ndarray, ch: int, calib: DetectorCalibration) -> str:
    nan_const, rms, kurt, slope_sig, lf_ratio, clip_frac = features
    rms_lo, rms_hi = calib.for_channel(ch)
    if nan_const > calib.nan_bound:
        return "missing"
    if rms < rms_lo:
        return "minor"
    if clip_frac > calib.clip_bound and kurt < calib.kurtosis_lo:
        return "square"
    if kurt > calib.kurtosis_hi:
        return "outlier"
    if slope_sig > calib.slope_bound:
        return "trend"
    if lf_ratio > calib.lf_bound:
        return "drift"
    if rms > rms_hi:
        # energy far outside the calibrated band with no other signature
        return "outlier"
    return "normal"


def self_calibration(block: TimeSeriesBlock, interval_s: float,
                     lf_cutoff_hz: float = 0.1) -> DetectorCalibration:
    """Fallback thresholds from the block's own median segment statistics;
    robust as long as most segments are normal."""
    seg_len = int(round(interval_s * block.fs))
    n_seg = block.n_samples // seg_len
    rms_lo, rms_hi = [], []
    for c in range(block.n_channels):
        rms = []
        for s in range(n_seg):
            x = block.data[c, s * seg_len:(s + 1) * seg_len]
            rms.append(segment_features(x, block.fs, lf_cutoff_hz)[1])
        med = float(np.median(rms)) or 1.0
        rms_lo.append(med * 0.1)
        rms_hi.append(med * 6.0)
    return DetectorCalibration(rms_lo=rms_lo, rms_hi=rms_hi, lf_cutoff_hz=lf_cutoff_hz)


# --- diagnose ----------------------------------------------------------------

def diagnose(block: TimeSeriesBlock, interval_s: float,
             calib: Optional[DetectorCalibration] = None) -> AnomalyReport:
    if interval_s <= 0:
        raise ResolvableError("interval_s must be positive")
    if interval_s > block.duration:
        raise ResolvableError(
            f"interval {interval_s:g} s exceeds the data duration; "
            f"maximum usable interval is {block.duration:g} s")
    if calib is None:
        calib = self_calibration(block, interval_s)
    seg_len = int(round(interval_s * block.fs))
    n_seg = block.n_samples // seg_len
    labels = np.empty((block.n_channels, n_seg), dtype=object)
    feats = np.zeros((block.n_channels, n_seg, len(FEATURE_NAMES)))
    for c in range(block.n_channels):
        for s in range(n_seg):
            x = block.data[c, s * seg_len:(s + 1) * seg_len]
            f = segment_features(x, block.fs, calib.lf_cutoff_hz)
            feats[c, s] = f
            labels[c, s] = classify(f, c, calib)
    return AnomalyReport(interval_s=interval_s, labels=labels, features=feats)


# --- reconstruct ---------------------------------------------------------------

def _fit_regression(y: np.ndarray, refs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """y ~ intercept + refs; returns (coefficients, residuals on fit data)."""
    X = np.column_stack([np.ones(refs.shape[1]), refs.T])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    return beta, resid


def _ar_extrapolate(history: np.ndarray, n_out: int, order: int = 10) -> np.ndarray:
    h = history[np.isfinite(history)]
    if h.size < 4 * order:
        raise ResolvableError("not enough clean history for autoregressive fallback")
    mean = h.mean()
    hc = h - mean
    rows = np.column_stack([hc[order - k - 1: hc.size - k - 1] for k in range(order)])
    target = hc[order:]
    coef, *_ = np.linalg.lstsq(rows, target, rcond=None)
    state = list(hc[-order:])
    out = np.empty(n_out)
    for i in range(n_out):
        nxt = float(np.dot(coef, state[::-1]))
        out[i] = nxt
        state.pop(0)
        state.append(nxt)
    return out + mean


def reconstruct(block: TimeSeriesBlock, report: AnomalyReport) -> TimeSeriesBlock:
    if report.labels.shape[0] != block.n_channels:
        raise FatalError("report does not match the block's channel count")
    out = block.copy()
    seg_len = int(round(report.interval_s * block.fs))
    n_seg = report.n_segments
    normal = report.labels == "normal"
    data = block.data

    for c in range(block.n_channels):
        bad_segments = np.nonzero(~normal[c])[0]
        if bad_segments.size == 0:
            continue
        for s in bad_segments:
            refs = [r for r in range(block.n_channels) if r != c and normal[r, s]]
            sl = slice(s * seg_len, (s + 1) * seg_len)
            if refs:
                # train on segments where target and all refs are normal
                train_segs = [t for t in range(n_seg)
                              if normal[c, t] and all(normal[r, t] for r in refs)]
                if not train_segs:
                    refs = []
                else:
                    cols = np.concatenate([np.arange(t * seg_len, (t + 1) * seg_len)
                                           for t in train_segs])
                    beta, resid = _fit_regression(data[c, cols], data[np.ix_(refs, cols)])
                    X_pred = np.column_stack([np.ones(seg_len), data[np.ix_(refs, range(sl.start, sl.stop))].T])
                    pred = X_pred @ beta
                    # spectrum-matched noise: splice an actual residual stretch
                    k = (s * 7919) % max(resid.size - seg_len + 1, 1)
                    noise = resid[k:k + seg_len]
                    if noise.size < seg_len:
                        noise = np.resize(resid, seg_len)
                    out.data[c, sl] = pred + noise
                    continue
            # no usable references: autoregressive extrapolation from own history
            prev_normal = [t for t in range(n_seg) if normal[c, t] and t < s]
            next_normal = [t for t in range(n_seg) if normal[c, t] and t > s]
            if prev_normal:
                t0 = prev_normal[-1]
                hist = data[c, t0 * seg_len:(t0 + 1) * seg_len]
                out.data[c, sl] = _ar_extrapolate(hist, seg_len)
            elif next_normal:
                t0 = next_normal[0]
                hist = data[c, t0 * seg_len:(t0 + 1) * seg_len][::-1]
                out.data[c, sl] = _ar_extrapolate(hist, seg_len)[::-1]
            else:
                raise ResolvableError(
                    f"channel {c}: every segment is anomalous, nothing to extrapolate from")
    return out


# --- figure ----------------------------------------------------------------------

LABEL_COLORS = {
    "normal": "#2ca02c", "missing": "#7f7f7f", "minor": "#17becf",
    "outlier": "#d62728", "square": "#9467bd", "trend": "#ff7f0e", "drift": "#8c564b",
}


def diagnosis_figure(block: TimeSeriesBlock, report: AnomalyReport, title: str) -> bytes:
    import matplotlib.pyplot as plt

    from .plotting import fig_to_png, style_context

    n_ch = block.n_channels
    seg_len = int(round(report.interval_s * block.fs))
    with style_context():
        fig, axes = plt.subplots(n_ch, 2, figsize=(9, max(1.0 * n_ch, 2.5)),
                                 squeeze=False, sharex="col")
        stride = max(1, block.n_samples // 4000)
        t = np.arange(block.n_samples)[::stride] / block.fs
        for c in range(n_ch):
            ax_t, ax_f = axes[c]
            ax_t.plot(t, block.data[c, ::stride], color="tab:blue", lw=0.5)
            for s in range(report.n_segments):
                label = report.labels[c, s]
                if label != "normal":
                    ax_t.axvspan(s * report.interval_s, (s + 1) * report.interval_s,
                                 color=LABEL_COLORS[label], alpha=0.35)
            bad = {report.labels[c, s] for s in range(report.n_segments)} - {"normal"}
            tag = ", ".join(sorted(bad)) if bad else "normal"
            ax_t.set_ylabel(block.channel_names[c], rotation=0, ha="right", va="center")
            ax_t.set_title(tag, loc="right", fontsize=7, pad=1)
            x = block.data[c]
            x = np.where(np.isfinite(x), x, 0.0)
            spec = np.abs(np.fft.rfft(x - x.mean()))
            freqs = np.fft.rfftfreq(x.size, 1.0 / block.fs)
            ax_f.plot(freqs[1:], spec[1:], color="tab:green", lw=0.5)
            ax_f.set_yticks([])
        axes[-1][0].set_xlabel("time [s]")
        axes[-1][1].set_xlabel("frequency [Hz]")
        fig.suptitle(title)
        fig.tight_layout(rect=(0, 0, 1, 0.97))
        return fig_to_png(fig)


# --- node --------------------------------------------------------------------------

class AnomalyNode(SkillNode):
    name = "anomaly"
    args_schema = {
        "type": "object",
        "properties": {
            "variable": {"type": "string"},
            "interval_s": {"type": "number", "exclusiveMinimum": 0},
            "reconstruct": {"type": "boolean"},
            "output": {"type": "string"},
        },
        "required": ["variable", "interval_s"],
        "additionalProperties": False,
    }

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Anomaly detection and abnormal data recovery for monitoring data: "
                     "segments each channel at a fixed time interval, labels segments "
                     "(normal/missing/minor/outlier/square/trend/drift), reconstructs "
                     "anomalous segments from correlated channels, and re-checks the result.",
            input_requirements=[
                InputRequirement("variable", "monitoring data", "channels x samples", "acceleration"),
                InputRequirement("interval_s", "segmentation interval", "scalar", "seconds"),
            ],
            input_example='{"variable": "monitoring_data", "interval_s": 60}',
            output_example='variable "Effective_monitoring_data" plus diagnosis figures',
        )

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        block = require_block(ctx, args["variable"])
        calib = ctx.config.anomaly_thresholds if ctx.config else None
        report = diagnose(block, float(args["interval_s"]), calib)
        art1 = ctx.artifacts.put_png(ctx.session_id,
                                     diagnosis_figure(block, report, "Anomaly diagnosis (original data)"))
        artifacts = [art1]
        produced: list[str] = []
        lines = [f"Anomaly diagnosis finished: {report.n_segments} segments per channel "
                 f"at {args['interval_s']:g} s interval."]
        counts = report.counts()
        if counts:
            lines.append("Anomalous cells by type: "
                         + ", ".join(f"{k}={v}" for k, v in counts.items()) + ".")
        for c in range(block.n_channels):
            bad = sorted({report.labels[c, s] for s in range(report.n_segments)} - {"normal"})
            if bad:
                lines.append(f"Channel {c} ({block.channel_names[c]}) anomalous; "
                             f"type(s): {', '.join(b.capitalize() for b in bad)}.")
        if len(lines) == 1:
            lines.append("All segments classified normal.")

        if args.get("reconstruct", True):
            fixed = reconstruct(block, report)
            out_name = register_block(ctx, args.get("output", "Effective_monitoring_data"),
                                      fixed, "reconstructed monitoring data")
            produced.append(out_name)
            recheck = diagnose(fixed, float(args["interval_s"]), calib)
            art2 = ctx.artifacts.put_png(ctx.session_id,
                                         diagnosis_figure(fixed, recheck,
                                                          "Anomaly diagnosis (reconstructed data)"))
            artifacts.append(art2)
            lines.append(f"Reconstructed data stored in variable {out_name}.")
            leftover = sum(recheck.counts().values())
            lines.append("Re-diagnosis of the reconstruction: "
                         + ("all segments normal." if leftover == 0
                            else f"{leftover} segments still flagged."))
        return SkillOutput(message="\n".join(lines), produced=produced, artifacts=artifacts)
