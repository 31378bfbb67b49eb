"""Operational modal analysis by frequency-domain decomposition.

The cross-spectral density matrix is estimated with Welch averaging
(Hann window, 50% overlap, segment length 2^ceil(log2(fs*100)) capped at a
quarter of the record), decomposed by SVD per frequency line, and modes are
picked as peaks of the first singular value at least 6 dB above its local
median. Shapes come from the first singular vector at each peak; damping
from half-power bandwidth, which is known to be coarse for close modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..errors import ResolvableError
from ..signals import TimeSeriesBlock
from .base import SkillContext, SkillNode, SkillOutput, require_block
from ..state.registry import AlgorithmCard, InputRequirement
from ..state.variables import VariableDescriptor

DAMPING_MIN, DAMPING_MAX = 1e-4, 0.1999
PEAK_PROMINENCE_DB = 6.0


@dataclass
class ModalEstimate:
    frequencies: np.ndarray        # Hz, strictly increasing
    damping_ratios: np.ndarray
    mode_shapes: np.ndarray        # modes x channels, unit 2-norm, max component positive

    def __post_init__(self) -> None:
        f = np.asarray(self.frequencies, dtype=float)
        if f.size and not np.all(np.diff(f) > 0):
            raise ValueError("frequencies must be strictly increasing")
        if f.size and f[0] <= 0:
            raise ValueError("frequencies must be positive")

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)


@dataclass
class ModalTimeline:
    interval_s: float
    timestamps: np.ndarray         # interval start times, s
    frequencies: np.ndarray        # intervals x modes, NaN where unmatched
    damping_ratios: np.ndarray


def mac(a: np.ndarray, b: np.ndarray) -> float:
    """Modal assurance criterion between two shape vectors."""
    num = float(np.dot(a, b)) ** 2
    den = float(np.dot(a, a)) * float(np.dot(b, b))
    return num / den if den > 0 else 0.0


def welch_nperseg(fs: float, n_samples: int) -> int:
    target = 2 ** int(np.ceil(np.log2(fs * 100.0)))
    return int(min(target, n_samples // 4))


def csd_matrix(block: TimeSeriesBlock, nperseg: int) -> tuple[np.ndarray, np.ndarray]:
    """One-sided cross-spectral density matrix, shape (n_freq, ch, ch).

    Single batched segmented FFT over all channels; absolute scaling is
    irrelevant downstream (peaks, singular vectors, bandwidth ratios)."""
    data = block.data - block.data.mean(axis=1, keepdims=True)
    step = nperseg // 2
    n_seg = max((block.n_samples - nperseg) // step + 1, 1)
    window = np.hanning(nperseg)
    segs = np.stack([data[:, i * step:i * step + nperseg] * window for i in range(n_seg)])
    X = np.fft.rfft(segs, axis=2)            # (n_seg, ch, n_freq)
    S = np.einsum("sif,sjf->fij", X, np.conj(X)) / n_seg
    freqs = np.fft.rfftfreq(nperseg, d=1.0 / block.fs)
    return freqs, S


def _local_median_db(s1_db: np.ndarray, half_width: int) -> np.ndarray:
    out = np.empty_like(s1_db)
    n = s1_db.size
    for i in range(n):
        lo, hi = max(0, i - half_width), min(n, i + half_width + 1)
        out[i] = np.median(s1_db[lo:hi])
    return out


def _half_power_damping(freqs: np.ndarray, s1: np.ndarray, peak: int) -> float:
    half = s1[peak] / 2.0
    f_lo = freqs[max(peak - 1, 0)]
    for i in range(peak - 1, -1, -1):
        if s1[i] < half:
            frac = (half - s1[i]) / (s1[i + 1] - s1[i])
            f_lo = freqs[i] + frac * (freqs[i + 1] - freqs[i])
            break
    else:
        f_lo = freqs[0]
    f_hi = freqs[min(peak + 1, s1.size - 1)]
    for i in range(peak + 1, s1.size):
        if s1[i] < half:
            frac = (s1[i - 1] - half) / (s1[i - 1] - s1[i])
            f_hi = freqs[i - 1] + frac * (freqs[i] - freqs[i - 1])
            break
    else:
        f_hi = freqs[-1]
    zeta = (f_hi - f_lo) / (2.0 * freqs[peak]) if freqs[peak] > 0 else DAMPING_MIN
    return float(np.clip(zeta, DAMPING_MIN, DAMPING_MAX))


def _lobe_centroid(freqs: np.ndarray, s1: np.ndarray, peak: int, max_span: int = 20) -> float:
    """Power-weighted centroid of the half-power lobe around a peak bin;
    much lower variance than the raw argmax when averages are few."""
    half = s1[peak] / 2.0
    lo = peak
    while lo > 0 and peak - lo < max_span and s1[lo - 1] > half:
        lo -= 1
    hi = peak
    while hi < s1.size - 1 and hi - peak < max_span and s1[hi + 1] > half:
        hi += 1
    w = s1[lo:hi + 1]
    return float(np.sum(freqs[lo:hi + 1] * w) / np.sum(w))


def _realize_shape(vec: np.ndarray) -> np.ndarray:
    """Complex singular vector -> real unit shape, largest component positive."""
    pivot = int(np.argmax(np.abs(vec)))
    rotated = np.real(vec * np.exp(-1j * np.angle(vec[pivot])))
    norm = np.linalg.norm(rotated)
    if norm > 0:
        rotated = rotated / norm
    if rotated[int(np.argmax(np.abs(rotated)))] < 0:
        rotated = -rotated
    return rotated


def fdd_identify(block: TimeSeriesBlock, n_modes: int,
                 f_min: Optional[float] = None,
                 f_max: Optional[float] = None) -> ModalEstimate:
    if block.n_channels < 2:
        raise ResolvableError("modal identification needs at least 2 channels")
    if n_modes < 1:
        raise ResolvableError("n_modes must be at least 1")
    if f_min is not None and block.duration < 200.0 / f_min:
        raise ResolvableError(
            f"record of {block.duration:g} s is too short to resolve {f_min:g} Hz; "
            f"need at least {200.0 / f_min:g} s (200 periods of the lowest mode)")
    nperseg = welch_nperseg(block.fs, block.n_samples)
    if nperseg < 16:
        raise ResolvableError("record too short for spectral estimation")
    freqs, S = csd_matrix(block, nperseg)
    svals = np.linalg.svd(S, compute_uv=False)    # (n_freq, ch), descending
    s1 = svals[:, 0]

    lo = f_min if f_min is not None else freqs[1]
    hi = f_max if f_max is not None else block.fs / 2
    in_band = (freqs >= lo) & (freqs <= hi) & (freqs > 0)
    band_idx = np.nonzero(in_band)[0]
    if band_idx.size < 5:
        raise ResolvableError("analysis band holds too few frequency lines")

    # smooth for selection only; noise wiggles on resonance skirts must not
    # count as separate peaks when few Welch averages are available
    win = 5
    kernel = np.ones(win) / win
    s1s = np.convolve(s1, kernel, mode="same")
    s1s_db = 10.0 * np.log10(np.maximum(s1s, 1e-300))
    med_db = _local_median_db(s1s_db, half_width=max(10, band_idx.size // 20))
    # prewhiten by the local median so peak height is measured against the
    # local floor; otherwise the omega^-4 rolloff buries higher modes under
    # the skirts of lower ones
    ratio = 10.0 ** ((s1s_db - med_db) / 10.0)
    floor_gate = 10.0 ** (PEAK_PROMINENCE_DB / 10.0)

    masked = np.where(in_band, ratio, 0.0)
    top: list[int] = []
    while len(top) < n_modes:
        i = int(np.argmax(masked))
        if masked[i] < floor_gate:
            break
        # suppress the contiguous lobe down to 3 dB above the local floor
        j = i
        while j >= 0 and ratio[j] > 2.0:
            masked[j] = 0.0
            j -= 1
        j = i + 1
        while j < ratio.size and ratio[j] > 2.0:
            masked[j] = 0.0
            j += 1
        # refine to the raw-spectrum maximum near the smoothed peak
        lo_i, hi_i = max(i - win, 0), min(i + win + 1, s1.size)
        top.append(lo_i + int(np.argmax(s1[lo_i:hi_i])))
    top = sorted(set(top))
    if len(top) < n_modes:
        raise ResolvableError(
            f"found {len(top)} spectral peak(s), fewer than the {n_modes} requested")

    shapes = []
    freqs_out, damps = [], []
    for peak in top:
        _, _, Vh = np.linalg.svd(S[peak])
        shapes.append(_realize_shape(np.conj(Vh[0])))
        freqs_out.append(_lobe_centroid(freqs, s1, peak))
        damps.append(_half_power_damping(freqs, s1, peak))
    order = np.argsort(freqs_out)
    freqs_arr = np.asarray(freqs_out)[order]
    if np.any(np.diff(freqs_arr) <= 0):
        raise ResolvableError("picked peaks collapsed onto the same frequency")
    return ModalEstimate(frequencies=freqs_arr,
                         damping_ratios=np.asarray(damps)[order],
                         mode_shapes=np.asarray(shapes)[order])


def track_modal(block: TimeSeriesBlock, interval_s: float, n_modes: int,
                f_min: Optional[float] = None) -> ModalTimeline:
    if f_min is not None and interval_s < 200.0 / f_min:
        raise ResolvableError(
            f"interval of {interval_s:g} s cannot resolve {f_min:g} Hz; "
            f"need at least {200.0 / f_min:g} s per interval")
    seg_len = int(round(interval_s * block.fs))
    n_int = block.n_samples // seg_len
    if n_int < 1:
        raise ResolvableError("interval longer than the record")
    freq_grid = np.full((n_int, n_modes), np.nan)
    damp_grid = np.full((n_int, n_modes), np.nan)
    reference: Optional[ModalEstimate] = None
    for k in range(n_int):
        sub = TimeSeriesBlock(
            data=block.data[:, k * seg_len:(k + 1) * seg_len].copy(),
            fs=block.fs,
            start_time=block.start_time + k * interval_s,
            channel_names=list(block.channel_names),
        )
        try:
            est = fdd_identify(sub, n_modes, f_min=f_min)
        except ResolvableError:
            continue
        if reference is None:
            reference = est
            freq_grid[k] = est.frequencies
            damp_grid[k] = est.damping_ratios
            continue
        for m in range(n_modes):
            best, best_df = None, np.inf
            for j in range(est.n_modes):
                if mac(reference.mode_shapes[m], est.mode_shapes[j]) < 0.8:
                    continue
                df = abs(est.frequencies[j] - reference.frequencies[m])
                if df < best_df:
                    best, best_df = j, df
            if best is not None:
                freq_grid[k, m] = est.frequencies[best]
                damp_grid[k, m] = est.damping_ratios[best]
    timestamps = block.start_time + np.arange(n_int) * interval_s
    return ModalTimeline(interval_s=interval_s, timestamps=timestamps,
                         frequencies=freq_grid, damping_ratios=damp_grid)


# --- figures --------------------------------------------------------------------

def mode_shape_figure(est: ModalEstimate, x_coords: Optional[np.ndarray],
                      channel_names: list[str]) -> bytes:
    import matplotlib.pyplot as plt

    from .plotting import fig_to_png, style_context

    x = np.asarray(x_coords if x_coords is not None else np.arange(est.mode_shapes.shape[1]),
                   dtype=float)
    with style_context():
        fig, axes = plt.subplots(est.n_modes, 1, figsize=(6, 1.8 * est.n_modes),
                                 squeeze=False, sharex=True)
        for k in range(est.n_modes):
            ax = axes[k][0]
            ax.plot(x, est.mode_shapes[k], "o-", color="tab:blue", ms=3)
            ax.axhline(0.0, color="0.6", lw=0.5)
            ax.set_title(f"mode {k + 1}: f = {est.frequencies[k]:.3f} Hz, "
                         f"damping = {est.damping_ratios[k]:.3f}")
        axes[-1][0].set_xlabel("sensor position x [m]")
        fig.tight_layout()
        return fig_to_png(fig)


def timeline_figure(tl: ModalTimeline) -> bytes:
    import matplotlib.pyplot as plt

    from .plotting import fig_to_png, style_context

    t = tl.timestamps - tl.timestamps[0]
    with style_context():
        fig, (ax_f, ax_d) = plt.subplots(2, 1, figsize=(6, 4), sharex=True)
        for m in range(tl.frequencies.shape[1]):
            ax_f.plot(t, tl.frequencies[:, m], "o-", ms=3, label=f"mode {m + 1}")
            ax_d.plot(t, tl.damping_ratios[:, m], "o-", ms=3)
        ax_f.set_ylabel("frequency [Hz]")
        ax_f.legend(loc="best")
        ax_d.set_ylabel("damping ratio")
        ax_d.set_xlabel("time [s]")
        fig.tight_layout()
        return fig_to_png(fig)


# --- node ------------------------------------------------------------------------

ORDINALS = ("1st", "2nd", "3rd") + tuple(f"{k}th" for k in range(4, 40))


class ModalNode(SkillNode):
    name = "modal"
    args_schema = {
        "type": "object",
        "properties": {
            "variable": {"type": "string"},
            "n_modes": {"type": "integer", "minimum": 1},
            "mode": {"type": "string", "enum": ["identify", "track"]},
            "interval_s": {"type": "number", "exclusiveMinimum": 0},
            "f_min": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["variable", "n_modes"],
        "additionalProperties": False,
    }

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Identification of structural modal parameters (frequencies, damping "
                     "ratios, mode shapes) from monitoring data, either for the whole record "
                     "or tracked over fixed time intervals.",
            input_requirements=[
                InputRequirement("variable", "monitoring data", ">=2 channels x samples", "acceleration"),
                InputRequirement("n_modes", "number of modes to identify", "scalar", ""),
                InputRequirement("interval_s", "tracking interval (track mode only)", "scalar", "seconds"),
            ],
            input_example='{"variable": "Effective_monitoring_data", "n_modes": 3}',
            output_example='frequencies/damping per mode, mode-shape figure, results table',
        )

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        block = require_block(ctx, args["variable"])
        n_modes = int(args["n_modes"])
        f_min = args.get("f_min")
        if f_min is None and ctx.config is not None:
            f_min = ctx.config.modal_f_min
        if args.get("mode", "identify") == "track":
            if "interval_s" not in args:
                raise ResolvableError("track mode needs interval_s")
            tl = track_modal(block, float(args["interval_s"]), n_modes, f_min=f_min)
            art = ctx.artifacts.put_png(ctx.session_id, timeline_figure(tl))
            rows = []
            for k in range(tl.frequencies.shape[0]):
                for m in range(n_modes):
                    rows.append({
                        "t_start_s": float(tl.timestamps[k] - tl.timestamps[0]),
                        "mode": float(m + 1),
                        "frequency_hz": float(tl.frequencies[k, m]),
                        "damping_ratio": float(tl.damping_ratios[k, m]),
                    })
            name = ctx.datastore.register(
                VariableDescriptor(name="Modal_timeline", dtype="record-table",
                                   description="tracked modal parameters per interval",
                                   shape=[len(rows)]), rows)
            found = int(np.sum(~np.isnan(tl.frequencies[:, 0])))
            msg = (f"Long-term modal tracking finished: {tl.frequencies.shape[0]} intervals of "
                   f"{args['interval_s']:g} s, {found} with a matched first mode. "
                   f"Results stored in {name}.")
            return SkillOutput(message=msg, produced=[name], artifacts=[art])

        est = fdd_identify(block, n_modes, f_min=f_min)
        x_coords = None
        if ctx.config is not None and ctx.config.fe_model is not None:
            model = ctx.config.fe_model
            if len(model.sensors) == est.mode_shapes.shape[1]:
                x_coords = np.array([model.node(s.node).x for s in model.sensors])
        art = ctx.artifacts.put_png(ctx.session_id,
                                    mode_shape_figure(est, x_coords, block.channel_names))
        rows = [{"mode": float(k + 1),
                 "frequency_hz": float(est.frequencies[k]),
                 "damping_ratio": float(est.damping_ratios[k])}
                for k in range(est.n_modes)]
        name = ctx.datastore.register(
            VariableDescriptor(name="Modal_identification_results", dtype="record-table",
                               description="identified modal parameters",
                               shape=[len(rows)]), rows)
        lines = ["Modal parameter identification finished. Results:"]
        for k in range(est.n_modes):
            lines.append(f"-{ORDINALS[k]} Order Frequency: {est.frequencies[k]:.3f}, "
                         f"Damping Ratio: {est.damping_ratios[k]:.3f}")
        lines.append(f"Detailed results stored in {name}; the mode-shape figure is attached.")
        return SkillOutput(message="\n".join(lines), produced=[name], artifacts=[art])
