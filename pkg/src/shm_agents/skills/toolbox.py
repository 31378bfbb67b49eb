"""Fixed analysis toolbox: Fourier spectrum, Morlet scalogram, Gaussian
mixture fitting, and declarative multi-panel figure rendering.

The node executes a list of tool calls whose arguments the LLM fills in;
the tool set is closed and every call is validated before execution, so no
model-authored code ever runs. Tool outputs are registered as variables, and
plot panels reference data only by variable name, which keeps figure specs
serializable and re-renderable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..errors import FatalError, ResolvableError
from .base import SkillContext, SkillNode, SkillOutput
from ..state.registry import AlgorithmCard, InputRequirement
from ..state.variables import VariableDescriptor

TOOLS = ("fft_spectrum", "cwt_scalogram", "fit_gmm", "render_plot")

MORLET_W0 = 6.0


# --- fft -----------------------------------------------------------------------

def fft_spectrum(signal: np.ndarray, fs: float, window: str = "rect",
                 band: Optional[tuple[float, float]] = None) -> tuple[np.ndarray, np.ndarray]:
    """One-sided magnitude spectrum (raw rfft magnitudes) within a band."""
    x = np.asarray(signal, dtype=float).ravel()
    if fs <= 0:
        raise ResolvableError("fs must be positive")
    lo, hi = band if band is not None else (0.0, fs / 2)
    if not (0 <= lo < hi <= fs / 2 + 1e-12):
        raise ResolvableError(f"band [{lo}, {hi}] must satisfy 0 <= lo < hi <= fs/2 = {fs/2}")
    if window == "hann":
        win = np.hanning(x.size)
    elif window == "rect":
        win = np.ones(x.size)
    else:
        raise ResolvableError(f"window must be rect or hann, got {window!r}")
    mags = np.abs(np.fft.rfft(x * win))
    freqs = np.fft.rfftfreq(x.size, d=1.0 / fs)
    mask = (freqs >= lo) & (freqs <= hi)
    return freqs[mask], mags[mask]


def band_power(freqs: np.ndarray, mags: np.ndarray, n_samples: int, fs: float) -> float:
    """Average signal power implied by one-sided rfft magnitudes."""
    w = np.full(freqs.size, 2.0)
    w[np.isclose(freqs, 0.0)] = 1.0
    if n_samples % 2 == 0:
        w[np.isclose(freqs, fs / 2)] = 1.0
    return float(np.sum(w * mags**2) / n_samples**2)


# --- cwt -----------------------------------------------------------------------

def cwt_scalogram(signal: np.ndarray, fs: float, band: tuple[float, float],
                  n_scales: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Morlet scalogram: log-spaced analysis frequencies covering the band,
    magnitude matrix (n_scales, n_samples)."""
    from scipy.signal import fftconvolve

    x = np.asarray(signal, dtype=float).ravel()
    if n_scales < 2:
        raise ResolvableError("n_scales must be at least 2")
    lo, hi = band
    if not (0 < lo < hi <= fs / 2 + 1e-12):
        raise ResolvableError(f"band [{lo}, {hi}] must lie inside (0, fs/2]")
    freqs = np.logspace(math.log10(lo), math.log10(hi), n_scales)
    mags = np.zeros((n_scales, x.size))
    for i, f in enumerate(freqs):
        s = MORLET_W0 * fs / (2 * math.pi * f)       # scale in samples
        half = int(min(5 * s, x.size))
        t = np.arange(-half, half + 1)
        psi = (math.pi ** -0.25) * np.exp(1j * MORLET_W0 * t / s) * np.exp(-0.5 * (t / s) ** 2)
        psi /= math.sqrt(s)
        mags[i] = np.abs(fftconvolve(x, np.conj(psi[::-1]), mode="same"))
    times = np.arange(x.size) / fs
    return times, freqs, mags


def ridge(mags: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Dominant analysis frequency at each time column."""
    return freqs[np.argmax(mags, axis=0)]


# --- gmm -----------------------------------------------------------------------

def fit_gmm(samples: np.ndarray, max_k: int) -> dict[str, Any]:
    """BIC-selected 1-d Gaussian mixture, components sorted by mean."""
    from sklearn.mixture import GaussianMixture

    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 10:
        raise ResolvableError("need at least 10 samples to fit a mixture")
    if max_k < 1:
        raise ResolvableError("max_k must be at least 1")
    X = x.reshape(-1, 1)
    bics: list[float] = []
    fits = []
    for k in range(1, max_k + 1):
        if x.size < 2 * k or np.unique(x).size < k:
            break
        gm = GaussianMixture(n_components=k, n_init=10, init_params="k-means++",
                             random_state=0).fit(X)
        fits.append(gm)
        bics.append(float(gm.bic(X)))
    best_i = int(np.argmin(bics))
    gm = fits[best_i]
    order = np.argsort(gm.means_[:, 0])
    weights = gm.weights_[order]
    means = gm.means_[order, 0]
    variances = gm.covariances_[order, 0, 0]
    warning = ""
    data_var = float(x.var())
    if data_var > 0:
        keep = variances >= 1e-12 * data_var
        if not keep.all() and keep.any():
            warning = (f"pruned {int((~keep).sum())} degenerate component(s) "
                       f"with variance < 1e-12 of the data variance")
            weights, means, variances = weights[keep], means[keep], variances[keep]
            weights = weights / weights.sum()
    return {
        "weights": weights.tolist(),
        "means": means.tolist(),
        "variances": variances.tolist(),
        "k": int(len(means)),
        "bic": bics[best_i],
        "bics": bics,
        "warning": warning,
    }


def gmm_pdf(x: np.ndarray, weights, means, variances) -> np.ndarray:
    out = np.zeros_like(np.asarray(x, dtype=float))
    for w, m, v in zip(weights, means, variances):
        out += w * np.exp(-0.5 * (x - m) ** 2 / v) / math.sqrt(2 * math.pi * v)
    return out


def gmm_cdf(x: np.ndarray, weights, means, variances) -> np.ndarray:
    from scipy.special import ndtr

    out = np.zeros_like(np.asarray(x, dtype=float))
    for w, m, v in zip(weights, means, variances):
        out += w * ndtr((x - m) / math.sqrt(v))
    return out


# --- plotting -------------------------------------------------------------------

PANEL_KINDS = ("line", "spectrum", "scalogram2d", "scalogram3d", "histogram_pdf_cdf")


@dataclass
class Panel:
    kind: str
    data: dict[str, str]
    grid: tuple[int, int, int, int]          # row, col, rowspan, colspan
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    options: dict[str, Any] = field(default_factory=dict)
    annotations: list[str] = field(default_factory=list)


@dataclass
class PlotSpec:
    width: float
    panels: list[Panel]
    rows: int = 1
    cols: int = 1
    height: Optional[float] = None
    align: list[dict[str, Any]] = field(default_factory=list)
    suptitle: str = ""

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "PlotSpec":
        if float(doc.get("width", 0)) <= 0:
            raise FatalError("plot spec needs width > 0")
        panels = []
        for p in doc.get("panels", []):
            kind = p.get("kind")
            if kind not in PANEL_KINDS:
                raise FatalError(f"unknown panel kind {kind!r}")
            grid = p.get("grid", [0, 0, 1, 1])
            panels.append(Panel(kind=kind, data=dict(p.get("data", {})),
                                grid=(int(grid[0]), int(grid[1]), int(grid[2]), int(grid[3])),
                                title=p.get("title", ""), xlabel=p.get("xlabel", ""),
                                ylabel=p.get("ylabel", ""), options=dict(p.get("options", {})),
                                annotations=list(p.get("annotations", []))))
        if not panels:
            raise FatalError("plot spec needs at least one panel")
        return cls(width=float(doc["width"]), panels=panels,
                   rows=int(doc.get("rows", 1)), cols=int(doc.get("cols", 1)),
                   height=float(doc["height"]) if doc.get("height") else None,
                   align=list(doc.get("align", [])), suptitle=doc.get("suptitle", ""))


def render_plot(spec: PlotSpec, resolve) -> bytes:
    """Render a PlotSpec to PNG bytes. `resolve(name)` returns the payload of
    a data reference; a missing reference is fatal."""
    import matplotlib.pyplot as plt
    from matplotlib.gridspec import GridSpec

    from .plotting import fig_to_png, style_context

    height = spec.height if spec.height else max(spec.width * 0.55, 2.2)
    with style_context():
        fig = plt.figure(figsize=(spec.width, height))
        gs = GridSpec(spec.rows, spec.cols, figure=fig)
        fig.subplots_adjust(left=0.12, right=0.95, bottom=0.13, top=0.88,
                            wspace=0.45, hspace=0.5)
        axes = []
        for panel in spec.panels:
            r, c, rs, cs = panel.grid
            if panel.kind == "scalogram3d":
                ax = fig.add_subplot(gs[r:r + rs, c:c + cs], projection="3d")
            else:
                ax = fig.add_subplot(gs[r:r + rs, c:c + cs])
            axes.append(ax)
            _render_panel(fig, ax, panel, resolve)
        if spec.suptitle:
            fig.suptitle(spec.suptitle)
        return fig_to_png(fig)


def _render_panel(fig, ax, panel: Panel, resolve) -> None:
    opts = panel.options
    if panel.kind == "line":
        y = np.asarray(resolve(panel.data["y"]), dtype=float).ravel()
        if "x" in panel.data:
            x = np.asarray(resolve(panel.data["x"]), dtype=float).ravel()
        else:
            fs = float(opts.get("fs", 1.0))
            x = np.arange(y.size) / fs
        ax.plot(x, y, color="tab:blue", lw=0.7)
    elif panel.kind == "spectrum":
        freqs = np.asarray(resolve(panel.data["freqs"]), dtype=float).ravel()
        mags = np.asarray(resolve(panel.data["mags"]), dtype=float).ravel()
        if opts.get("vertical"):
            ax.plot(mags, freqs, color="tab:green", lw=0.7)
            if opts.get("invert_x"):
                ax.invert_xaxis()
        else:
            ax.plot(freqs, mags, color="tab:green", lw=0.7)
    elif panel.kind in ("scalogram2d", "scalogram3d"):
        times = np.asarray(resolve(panel.data["times"]), dtype=float).ravel()
        freqs = np.asarray(resolve(panel.data["freqs"]), dtype=float).ravel()
        mags = np.asarray(resolve(panel.data["mags"]), dtype=float)
        if mags.shape != (freqs.size, times.size):
            raise FatalError("scalogram magnitude matrix must be (n_freqs, n_times)")
        if panel.kind == "scalogram2d":
            mesh = ax.pcolormesh(times, freqs, mags, shading="auto", cmap="viridis",
                                 rasterized=True)
            if opts.get("colorbar", False):
                fig.colorbar(mesh, ax=ax, pad=0.02, fraction=0.08)
        else:
            stride = max(1, times.size // 200)
            T, F = np.meshgrid(times[::stride], freqs)
            ax.plot_surface(T, F, mags[:, ::stride], cmap="viridis",
                            linewidth=0, antialiased=False)
    elif panel.kind == "histogram_pdf_cdf":
        samples = np.asarray(resolve(panel.data["samples"]), dtype=float).ravel()
        rows = resolve(panel.data["mixture"])
        weights = [float(r["weight"]) for r in rows]
        means = [float(r["mean"]) for r in rows]
        variances = [float(r["variance"]) for r in rows]
        ax.hist(samples, bins=40, density=True, color="0.8", edgecolor="0.5")
        grid = np.linspace(samples.min(), samples.max(), 400)
        ax.plot(grid, gmm_pdf(grid, weights, means, variances),
                color="tab:blue", lw=1.2, label="pdf")
        ax2 = ax.twinx()
        ax2.plot(grid, gmm_cdf(grid, weights, means, variances),
                 color="tab:orange", lw=1.0, ls="--", label="cdf")
        ax2.set_ylabel("cdf")
        ax2.set_ylim(0, 1.05)
        text = "\n".join(
            f"comp {i + 1}: w={w:.3f}, mean={m:.3f}, var={v:.3f}"
            for i, (w, m, v) in enumerate(zip(weights, means, variances)))
        ax.text(0.02, 0.98, text, transform=ax.transAxes, va="top", fontsize=6,
                bbox={"boxstyle": "round", "fc": "white", "alpha": 0.8, "lw": 0.5})
    if panel.title:
        ax.set_title(panel.title)
    if panel.xlabel:
        ax.set_xlabel(panel.xlabel)
    if panel.ylabel:
        ax.set_ylabel(panel.ylabel)
    if opts.get("hide_x_ticks"):
        ax.set_xticks([])
        ax.set_xlabel("")
    if opts.get("hide_y_ticks"):
        ax.set_yticks([])
        ax.set_ylabel("")
    for note in panel.annotations:
        ax.annotate(note, xy=(0.02, 0.02), xycoords="axes fraction", fontsize=6)


# --- node ------------------------------------------------------------------------

class ToolboxNode(SkillNode):
    name = "toolbox"
    args_schema = {
        "type": "object",
        "properties": {
            "calls": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {
                        "tool": {"type": "string", "enum": list(TOOLS)},
                        "args": {"type": "object"},
                        "input_variable": {"type": "string"},
                        "save_as": {"type": "string"},
                    },
                    "required": ["tool"],
                    "additionalProperties": False,
                },
            },
        },
        "required": ["calls"],
        "additionalProperties": False,
    }

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Simple analysis toolbox for tasks outside the specialist nodes: "
                     "Fourier spectrum, Morlet wavelet scalogram, multi-modal normal "
                     "(Gaussian mixture) distribution fitting, and multi-panel figure "
                     "rendering with axis-alignment control.",
            input_requirements=[
                InputRequirement("calls", "ordered tool calls", "list", ""),
                InputRequirement("input_variable", "per call: source variable", "", ""),
            ],
            input_example='{"calls": [{"tool": "fft_spectrum", "input_variable": "signal", '
                          '"args": {"band": [0, 1]}, "save_as": "fft"}]}',
            output_example="registered spectrum/scalogram/mixture variables and a figure",
        )

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        produced: list[str] = []
        artifacts: list[str] = []
        notes: list[str] = []
        for call in args["calls"]:
            tool = call["tool"]
            if tool not in TOOLS:
                raise FatalError(f"tool {tool!r} is not in the toolbox")
            targs = call.get("args", {})
            if tool == "fft_spectrum":
                x, fs = self._signal(ctx, call)
                band = tuple(targs.get("band", (0.0, fs / 2)))
                freqs, mags = fft_spectrum(x, fs, targs.get("window", "rect"), band)
                base = call.get("save_as", "fft")
                produced.append(self._reg(ctx, f"{base}_freqs", freqs, "spectrum frequencies [Hz]"))
                produced.append(self._reg(ctx, f"{base}_mags", mags, "spectrum magnitudes"))
                notes.append(f"fft_spectrum: {freqs.size} lines in [{band[0]:g}, {band[1]:g}] Hz")
            elif tool == "cwt_scalogram":
                x, fs = self._signal(ctx, call)
                band = tuple(targs.get("band", (fs / 256, fs / 2)))
                n_scales = int(targs.get("n_scales", 48))
                times, freqs, mags = cwt_scalogram(x, fs, band, n_scales)
                base = call.get("save_as", "cwt")
                produced.append(self._reg(ctx, f"{base}_times", times, "scalogram times [s]"))
                produced.append(self._reg(ctx, f"{base}_freqs", freqs, "scalogram frequencies [Hz]"))
                produced.append(self._reg(ctx, f"{base}_mags", mags, "scalogram magnitudes"))
                notes.append(f"cwt_scalogram: {n_scales} scales over [{band[0]:g}, {band[1]:g}] Hz")
            elif tool == "fit_gmm":
                x, _ = self._signal(ctx, call)
                result = fit_gmm(x, int(targs.get("max_k", 3)))
                base = call.get("save_as", "gmm")
                rows = [{"weight": w, "mean": m, "variance": v}
                        for w, m, v in zip(result["weights"], result["means"],
                                           result["variances"])]
                name = ctx.datastore.register(
                    VariableDescriptor(name=base, dtype="record-table",
                                       description=f"gaussian mixture fit, k={result['k']}, "
                                                   f"bic={result['bic']:.1f}",
                                       shape=[len(rows)]), rows)
                produced.append(name)
                notes.append(f"fit_gmm: k={result['k']}"
                             + (f" ({result['warning']})" if result["warning"] else ""))
            else:  # render_plot
                spec = PlotSpec.from_json(targs)
                png = render_plot(spec, lambda ref: ctx.datastore.get(ref))
                artifacts.append(ctx.artifacts.put_png(ctx.session_id, png))
                notes.append(f"render_plot: {len(spec.panels)} panel(s), width {spec.width:g}")
        message = "Toolbox run finished.\n" + "\n".join(f"- {n}" for n in notes)
        if produced:
            message += "\nRegistered variables: " + ", ".join(produced) + "."
        return SkillOutput(message=message, produced=produced, artifacts=artifacts)

    def _signal(self, ctx: SkillContext, call: dict[str, Any]) -> tuple[np.ndarray, float]:
        name = call.get("input_variable")
        if not name:
            raise ResolvableError(f"tool {call['tool']} needs input_variable")
        var = ctx.datastore.fetch(name)
        if var.descriptor.dtype not in ("f64", "i64"):
            raise ResolvableError(f"variable {name!r} is not numeric")
        x = np.asarray(var.payload, dtype=float).ravel()
        meta = ctx.extras.get("block_meta", {}).get(name, {})
        fs = float(call.get("args", {}).get("fs", meta.get("fs", 50.0)))
        return x, fs

    def _reg(self, ctx: SkillContext, name: str, arr: np.ndarray, description: str) -> str:
        arr = np.asarray(arr, dtype=float)
        return ctx.datastore.register(
            VariableDescriptor(name=name, dtype="f64", description=description,
                               shape=list(arr.shape)), arr)
