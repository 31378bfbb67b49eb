"""Synthetic demo bridge: surrogate model, data generators, fixtures.

A parameterized 3-span cable-stayed surrogate (60+120+60 m deck, fan
cables to fixed anchor points above the pylons) stands in for a real
structure. All geometry and statistics here are invented; generators are
deterministic under their seeds. Eleven accelerometers sample at 50 Hz.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import signal as sps

from .fe import (
    BeamElement,
    CableElement,
    Lane,
    Node,
    Sensor,
    StructuralModel,
    Support,
    assemble,
    modal_analysis,
)
from .signals import TimeSeriesBlock
from .skills.anomaly import LABELS
from .skills.traffic import WimRecord, dump_wim_csv

FS_HZ = 50.0
N_ACCELEROMETERS = 11

DECK_SPACING_M = 6.0
SPANS_M = (60.0, 120.0, 60.0)
TOWER_HEIGHT_M = 40.0

DECK_E = 2.1e11
DECK_I = 0.15
DECK_A = 2.6
DECK_RHO = 7850.0

STRAND_AREA_M2 = 140e-6                 # single 15.2 mm strand
STRANDS_PER_CABLE = 12
CABLE_E = 1.95e11                       # strand modulus, 1.95e5 MPa
CABLE_TENSION_N = 0.9e6

LANE_NAMES = tuple(f"lane{i}" for i in range(1, 7))


def build_demo_model() -> StructuralModel:
    total = sum(SPANS_M)
    n_deck = int(round(total / DECK_SPACING_M)) + 1
    nodes = [Node(i, i * DECK_SPACING_M, 0.0) for i in range(n_deck)]
    beams = [BeamElement(i, i + 1, DECK_E, DECK_I, DECK_A, DECK_RHO)
             for i in range(n_deck - 1)]
    pier1 = int(round(SPANS_M[0] / DECK_SPACING_M))
    pier2 = int(round((SPANS_M[0] + SPANS_M[1]) / DECK_SPACING_M))
    anchor1 = Node(1000, nodes[pier1].x, TOWER_HEIGHT_M)
    anchor2 = Node(1001, nodes[pier2].x, TOWER_HEIGHT_M)
    nodes.extend([anchor1, anchor2])

    cable_area = STRAND_AREA_M2 * STRANDS_PER_CABLE
    cable_ea = CABLE_E * cable_area
    cables = []
    fan1 = (2, 4, 6, 8, 13, 16, 19)
    fan2 = (n_deck - 3, n_deck - 5, n_deck - 7, n_deck - 9,
            n_deck - 14, n_deck - 17, n_deck - 20)
    for deck_idx in fan1:
        cables.append(CableElement(anchor1.id, deck_idx, cable_ea, cable_area, CABLE_TENSION_N))
    for deck_idx in fan2:
        cables.append(CableElement(anchor2.id, deck_idx, cable_ea, cable_area, CABLE_TENSION_N))

    supports = [
        Support(0, ["ux", "uy"]),
        Support(pier1, ["uy"]),
        Support(pier2, ["uy"]),
        Support(n_deck - 1, ["uy"]),
        Support(anchor1.id, ["ux", "uy", "rz"]),
        Support(anchor2.id, ["ux", "uy", "rz"]),
    ]
    lanes = [Lane(name, list(range(n_deck))) for name in LANE_NAMES]
    sensor_idx = np.unique(np.round(np.linspace(2, n_deck - 3, N_ACCELEROMETERS)).astype(int))
    sensors = [Sensor(f"A{k + 1:02d}", int(i), "uy") for k, i in enumerate(sensor_idx)]
    mid = int(round((SPANS_M[0] + SPANS_M[1] / 2) / DECK_SPACING_M))
    sensors.append(Sensor("mid_span", mid, "uy"))

    model = StructuralModel(nodes=nodes, beam_elements=beams, cable_elements=cables,
                            supports=supports, lanes=lanes, sensors=sensors)
    # Rayleigh damping for ~1% at the first and third modes
    sys = assemble(model)
    freqs, _ = modal_analysis(sys, 3)
    w1, w3 = 2 * np.pi * freqs[0], 2 * np.pi * freqs[-1]
    zeta = 0.01
    model.damping_alpha = float(2 * zeta * w1 * w3 / (w1 + w3))
    model.damping_beta = float(2 * zeta / (w1 + w3))
    return model


# --- monitoring data -----------------------------------------------------------

@dataclass
class AnomalyPlan:
    interval_s: float
    cells: list[tuple[int, int, str]] = field(default_factory=list)   # (channel, segment, label)

    def truth_grid(self, n_channels: int, n_segments: int) -> np.ndarray:
        grid = np.full((n_channels, n_segments), "normal", dtype=object)
        for c, s, label in self.cells:
            grid[c, s] = label
        return grid


def generate_monitoring_data(model: StructuralModel, duration_s: float, seed: int = 0,
                             anomaly_plan: Optional[AnomalyPlan] = None,
                             n_modes: int = 3, noise_frac: float = 0.05,
                             fs: float = FS_HZ) -> tuple[TimeSeriesBlock, Optional[np.ndarray]]:
    """Acceleration at the accelerometer sensors by modal superposition under
    broadband excitation; optionally injects labeled anomalies and returns
    the ground-truth grid alongside."""
    sys = assemble(model)
    freqs, shapes = modal_analysis(sys, n_modes)
    accel_sensors = [s for s in model.sensors if s.name.startswith("A")]
    rows = [model.dof_index(s.node, s.dof) for s in accel_sensors]
    phi = shapes[:, rows]                          # modes x sensors
    # normalize per mode so every mode contributes visibly at the sensors
    norms = np.linalg.norm(phi, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    phi = phi / norms

    n = int(round(duration_s * fs))
    rng = np.random.default_rng(seed)
    q = np.zeros((len(freqs), n))
    for i, f in enumerate(freqs):
        w = 2 * np.pi * f
        zeta = 0.5 * (model.damping_alpha / w + model.damping_beta * w)
        zeta = min(max(zeta, 1e-4), 0.2)
        A = np.array([[0.0, 1.0], [-w * w, -2 * zeta * w]])
        B = np.array([[0.0], [1.0]])
        C = np.array([[-w * w, -2 * zeta * w]])    # acceleration output
        D = np.array([[1.0]])
        Ad, Bd, Cd, Dd, _ = sps.cont2discrete((A, B, C, D), 1.0 / fs)
        num, den = sps.ss2tf(Ad, Bd, Cd, Dd)
        participation = 1.0 / (i + 1.0)
        q[i] = sps.lfilter(num[0], den, rng.standard_normal(n)) * participation
    y = phi.T @ q
    scale = np.std(y)
    if scale > 0:
        y = y / scale * 0.05                       # ~0.05 m/s^2 rms overall
    y = y + noise_frac * y.std() * rng.standard_normal(y.shape)

    block = TimeSeriesBlock(data=y, fs=fs, start_time=0.0,
                            channel_names=[s.name for s in accel_sensors])
    truth = None
    if anomaly_plan is not None:
        truth = inject_anomalies(block, anomaly_plan, rng)
    return block, truth


def inject_anomalies(block: TimeSeriesBlock, plan: AnomalyPlan,
                     rng: np.random.Generator) -> np.ndarray:
    seg_len = int(round(plan.interval_s * block.fs))
    n_segments = block.n_samples // seg_len
    for channel, segment, label in plan.cells:
        if label not in LABELS:
            raise ValueError(f"unknown anomaly label {label!r}")
        if label == "normal":
            continue
        sl = slice(segment * seg_len, (segment + 1) * seg_len)
        x = block.data[channel, sl]
        sigma = float(np.std(x)) or 1.0
        t = np.arange(x.size) / block.fs
        if label == "missing":
            block.data[channel, sl] = np.nan
        elif label == "minor":
            block.data[channel, sl] = x * 0.02
        elif label == "outlier":
            spikes = rng.integers(3, 7)
            idx = rng.choice(x.size, size=spikes, replace=False)
            x[idx] += rng.choice([-1.0, 1.0], size=spikes) * (8.0 + 4.0 * rng.random(spikes)) * sigma
        elif label == "square":
            f = 0.5 + 1.5 * rng.random()
            block.data[channel, sl] = 3.0 * sigma * np.sign(
                np.sin(2 * np.pi * f * t + rng.random() * 2 * np.pi))
        elif label == "trend":
            amp = (6.0 + 4.0 * rng.random()) * sigma * rng.choice([-1.0, 1.0])
            x += amp * (t / t[-1])
        elif label == "drift":
            cycles = 1.5 + 1.0 * rng.random()
            amp = (4.0 + 4.0 * rng.random()) * sigma
            x += amp * np.sin(2 * np.pi * cycles * t / t[-1] + rng.random() * 2 * np.pi)
    return plan.truth_grid(block.n_channels, n_segments)


# --- WIM records ------------------------------------------------------------------

DEMO_CLASS_STATS = {
    2: {"freq": 0.45, "gvw": [(1.0, 30.0, 8.0)], "spacings": [3.2], "speed": (24.0, 3.0)},
    3: {"freq": 0.20, "gvw": [(1.0, 90.0, 20.0)], "spacings": [4.2, 1.4], "speed": (22.0, 2.5)},
    4: {"freq": 0.15, "gvw": [(0.5, 140.0, 25.0), (0.5, 250.0, 30.0)],
        "spacings": [3.8, 6.0, 1.3], "speed": (21.0, 2.5)},
    5: {"freq": 0.12, "gvw": [(0.45, 180.0, 30.0), (0.55, 360.0, 40.0)],
        "spacings": [3.4, 6.8, 1.3, 1.3], "speed": (20.0, 2.0)},
    6: {"freq": 0.08, "gvw": [(0.4, 200.0, 35.0), (0.6, 420.0, 45.0)],
        "spacings": [3.2, 1.4, 6.5, 1.3, 1.3], "speed": (19.0, 2.0)},
}

LANE_WEIGHTS = (0.25, 0.18, 0.07, 0.07, 0.18, 0.25)
TOTAL_RATE_VEH_S = 0.3


def generate_wim(n_records: int, seed: int = 0) -> list[WimRecord]:
    rng = np.random.default_rng(seed)
    classes = sorted(DEMO_CLASS_STATS)
    freqs = np.array([DEMO_CLASS_STATS[c]["freq"] for c in classes])
    freqs = freqs / freqs.sum()
    lane_p = np.array(LANE_WEIGHTS) / sum(LANE_WEIGHTS)
    span = n_records / TOTAL_RATE_VEH_S if n_records else 1.0
    timestamps = np.sort(rng.uniform(0.0, span, n_records))
    records = []
    for ts in timestamps:
        cls = int(rng.choice(classes, p=freqs))
        stats = DEMO_CLASS_STATS[cls]
        comps = stats["gvw"]
        weights = np.array([w for w, _, _ in comps])
        ci = rng.choice(len(comps), p=weights / weights.sum())
        _, mu, sd = comps[ci]
        gvw = max(float(rng.normal(mu, sd)), 5.0)
        fracs = rng.dirichlet(np.full(cls, 12.0))
        axles = [gvw * f for f in fracs[:-1]]
        axles.append(gvw - sum(axles))
        lane = LANE_NAMES[rng.choice(len(LANE_NAMES), p=lane_p)]
        speed = max(float(rng.normal(*stats["speed"])), 5.0)
        rec = WimRecord(timestamp=float(ts), lane=lane, axle_count=cls,
                        axle_weights=axles, axle_spacings=list(stats["spacings"]),
                        speed=speed, gvw=gvw)
        rec.validate()
        records.append(rec)
    return records


# --- temperature samples (toolbox demo) --------------------------------------------

def generate_temperature_samples(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cold = rng.normal(8.0, 3.0, int(0.4 * n))
    warm = rng.normal(24.0, 4.0, n - cold.size)
    out = np.concatenate([cold, warm])
    rng.shuffle(out)
    return out


# --- fixture documents ---------------------------------------------------------------

STAY_CABLE_DOC = """\
# Stay cable specification

The stay cables of the bridge are made of low-relaxation high-strength
prestressed steel strands. These steel strands comply with the regulations of
"Steel Strand for Prestressed Concrete" (GB/T 5224-2003).

The diameter of each single steel strand is 15.2 millimeters, the
cross-sectional area of the steel strands is 140 square millimeters, the
standard strength is 1860 MPa, and the elastic modulus is 1.95 × 10⁵ MPa.

Each stay cable bundles 12 parallel strands inside a double-layer HDPE sheath
with dampers at the deck anchorage. Cables are arranged in two fans of seven
anchored at the pylon heads.
"""

BRIDGE_OVERVIEW_DOC = """\
# Bridge overview

The structure is a dual-direction, six-lane highway bridge of cable-stayed
construction with spans of 60 m + 120 m + 60 m. The deck is a continuous
steel box girder supported on abutments at both ends, on bearings at the two
pylons, and by fourteen stay cables.

The structural health monitoring system samples eleven vertical
accelerometers along the deck at 50 Hz, and a weigh-in-motion (WIM) station
records axle weights, axle spacings, speed and lane for every passing
vehicle.

Design vehicle loading corresponds to Highway Level I. The deck carries six
traffic lanes numbered lane1 to lane6 from the upstream side.
"""

MAINTENANCE_DOC = """\
# Maintenance inspection summary

Last principal inspection found the deck drainage partially blocked near the
west abutment and superficial corrosion on two cable anchorage covers; both
were repaired. Bearing displacements remain within design limits.

Cable forces measured by the lift-off method deviated less than 6% from the
installation record. The wearing surface shows rutting below 8 mm. The next
principal inspection is due in three years.
"""


def write_demo_documents(docs_dir: Path) -> list[Path]:
    docs_dir.mkdir(parents=True, exist_ok=True)
    out = []
    for name, text in (("bridge_overview.md", BRIDGE_OVERVIEW_DOC),
                       ("stay_cables.md", STAY_CABLE_DOC),
                       ("maintenance.md", MAINTENANCE_DOC)):
        path = docs_dir / name
        path.write_text(text, encoding="utf-8")
        out.append(path)
    return out


# --- uncertainty fixture ----------------------------------------------------------------

def demo_uncertainty_spec(capacity_mpa: float) -> dict:
    return {
        "variables": [
            {"name": "E", "target": "E_scale", "distribution": "lognormal",
             "params": {"mean": 1.0, "cov": 0.05}},
            {"name": "A_cable", "target": "cable_area_scale", "distribution": "normal",
             "params": {"mean": 1.0, "std": 0.04}},
            {"name": "Q", "target": "load_scale", "distribution": "lognormal",
             "params": {"mean": 1.0, "cov": 0.12}},
        ],
        "limit_state": {"quantity": "cable_stress", "location": "cable_4",
                        "capacity": capacity_mpa, "direction": "exceed"},
        "degradation": {"type": "linear_cable_area_loss", "rate": 0.005},
    }


# --- staging directory --------------------------------------------------------------------

def write_staging(staging: Union[str, Path], seed: int = 0,
                  training_seconds: float = 3600.0) -> Path:
    """Create a complete configuration staging directory for the demo bridge."""
    staging = Path(staging)
    staging.mkdir(parents=True, exist_ok=True)
    model = build_demo_model()
    model.save(staging / "fe_model.json")

    block, _ = generate_monitoring_data(model, training_seconds, seed=seed)
    (staging / "training").mkdir(exist_ok=True)
    _write_block_csv(staging / "training" / "training_block.csv", block)

    records = generate_wim(4000, seed=seed + 1)
    (staging / "wim.csv").write_text(dump_wim_csv(records), encoding="utf-8")

    write_demo_documents(staging / "docs")

    (staging / "llm.json").write_text(json.dumps({
        "endpoint": "", "chat_model": "gpt-4o",
        "embedding_model": "text-embedding-ada-002",
        "key_env": "SHM_AGENTS_LLM_KEY"}, indent=2), encoding="utf-8")
    return staging


def _write_block_csv(path: Path, block: TimeSeriesBlock) -> None:
    lines = ["index," + ",".join(block.channel_names)]
    data = block.data
    for i in range(block.n_samples):
        lines.append(str(i) + "," + ",".join(f"{v:.6g}" for v in data[:, i]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
