"""Stochastic traffic model: fit from WIM records, sample random flows.

Vehicles are bucketed by axle count (2..6+); each bucket carries a BIC-
selected Gaussian mixture of gross vehicle weight, mean axle-weight
fractions, mean spacings, and speed statistics. Lanes are independent
Poisson streams with a 1 s minimum headway enforced by repositioning,
which keeps the Poisson count law intact.

WIM CSV schema:
``timestamp,lane,axle_count,axle_weights(kN;semicolon-sep),axle_spacings(m;semicolon-sep),speed_mps,gvw_kN``
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..errors import FatalError, ResolvableError
from .base import SkillContext, SkillNode, SkillOutput
from ..state.registry import AlgorithmCard, InputRequirement
from ..state.variables import VariableDescriptor

MIN_RECORDS_TOTAL = 50
MIN_RECORDS_PER_CLASS = 50
MIN_HEADWAY_S = 1.0
CLASS_BUCKETS = (2, 3, 4, 5, 6)     # 6 == "6 or more axles"


@dataclass
class WimRecord:
    timestamp: float
    lane: str
    axle_count: int
    axle_weights: list[float]       # kN
    axle_spacings: list[float]      # m
    speed: float                    # m/s
    gvw: float                      # kN

    def validate(self) -> None:
        if self.axle_count < 2:
            raise FatalError("vehicles have at least 2 axles")
        if len(self.axle_weights) != self.axle_count:
            raise FatalError("axle_weights length must equal axle_count")
        if len(self.axle_spacings) != self.axle_count - 1:
            raise FatalError("axle_spacings length must be axle_count - 1")
        if any(s <= 0 for s in self.axle_spacings):
            raise FatalError("axle spacings must be positive")
        if self.speed <= 0:
            raise FatalError("speed must be positive")
        if abs(sum(self.axle_weights) - self.gvw) > 0.01 * max(self.gvw, 1e-9):
            raise FatalError("gvw must match the axle weight sum within 1%")


@dataclass
class ClassModel:
    axle_count: int
    mixture_weights: list[float]
    mixture_means: list[float]      # kN
    mixture_variances: list[float]
    axle_fractions: list[float]     # sums to 1
    mean_spacings: list[float]      # m
    speed_mean: float
    speed_std: float
    frequency: float                # share of all vehicles


@dataclass
class TrafficModel:
    classes: dict[int, ClassModel]
    lane_probabilities: dict[str, float]
    arrival_rates: dict[str, float]      # vehicles/s per lane

    def to_json(self) -> dict[str, Any]:
        return {
            "classes": {
                str(k): {
                    "axle_count": c.axle_count,
                    "mixture_weights": c.mixture_weights,
                    "mixture_means": c.mixture_means,
                    "mixture_variances": c.mixture_variances,
                    "axle_fractions": c.axle_fractions,
                    "mean_spacings": c.mean_spacings,
                    "speed_mean": c.speed_mean,
                    "speed_std": c.speed_std,
                    "frequency": c.frequency,
                } for k, c in self.classes.items()
            },
            "lane_probabilities": self.lane_probabilities,
            "arrival_rates": self.arrival_rates,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "TrafficModel":
        classes = {int(k): ClassModel(**v) for k, v in doc["classes"].items()}
        return cls(classes=classes,
                   lane_probabilities=dict(doc["lane_probabilities"]),
                   arrival_rates=dict(doc["arrival_rates"]))

    def gvw_moments(self) -> tuple[float, float]:
        """Overall mean/std of sampled GVW implied by the model."""
        mean = 0.0
        second = 0.0
        for c in self.classes.values():
            for w, mu, var in zip(c.mixture_weights, c.mixture_means, c.mixture_variances):
                mean += c.frequency * w * mu
                second += c.frequency * w * (var + mu**2)
        return mean, float(np.sqrt(max(second - mean**2, 0.0)))


@dataclass
class Vehicle:
    arrival_time: float
    lane: str
    speed: float
    axle_weights: list[float]
    axle_spacings: list[float]

    @property
    def gvw(self) -> float:
        return sum(self.axle_weights)


@dataclass
class TrafficSample:
    duration_s: float
    vehicles: list[Vehicle] = field(default_factory=list)

    def to_rows(self) -> list[dict[str, Any]]:
        return [{
            "arrival_time": v.arrival_time,
            "lane": v.lane,
            "speed": v.speed,
            "gvw": v.gvw,
            "axle_weights": ";".join(repr(w) for w in v.axle_weights),
            "axle_spacings": ";".join(repr(s) for s in v.axle_spacings),
        } for v in self.vehicles]

    @classmethod
    def from_rows(cls, duration_s: float, rows: list[dict[str, Any]]) -> "TrafficSample":
        vehicles = [Vehicle(
            arrival_time=float(r["arrival_time"]),
            lane=str(r["lane"]),
            speed=float(r["speed"]),
            axle_weights=[float(x) for x in str(r["axle_weights"]).split(";") if x],
            axle_spacings=[float(x) for x in str(r["axle_spacings"]).split(";") if x != ""],
        ) for r in rows]
        return cls(duration_s=duration_s, vehicles=vehicles)


# --- WIM CSV -----------------------------------------------------------------

WIM_HEADER = "timestamp,lane,axle_count,axle_weights,axle_spacings,speed_mps,gvw_kN"


def parse_wim_csv(text: str) -> list[WimRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    start = 1 if lines[0].lower().startswith("timestamp") else 0
    records = []
    for ln in lines[start:]:
        cells = ln.split(",")
        if len(cells) != 7:
            raise FatalError(f"WIM row needs 7 columns, got {len(cells)}: {ln!r}")
        rec = WimRecord(
            timestamp=float(cells[0]),
            lane=cells[1].strip(),
            axle_count=int(cells[2]),
            axle_weights=[float(x) for x in cells[3].split(";") if x],
            axle_spacings=[float(x) for x in cells[4].split(";") if x],
            speed=float(cells[5]),
            gvw=float(cells[6]),
        )
        rec.validate()
        records.append(rec)
    return records


def dump_wim_csv(records: list[WimRecord]) -> str:
    out = [WIM_HEADER]
    for r in records:
        out.append(",".join([
            repr(r.timestamp), r.lane, str(r.axle_count),
            ";".join(repr(w) for w in r.axle_weights),
            ";".join(repr(s) for s in r.axle_spacings),
            repr(r.speed), repr(r.gvw),
        ]))
    return "\n".join(out) + "\n"


# --- fitting -----------------------------------------------------------------

def _fit_gvw_mixture(gvw: np.ndarray, max_k: int = 3) -> tuple[list[float], list[float], list[float]]:
    from sklearn.mixture import GaussianMixture

    X = gvw.reshape(-1, 1)
    best = None
    best_bic = np.inf
    for k in range(1, max_k + 1):
        if len(gvw) < 2 * k:
            break
        gm = GaussianMixture(n_components=k, n_init=10, init_params="k-means++",
                             random_state=0).fit(X)
        bic = gm.bic(X)
        if bic < best_bic:
            best, best_bic = gm, bic
    order = np.argsort(best.means_[:, 0])
    weights = best.weights_[order]
    weights = weights / weights.sum()
    return (weights.tolist(),
            best.means_[order, 0].tolist(),
            best.covariances_[order, 0, 0].tolist())


def fit_traffic_model(records: list[WimRecord]) -> TrafficModel:
    if len(records) < MIN_RECORDS_TOTAL:
        raise FatalError(
            f"insufficient WIM data: {len(records)} records, need at least {MIN_RECORDS_TOTAL}")
    buckets: dict[int, list[WimRecord]] = {b: [] for b in CLASS_BUCKETS}
    for rec in records:
        buckets[min(max(rec.axle_count, 2), 6)].append(rec)
    # merge undersized buckets into the nearest populated one
    sizes = {b: len(v) for b, v in buckets.items()}
    keep = [b for b in CLASS_BUCKETS if sizes[b] >= MIN_RECORDS_PER_CLASS]
    if not keep:
        keep = [max(sizes, key=sizes.get)]
    merged: dict[int, list[WimRecord]] = {b: list(buckets[b]) for b in keep}
    for b in CLASS_BUCKETS:
        if b in keep:
            continue
        if not buckets[b]:
            continue
        target = min(keep, key=lambda kb: abs(kb - b))
        merged[target].extend(buckets[b])

    total = len(records)
    classes: dict[int, ClassModel] = {}
    for b, recs in merged.items():
        gvw = np.array([r.gvw for r in recs])
        weights, means, variances = _fit_gvw_mixture(gvw)
        counts = np.bincount([r.axle_count for r in recs])
        modal_axles = int(np.argmax(counts))
        shape_recs = [r for r in recs if r.axle_count == modal_axles] or recs
        frac = np.mean([np.asarray(r.axle_weights) / r.gvw for r in shape_recs
                        if r.axle_count == modal_axles], axis=0)
        frac = np.asarray(frac, dtype=float)
        frac = frac / frac.sum()
        spacings = np.mean([r.axle_spacings for r in shape_recs
                            if r.axle_count == modal_axles], axis=0)
        speeds = np.array([r.speed for r in recs])
        classes[b] = ClassModel(
            axle_count=modal_axles,
            mixture_weights=weights,
            mixture_means=means,
            mixture_variances=variances,
            axle_fractions=frac.tolist(),
            mean_spacings=np.atleast_1d(spacings).tolist(),
            speed_mean=float(speeds.mean()),
            speed_std=float(speeds.std()),
            frequency=len(recs) / total,
        )

    lanes = sorted({r.lane for r in records})
    lane_counts = {lane: sum(1 for r in records if r.lane == lane) for lane in lanes}
    span = max(r.timestamp for r in records) - min(r.timestamp for r in records)
    if span <= 0:
        raise FatalError("WIM records need a positive observation time span")
    return TrafficModel(
        classes=classes,
        lane_probabilities={lane: lane_counts[lane] / total for lane in lanes},
        arrival_rates={lane: lane_counts[lane] / span for lane in lanes},
    )


# --- sampling ------------------------------------------------------------------

def _arrivals_with_headway(rng: np.random.Generator, rate: float, duration: float) -> np.ndarray:
    """Poisson-count arrival times with a minimum headway.

    The count stays exactly Poisson(rate * duration); violating arrivals are
    repositioned, not dropped, so the count law survives the headway rule.
    """
    n = rng.poisson(rate * duration)
    if n == 0:
        return np.zeros(0)
    times = np.sort(rng.uniform(0.0, duration, n))
    for _ in range(50):
        gaps = np.diff(times)
        bad = np.nonzero(gaps < MIN_HEADWAY_S)[0]
        if bad.size == 0:
            break
        times[bad + 1] = rng.uniform(0.0, duration, bad.size)
        times.sort()
    else:
        # over-dense stream: push forward greedily, clamp to the window
        for i in range(1, n):
            if times[i] - times[i - 1] < MIN_HEADWAY_S:
                times[i] = min(times[i - 1] + MIN_HEADWAY_S, duration)
    return times


def sample_traffic(model: TrafficModel, duration_s: float, seed: int = 0) -> TrafficSample:
    if duration_s <= 0:
        raise ResolvableError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    class_ids = sorted(model.classes)
    class_freq = np.array([model.classes[c].frequency for c in class_ids])
    class_freq = class_freq / class_freq.sum()
    vehicles: list[Vehicle] = []
    for lane in sorted(model.arrival_rates):
        rate = model.arrival_rates[lane]
        if rate <= 0:
            continue
        for t in _arrivals_with_headway(rng, rate, duration_s):
            cid = class_ids[rng.choice(len(class_ids), p=class_freq)]
            cm = model.classes[cid]
            comp = rng.choice(len(cm.mixture_weights), p=np.asarray(cm.mixture_weights))
            gvw = -1.0
            for _ in range(100):
                gvw = rng.normal(cm.mixture_means[comp], np.sqrt(cm.mixture_variances[comp]))
                if gvw > 1.0:
                    break
            gvw = max(gvw, 1.0)
            weights = [gvw * f for f in cm.axle_fractions[:-1]]
            last = gvw - sum(weights)
            weights.append(last)
            # per-vehicle conservation must be exact in float arithmetic
            for _ in range(3):
                err = sum(weights) - gvw
                if err == 0.0:
                    break
                weights[-1] -= err
            speed = max(rng.normal(cm.speed_mean, cm.speed_std), 3.0)
            vehicles.append(Vehicle(arrival_time=float(t), lane=lane, speed=float(speed),
                                    axle_weights=weights,
                                    axle_spacings=list(cm.mean_spacings)))
    vehicles.sort(key=lambda v: (v.arrival_time, v.lane))
    return TrafficSample(duration_s=duration_s, vehicles=vehicles)


# --- node -------------------------------------------------------------------------

class TrafficNode(SkillNode):
    name = "traffic"
    args_schema = {
        "type": "object",
        "properties": {
            "duration_s": {"type": "number", "exclusiveMinimum": 0},
            "seed": {"type": "integer"},
            "output": {"type": "string"},
        },
        "required": ["duration_s"],
        "additionalProperties": False,
    }

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Modeling vehicle loads based on WIM data and generating random "
                     "traffic flows of a requested duration from the bridge's fitted "
                     "stochastic traffic model.",
            input_requirements=[
                InputRequirement("duration_s", "sample duration", "scalar", "seconds"),
                InputRequirement("seed", "random seed (optional)", "scalar", ""),
            ],
            input_example='{"duration_s": 1800}',
            output_example='variable "V_load": one row per sampled vehicle',
        )

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        if ctx.config is None or ctx.config.traffic_model is None:
            raise FatalError("active configuration has no traffic model")
        seed = int(args.get("seed", ctx.default_seed))
        duration = float(args["duration_s"])
        sample = sample_traffic(ctx.config.traffic_model, duration, seed)
        rows = sample.to_rows()
        name = ctx.datastore.register(
            VariableDescriptor(name=args.get("output", "V_load"), dtype="record-table",
                               description=f"sampled vehicle loads, duration {duration:g} s, seed {seed}",
                               shape=[len(rows)]), rows)
        ctx.extras.setdefault("traffic_meta", {})[name] = {"duration_s": duration}
        msg = (f"The vehicle load with a duration of {duration:g} seconds has been "
               f"successfully generated: {len(rows)} vehicles. The results are stored "
               f"in the variable {name}.")
        return SkillOutput(message=msg, produced=[name])
