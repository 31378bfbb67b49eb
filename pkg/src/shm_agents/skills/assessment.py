"""Response, fatigue, and reliability skill nodes built on the FE core.

Transient response runs the moving-load + Newmark pipeline. Fatigue uses
quasi-static influence-line superposition for the per-detail stress
histories (full transients over half-hour traffic are not worth their cost
at this model scale), rainflow counting, and Miner's rule against an S-N
curve. Reliability evaluates the configured limit state through the
response-surface engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..errors import FatalError, ResolvableError
from .. import kernels
from ..fe import assemble, lane_udl_case, moving_load_history, newmark_transient, resolve_target, scaled_model
from .base import SkillContext, SkillNode, SkillOutput
from .reliability import (
    DEFAULT_MC_SAMPLES,
    ReliabilityAnalysis,
    ReliabilityResult,
    UncertaintySpec,
    analyze,
)
from .traffic import TrafficSample
from ..state.registry import AlgorithmCard, InputRequirement
from ..state.variables import VariableDescriptor


# --- S-N curve and Miner accumulation ------------------------------------------

@dataclass
class SnCurve:
    reference_range: float = 90.0        # MPa
    reference_cycles: float = 2.0e6
    slope_m: float = 3.0
    cutoff_range: float = 10.0           # MPa, ranges below are ignored

    def __post_init__(self) -> None:
        if self.slope_m <= 0 or self.reference_cycles <= 0 or self.cutoff_range < 0:
            raise FatalError("invalid S-N curve constants")

    def to_json(self) -> dict[str, float]:
        return {"reference_range": self.reference_range,
                "reference_cycles": self.reference_cycles,
                "slope_m": self.slope_m, "cutoff_range": self.cutoff_range}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "SnCurve":
        return cls(**{k: float(v) for k, v in doc.items()})


def rainflow(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Four-point rainflow of a stress history: (ranges, means, counts)."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise FatalError("stress history contains non-finite values")
    return kernels.rainflow_cycles(values)


def cycle_histogram(ranges: np.ndarray, counts: np.ndarray) -> list[tuple[float, float]]:
    """Aggregate cycles into exact (range, count) bins; ranges are keyed at
    12 significant digits so float twins merge."""
    hist: dict[float, float] = {}
    for r, c in zip(ranges, counts):
        key = float(f"{r:.12g}")
        hist[key] = hist.get(key, 0.0) + float(c)
    return sorted(hist.items())


def miner_damage_from_histogram(hist: list[tuple[float, float]], sn: SnCurve) -> float:
    damage = 0.0
    for rng, count in hist:
        if rng < sn.cutoff_range:
            continue
        damage += count * (rng / sn.reference_range) ** sn.slope_m / sn.reference_cycles
    return damage


@dataclass
class FatigueDamage:
    per_detail: dict[str, float]
    histograms: dict[str, list[tuple[float, float]]]
    duration_s: float


def miner_damage(stress_histories: dict[str, np.ndarray], sn: SnCurve,
                 duration_s: float) -> FatigueDamage:
    """Damage per detail; always computed from the histogram so the reported
    number is exactly recomputable from it."""
    per_detail: dict[str, float] = {}
    histograms: dict[str, list[tuple[float, float]]] = {}
    for name, series in stress_histories.items():
        ranges, _, counts = rainflow(series)
        hist = cycle_histogram(ranges, counts)
        histograms[name] = hist
        per_detail[name] = miner_damage_from_histogram(hist, sn)
    return FatigueDamage(per_detail=per_detail, histograms=histograms, duration_s=duration_s)


# --- quasi-static stress histories ------------------------------------------------

def detail_stress_history(ctx: SkillContext, sample: TrafficSample, detail: str,
                          dt: float) -> np.ndarray:
    """Stress history of one cable detail by influence-line superposition."""
    config = ctx.config
    n = int(math.floor(sample.duration_s / dt)) + 1
    t = np.arange(n) * dt
    idx = int(detail.split("_", 1)[1])
    el = config.fe_model.cable_elements[idx]
    stress = np.full(n, el.initial_tension / el.area / 1e6)
    for veh in sample.vehicles:
        il = config.influence(veh.lane, "cable_stress", detail)
        if il is None:
            continue
        positions, values = il
        length = positions[-1]
        offsets = np.concatenate([[0.0], np.cumsum(veh.axle_spacings)])
        for w_kn, off in zip(veh.axle_weights, offsets):
            s = veh.speed * (t - veh.arrival_time) - off
            on = (s >= 0.0) & (s <= length)
            if not np.any(on):
                continue
            stress[on] += 1000.0 * w_kn * np.interp(s[on], positions, values)
    return stress


# --- transient series extraction ----------------------------------------------------

def transient_series(sys, target, U: np.ndarray) -> np.ndarray:
    """Response series from free-dof displacement rows; linear targets only
    (displacement, cable_stress)."""
    free_pos = {dof: k for k, dof in enumerate(sys.free)}
    if target.quantity == "displacement":
        dof = sys.model.dof_index(target.node, target.dof)
        if dof not in free_pos:
            return np.zeros(U.shape[0])
        return U[:, free_pos[dof]]
    if target.quantity == "cable_stress":
        el = sys.model.cable_elements[target.cable_idx]
        c, s, L = sys.cable_geom[target.cable_idx]
        coef = np.zeros(U.shape[1])
        for sign, dof in zip((-c, -s, c, s), sys.cable_dofs[target.cable_idx]):
            if dof in free_pos:
                coef[free_pos[dof]] += sign
        series = (el.EA / L) * (U @ coef)
        return (el.initial_tension + series) / el.area / 1e6
    raise ResolvableError(
        f"transient extraction supports displacement and cable_stress, not {target.quantity!r}")


# --- response node --------------------------------------------------------------------

@dataclass
class ResponseHistory:
    quantity: str
    location: str
    dt: float
    values: np.ndarray
    units: str


def response_figure(history: ResponseHistory) -> bytes:
    import matplotlib.pyplot as plt

    from .plotting import fig_to_png, style_context

    with style_context():
        fig, ax = plt.subplots(figsize=(6, 2.8))
        t = np.arange(history.values.size) * history.dt
        ax.plot(t, history.values, color="tab:blue", lw=0.8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel(f"{history.quantity} at {history.location} [{history.units}]")
        ax.set_title(f"{history.quantity} under vehicle load")
        fig.tight_layout()
        return fig_to_png(fig)


def _load_sample(ctx: SkillContext, name: str) -> TrafficSample:
    var = ctx.datastore.fetch(name)
    if var.descriptor.dtype != "record-table":
        raise ResolvableError(f"variable {name!r} is not a vehicle-load table")
    meta = ctx.extras.get("traffic_meta", {}).get(name)
    rows = var.payload
    if meta:
        duration = float(meta["duration_s"])
    elif rows:
        duration = max(float(r["arrival_time"]) for r in rows) + 60.0
    else:
        duration = 1.0
    return TrafficSample.from_rows(duration, rows)


class ResponseNode(SkillNode):
    name = "response"
    args_schema = {
        "type": "object",
        "properties": {
            "traffic_variable": {"type": "string"},
            "quantity": {"type": "string", "enum": ["displacement", "cable_stress"]},
            "location": {"type": "string"},
            "dt": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["traffic_variable", "quantity", "location"],
        "additionalProperties": False,
    }

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Calculate the response of the structure under vehicle loads by "
                     "finite element transient analysis: displacement at a named sensor "
                     "or stress in a named cable, with a response-history figure.",
            input_requirements=[
                InputRequirement("traffic_variable", "sampled vehicle loads", "record table", ""),
                InputRequirement("quantity", "displacement | cable_stress", "", ""),
                InputRequirement("location", "sensor name (e.g. mid_span) or cable_<k>", "", ""),
            ],
            input_example='{"traffic_variable": "V_load", "quantity": "displacement", "location": "mid_span"}',
            output_example='variable "Response_history" plus a displacement diagram',
        )

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        if ctx.config is None or ctx.config.fe_model is None:
            raise FatalError("active configuration has no finite element model")
        sample = _load_sample(ctx, args["traffic_variable"])
        sys = ctx.config.assembled()
        target = resolve_target(sys, args["quantity"], args["location"])
        dt = float(args.get("dt", ctx.config.default_dt()))
        lanes = [l.name for l in ctx.config.fe_model.lanes]
        F = moving_load_history(sys, sample.vehicles, lanes, dt, sample.duration_s)
        result = newmark_transient(sys, F, dt)
        values = transient_series(sys, target, result.U)
        units = "m" if target.quantity == "displacement" else "MPa"
        history = ResponseHistory(quantity=target.quantity, location=args["location"],
                                  dt=dt, values=values, units=units)
        art = ctx.artifacts.put_png(ctx.session_id, response_figure(history))
        name = ctx.datastore.register(
            VariableDescriptor(name="Response_history", dtype="f64",
                               description=f"{target.quantity} at {args['location']}, "
                                           f"dt={dt:g} s, units {units}",
                               shape=[values.size]), values)
        peak = float(np.max(np.abs(values)))
        msg = (f"Finite element load solving has been successfully completed. "
               f"{target.quantity} at {args['location']}: {values.size} samples at "
               f"dt={dt:g} s, peak magnitude {peak:.4g} {units}. "
               f"Stored in {name}; the response diagram is attached.")
        return SkillOutput(message=msg, produced=[name], artifacts=[art])


# --- fatigue node ----------------------------------------------------------------------

def fatigue_figure(damage: FatigueDamage) -> bytes:
    import matplotlib.pyplot as plt

    from .plotting import fig_to_png, style_context

    with style_context():
        fig, ax = plt.subplots(figsize=(6, 2.8))
        names = list(damage.per_detail)
        vals = [damage.per_detail[n] for n in names]
        ax.bar(names, vals, color="tab:blue")
        ax.set_ylabel("Miner damage [-]")
        ax.set_title(f"fatigue damage under {damage.duration_s:g} s of vehicle load")
        ax.tick_params(axis="x", rotation=45)
        fig.tight_layout()
        return fig_to_png(fig)


class FatigueNode(SkillNode):
    name = "fatigue"
    args_schema = {
        "type": "object",
        "properties": {
            "traffic_variable": {"type": "string"},
            "details": {"type": "array", "items": {"type": "string"}},
            "dt": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["traffic_variable"],
        "additionalProperties": False,
    }

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Calculate the fatigue damage of structural details (stay cables) "
                     "under long-term vehicle loads: quasi-static stress histories from "
                     "influence lines, rainflow cycle counting, Miner damage per detail.",
            input_requirements=[
                InputRequirement("traffic_variable", "sampled vehicle loads", "record table", ""),
                InputRequirement("details", "cable detail names (optional)", "list", ""),
            ],
            input_example='{"traffic_variable": "V_load"}',
            output_example='variable "Fatigue_damage_calculation" plus a per-detail bar chart',
        )

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        if ctx.config is None or ctx.config.fe_model is None:
            raise FatalError("active configuration has no finite element model")
        sample = _load_sample(ctx, args["traffic_variable"])
        details = args.get("details") or ctx.config.fatigue_details()
        if not details:
            raise FatalError("the model has no cable details for fatigue")
        dt = float(args.get("dt", 0.05))
        histories = {d: detail_stress_history(ctx, sample, d, dt) for d in details}
        damage = miner_damage(histories, ctx.config.sn_curve, sample.duration_s)
        art = ctx.artifacts.put_png(ctx.session_id, fatigue_figure(damage))
        rows = [{"detail": d, "damage": damage.per_detail[d],
                 "cycles": float(sum(c for _, c in damage.histograms[d]))}
                for d in details]
        name = ctx.datastore.register(
            VariableDescriptor(name="Fatigue_damage_calculation", dtype="record-table",
                               description=f"Miner damage per detail, {sample.duration_s:g} s of traffic",
                               shape=[len(rows)]), rows)
        worst = max(damage.per_detail, key=damage.per_detail.get)
        msg = (f"The fatigue damage calculation was successfully completed for "
               f"{len(details)} detail(s) over {sample.duration_s:g} s of vehicle load. "
               f"Largest damage {damage.per_detail[worst]:.3e} at {worst}. "
               f"Results are saved in {name}; the damage chart is attached.")
        return SkillOutput(message=msg, produced=[name], artifacts=[art])


# --- reliability node ---------------------------------------------------------------------

def convergence_figure(analysis: ReliabilityAnalysis) -> bytes:
    import matplotlib.pyplot as plt

    from .plotting import fig_to_png, style_context

    with style_context():
        fig, ax = plt.subplots(figsize=(6, 2.8))
        n, pf = analysis.convergence_n, analysis.convergence_pf
        ax.plot(n, pf, color="tab:blue", lw=1.0, label="Monte Carlo estimate")
        se = np.sqrt(np.maximum(pf * (1 - pf), 0.0) / np.maximum(n, 1))
        ax.fill_between(n, pf - 1.96 * se, pf + 1.96 * se, alpha=0.25, color="tab:blue",
                        label="95% CI")
        if analysis.form is not None and math.isfinite(analysis.form.pf):
            ax.axhline(analysis.form.pf, color="tab:orange", lw=1.0, ls="--", label="FORM")
        ax.set_xlabel("samples")
        ax.set_ylabel("failure probability")
        ax.set_title("reliability calculation convergence")
        ax.legend(loc="best")
        fig.tight_layout()
        return fig_to_png(fig)


def horizon_figure(years: list[float], pfs: list[float]) -> bytes:
    import matplotlib.pyplot as plt

    from .plotting import fig_to_png, style_context

    with style_context():
        fig, ax = plt.subplots(figsize=(6, 2.8))
        ax.plot(years, pfs, "o-", color="tab:blue")
        ax.set_xlabel("years from now")
        ax.set_ylabel("failure probability")
        ax.set_title("failure probability over the assessment horizon")
        fig.tight_layout()
        return fig_to_png(fig)


class ReliabilityNode(SkillNode):
    name = "reliability"
    args_schema = {
        "type": "object",
        "properties": {
            "uncertainty_variable": {"type": "string"},
            "mode": {"type": "string", "enum": ["now", "horizon"]},
            "horizon_years": {"type": "number", "exclusiveMinimum": 0},
            "step_years": {"type": "number", "exclusiveMinimum": 0},
            "n_samples": {"type": "integer", "minimum": 1000},
            "seed": {"type": "integer"},
        },
        "required": ["uncertainty_variable"],
        "additionalProperties": False,
    }

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Rapid calculation of structural reliability under specified "
                     "uncertainties: response-surface Monte Carlo with FORM alongside, "
                     "now or over a degradation horizon (cable section loss).",
            input_requirements=[
                InputRequirement("uncertainty_variable", "uncertainty spec (JSON text variable)", "", ""),
                InputRequirement("horizon_years", "assessment horizon (horizon mode)", "scalar", "years"),
                InputRequirement("step_years", "time step (horizon mode)", "scalar", "years"),
            ],
            input_example='{"uncertainty_variable": "uncertainty_file", "mode": "now"}',
            output_example='failure probability, reliability index, convergence figure',
        )

    def _g_builder(self, ctx: SkillContext, spec: UncertaintySpec, extra_area_scale: float = 1.0):
        config = ctx.config
        model = config.fe_model
        ls = spec.limit_state

        def g_model(u: np.ndarray) -> float:
            x = {v.name: float(v.from_u(np.asarray([u[i]]))[0])
                 for i, v in enumerate(spec.variables)}
            e_scale = 1.0
            area_scale = extra_area_scale
            load_scale = 1.0
            resistance = None
            for v in spec.variables:
                val = x[v.name]
                if v.target == "E_scale":
                    e_scale *= val
                elif v.target == "cable_area_scale":
                    area_scale *= val
                elif v.target == "load_scale":
                    load_scale *= val
                elif v.target == "resistance":
                    resistance = val
            scaled = scaled_model(model, e_scale=e_scale, cable_area_scale=area_scale)
            sys = assemble(scaled)
            target = resolve_target(sys, ls.quantity, ls.location)
            resp = 0.0
            for lane in scaled.lanes:
                case = lane_udl_case(sys, lane.name, config.reference_load_kn_m * 1000.0)
                u_static = sys.solve_static(case.F)
                resp += target.extract(sys, u_static, case)
            resp *= load_scale
            if ls.quantity == "displacement":
                resp = abs(resp)
            cap = resistance if resistance is not None else ls.capacity
            return cap - resp if ls.direction == "exceed" else resp - cap

        return g_model

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        if ctx.config is None or ctx.config.fe_model is None:
            raise FatalError("active configuration has no finite element model")
        var = ctx.datastore.fetch(args["uncertainty_variable"])
        if var.descriptor.dtype != "text":
            raise ResolvableError(
                f"variable {args['uncertainty_variable']!r} must be a JSON text variable")
        spec = UncertaintySpec.from_text(var.payload)
        n_samples = int(args.get("n_samples", DEFAULT_MC_SAMPLES))
        seed = int(args.get("seed", ctx.default_seed))
        n_vars = len(spec.variables)

        if args.get("mode", "now") == "horizon":
            if "horizon_years" not in args or "step_years" not in args:
                raise ResolvableError("horizon mode needs horizon_years and step_years")
            if spec.degradation is None:
                raise ResolvableError("horizon mode needs a degradation entry in the uncertainty file")
            horizon, step = float(args["horizon_years"]), float(args["step_years"])
            n_steps = horizon / step
            if abs(n_steps - round(n_steps)) > 1e-9:
                raise ResolvableError("step_years must divide horizon_years")
            rate = spec.degradation.rate
            if rate * horizon >= 1.0:
                raise FatalError("cable area becomes non-positive within the horizon")
            years = [k * step for k in range(int(round(n_steps)) + 1)]
            pfs, betas = [], []
            for t in years:
                g = self._g_builder(ctx, spec, extra_area_scale=1.0 - rate * t)
                analysis = analyze(g, n_vars, n_samples=n_samples, seed=seed)
                pfs.append(analysis.mc.pf)
                betas.append(analysis.mc.beta)
            art = ctx.artifacts.put_png(ctx.session_id, horizon_figure(years, pfs))
            rows = [{"year": y, "pf": p, "beta": b} for y, p, b in zip(years, pfs, betas)]
            name = ctx.datastore.register(
                VariableDescriptor(name="Reliability_timeline", dtype="record-table",
                                   description=f"failure probability at {len(years)} points "
                                               f"over {horizon:g} years (step {step:g})",
                                   shape=[len(rows)]), rows)
            msg = (f"Successfully calculated the change in failure probability over the next "
                   f"{horizon:g} years with a time interval of {step:g} years: "
                   + "; ".join(f"t={y:g}y pf={p:.4%}" for y, p in zip(years, pfs))
                   + f". Results stored in {name}; the trend chart is attached.")
            return SkillOutput(message=msg, produced=[name], artifacts=[art])

        g = self._g_builder(ctx, spec)
        analysis = analyze(g, n_vars, n_samples=n_samples, seed=seed)
        art = ctx.artifacts.put_png(ctx.session_id, convergence_figure(analysis))
        mc = analysis.mc
        rows = [{"method": "monte_carlo", "pf": mc.pf, "beta": mc.beta,
                 "ci_lo": mc.ci95[0], "ci_hi": mc.ci95[1]}]
        if analysis.form is not None:
            rows.append({"method": "form", "pf": analysis.form.pf,
                         "beta": analysis.form.beta, "ci_lo": float("nan"),
                         "ci_hi": float("nan")})
        name = ctx.datastore.register(
            VariableDescriptor(name="Reliability_results", dtype="record-table",
                               description="failure probability and reliability index",
                               shape=[len(rows)]), rows)
        msg = (f"Successfully calculated the structural reliability and failure probability "
               f"under specified uncertainties, with a reliability of {(1 - mc.pf):.2%}, "
               f"and a failure probability of {mc.pf:.2%}. "
               f"The reliability index is {mc.beta:.2f}.")
        if analysis.form is not None:
            msg += f" FORM cross-check: beta = {analysis.form.beta:.2f}."
        if analysis.warning:
            msg += f" Note: {analysis.warning}."
        msg += f" Results stored in {name}; the convergence figure is attached."
        return SkillOutput(message=msg, produced=[name], artifacts=[art])
