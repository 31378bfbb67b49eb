"""Reliability machinery: uncertainty specs, response surface, MC, FORM.

The limit state is evaluated on a full quadratic response surface fitted to
model solves arranged in a central composite design in standard-normal
space, which keeps Monte Carlo (default 1e6 samples, counter-based Philox
streams) and HL-RF iteration cheap regardless of model size. Each result's
beta is derived from its pf by definition, so beta and pf never disagree.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from ..errors import FatalError, ResolvableError

DISTRIBUTIONS = ("normal", "lognormal", "uniform")
TARGETS = ("E_scale", "cable_area_scale", "load_scale", "resistance")

DEFAULT_MC_SAMPLES = 1_000_000
HLRF_MAX_ITER = 100
HLRF_TOL = 1e-10


@dataclass
class RandomVariable:
    name: str
    target: str
    distribution: str
    params: dict[str, float]

    def validate(self) -> None:
        if self.target not in TARGETS:
            raise FatalError(f"variable {self.name!r}: unknown target {self.target!r}")
        if self.distribution not in DISTRIBUTIONS:
            raise FatalError(f"variable {self.name!r}: unknown distribution {self.distribution!r}")
        if self.distribution == "normal":
            if self.params.get("std", -1) <= 0:
                raise FatalError(f"variable {self.name!r}: normal needs std > 0")
        elif self.distribution == "lognormal":
            if "sigma" in self.params:
                if self.params["sigma"] <= 0:
                    raise FatalError(f"variable {self.name!r}: lognormal sigma must be > 0")
            elif self.params.get("cov", -1) <= 0 or self.params.get("mean", -1) <= 0:
                raise FatalError(f"variable {self.name!r}: lognormal needs mean > 0 and cov > 0")
        else:
            lo, hi = self.params.get("lo"), self.params.get("hi")
            if lo is None or hi is None or not lo < hi:
                raise FatalError(f"variable {self.name!r}: uniform needs lo < hi")

    def from_u(self, u: np.ndarray) -> np.ndarray:
        """Map standard-normal values to the physical distribution."""
        u = np.asarray(u, dtype=float)
        if self.distribution == "normal":
            return self.params["mean"] + self.params["std"] * u
        if self.distribution == "lognormal":
            if "sigma" in self.params:
                mu, sigma = self.params["mu"], self.params["sigma"]
            else:
                cov = self.params["cov"]
                sigma = math.sqrt(math.log(1.0 + cov * cov))
                mu = math.log(self.params["mean"]) - 0.5 * sigma * sigma
            return np.exp(mu + sigma * u)
        lo, hi = self.params["lo"], self.params["hi"]
        return lo + (hi - lo) * ndtr(u)


@dataclass
class LimitState:
    quantity: str
    location: str
    capacity: float
    direction: str = "exceed"      # response exceeding capacity fails

    def validate(self) -> None:
        if self.direction not in ("exceed", "below"):
            raise FatalError(f"limit state direction must be exceed/below, got {self.direction!r}")


@dataclass
class Degradation:
    type: str
    rate: float     # fraction of cable area lost per year

    def validate(self) -> None:
        if self.type != "linear_cable_area_loss":
            raise FatalError(f"unknown degradation type {self.type!r}")
        if self.rate < 0:
            raise FatalError("degradation rate must be >= 0")


@dataclass
class UncertaintySpec:
    variables: list[RandomVariable]
    limit_state: LimitState
    degradation: Optional[Degradation] = None

    def validate(self) -> None:
        if not self.variables:
            raise FatalError("uncertainty spec needs at least one variable")
        for v in self.variables:
            v.validate()
        self.limit_state.validate()
        if self.degradation is not None:
            self.degradation.validate()

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "UncertaintySpec":
        if "limit_state" not in doc:
            raise FatalError("uncertainty spec needs exactly one limit_state")
        ls = doc["limit_state"]
        spec = cls(
            variables=[RandomVariable(
                name=str(v["name"]), target=str(v["target"]),
                distribution=str(v["distribution"]),
                params={k: float(x) for k, x in v["params"].items()},
            ) for v in doc.get("variables", [])],
            limit_state=LimitState(
                quantity=str(ls["quantity"]), location=str(ls["location"]),
                capacity=float(ls.get("capacity", math.inf)),
                direction=str(ls.get("direction", "exceed")),
            ),
            degradation=(Degradation(type=str(doc["degradation"]["type"]),
                                     rate=float(doc["degradation"]["rate"]))
                         if doc.get("degradation") else None),
        )
        spec.validate()
        return spec

    @classmethod
    def from_text(cls, text: str) -> "UncertaintySpec":
        try:
            return cls.from_json(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FatalError(f"uncertainty file is not a valid spec: {exc}")


@dataclass
class ReliabilityResult:
    pf: float
    beta: float
    method: str                        # monte_carlo | form
    n_samples: int = 0
    ci95: Optional[tuple[float, float]] = None
    warning: str = ""

    @classmethod
    def from_pf(cls, pf: float, method: str, n_samples: int = 0,
                ci95: Optional[tuple[float, float]] = None, warning: str = "") -> "ReliabilityResult":
        pf = float(min(max(pf, 0.0), 1.0))
        if pf <= 0.0:
            beta = math.inf
        elif pf >= 1.0:
            beta = -math.inf
        else:
            beta = float(-ndtri(pf))
        return cls(pf=pf, beta=beta, method=method, n_samples=n_samples,
                   ci95=ci95, warning=warning)


# --- quadratic response surface -------------------------------------------------

@dataclass
class QuadraticSurface:
    n_vars: int
    coef: np.ndarray

    def design_matrix(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        cols = [np.ones(U.shape[0])]
        for i in range(self.n_vars):
            cols.append(U[:, i])
        for i in range(self.n_vars):
            cols.append(U[:, i] ** 2)
        for i, j in itertools.combinations(range(self.n_vars), 2):
            cols.append(U[:, i] * U[:, j])
        return np.column_stack(cols)

    def __call__(self, U: np.ndarray) -> np.ndarray:
        return self.design_matrix(U) @ self.coef


def ccd_points(n_vars: int, radius: float = 1.5) -> np.ndarray:
    """Central composite design in u-space: center, factorial corners at
    +-radius, axial points at +-alpha*radius (rotatable alpha)."""
    alpha = 2.0 ** (n_vars / 4.0)
    pts = [np.zeros(n_vars)]
    for corner in itertools.product((-radius, radius), repeat=n_vars):
        pts.append(np.array(corner))
    for i in range(n_vars):
        for sgn in (-1.0, 1.0):
            p = np.zeros(n_vars)
            p[i] = sgn * alpha * radius
            pts.append(p)
    return np.array(pts)


def fit_surface(g: Callable[[np.ndarray], float], n_vars: int,
                radius: float = 1.5) -> QuadraticSurface:
    """Fit the full quadratic to model evaluations on the CCD."""
    U = ccd_points(n_vars, radius)
    y = np.array([float(g(u)) for u in U])
    surf = QuadraticSurface(n_vars=n_vars, coef=np.zeros(1))
    X = surf.design_matrix(U)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    surf.coef = coef
    return surf


# --- Monte Carlo -------------------------------------------------------------------

def monte_carlo_pf(surface: Callable[[np.ndarray], np.ndarray], n_vars: int,
                   n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0,
                   batch: int = 200_000,
                   checkpoints: int = 20) -> tuple[ReliabilityResult, np.ndarray, np.ndarray]:
    """Failure probability of {g <= 0} under independent standard normals.

    Philox counter-based streams keyed by (seed, batch index) make the
    estimate independent of batching and worker layout. Returns the result
    plus (sample counts, running pf) for the convergence figure.
    """
    fails = 0
    done = 0
    xs, running = [], []
    next_mark = max(n_samples // checkpoints, 1)
    b = 0
    while done < n_samples:
        take = min(batch, n_samples - done)
        rng = np.random.Generator(np.random.Philox(key=[seed, b]))
        U = rng.standard_normal((take, n_vars))
        gvals = surface(U)
        fails += int(np.count_nonzero(gvals <= 0.0))
        done += take
        b += 1
        if done >= next_mark:
            xs.append(done)
            running.append(fails / done)
            next_mark += max(n_samples // checkpoints, 1)
    pf = fails / n_samples
    se = math.sqrt(max(pf * (1 - pf), 0.0) / n_samples)
    ci = (max(pf - 1.96 * se, 0.0), min(pf + 1.96 * se, 1.0))
    res = ReliabilityResult.from_pf(pf, "monte_carlo", n_samples=n_samples, ci95=ci)
    return res, np.array(xs), np.array(running)


# --- FORM (HL-RF) --------------------------------------------------------------------

def _fd_gradient(g: Callable[[np.ndarray], np.ndarray], u: np.ndarray,
                 h: float = 1e-5) -> np.ndarray:
    n = u.size
    grad = np.zeros(n)
    for i in range(n):
        up = u.copy(); up[i] += h
        dn = u.copy(); dn[i] -= h
        grad[i] = (float(g(up[None, :])[0]) - float(g(dn[None, :])[0])) / (2 * h)
    return grad


def form_hlrf(g: Callable[[np.ndarray], np.ndarray], n_vars: int,
              max_iter: int = HLRF_MAX_ITER, tol: float = HLRF_TOL) -> Optional[ReliabilityResult]:
    """Hasofer-Lind / Rackwitz-Fiessler search on the surface with
    finite-difference gradients. Returns None on non-convergence."""
    u = np.zeros(n_vars)
    g0 = float(g(np.zeros((1, n_vars)))[0])
    for _ in range(max_iter):
        gu = float(g(u[None, :])[0])
        grad = _fd_gradient(g, u)
        norm2 = float(np.dot(grad, grad))
        if norm2 <= 1e-30:
            return None
        u_new = ((np.dot(grad, u) - gu) / norm2) * grad
        if np.linalg.norm(u_new - u) < tol * max(1.0, np.linalg.norm(u_new)):
            beta = float(np.linalg.norm(u_new))
            if g0 < 0:
                beta = -beta
            return ReliabilityResult.from_pf(float(ndtr(-beta)), "form")
        u = u_new
    return None


# --- assembled analysis ----------------------------------------------------------------

@dataclass
class ReliabilityAnalysis:
    mc: ReliabilityResult
    form: Optional[ReliabilityResult]
    convergence_n: np.ndarray
    convergence_pf: np.ndarray
    warning: str = ""


def analyze(g_model: Callable[[np.ndarray], float], n_vars: int,
            n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> ReliabilityAnalysis:
    """Full pipeline: CCD model solves -> quadratic surface -> MC + FORM."""
    surface = fit_surface(g_model, n_vars)
    mc, xs, running = monte_carlo_pf(surface, n_vars, n_samples=n_samples, seed=seed)
    form = form_hlrf(surface, n_vars)
    warning = "" if form is not None else "FORM (HL-RF) did not converge; Monte Carlo result only"
    return ReliabilityAnalysis(mc=mc, form=form, convergence_n=xs,
                               convergence_pf=running, warning=warning)
