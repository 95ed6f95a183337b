"""Expected-improvement Bayesian optimization over a box of controller
hyperparameters.

The loop minimizes a black-box cost: internally the surrogate models the
negated cost, so expected improvement keeps its usual maximization form.
Inputs are mapped to the unit cube before kernel evaluation; the acquisition
is maximized derivative-free (random multistart plus coordinate refinement),
which is plenty for a cheap surrogate over a 5-D box.  Everything is
deterministic given the seed.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from . import gp
from ._fmt import csv_line
from .dynamics import SimulationDiverged

_SQRT_2PI = math.sqrt(2.0 * math.pi)
FIRST_FAILURE_COST = 1e6


@dataclass(frozen=True)
class SearchBox:
    """Axis-aligned parameter box with named dimensions."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if len(self.names) != lo.shape[0] or lo.shape != hi.shape:
            raise ValueError("names, lower and upper must have equal length")
        if np.any(lo >= hi):
            raise ValueError("need lower < upper in every dimension")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, z) -> np.ndarray:
        return self.lower + np.asarray(z, dtype=float) * (self.upper - self.lower)

    def contains(self, x, rtol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        pad = rtol * (self.upper - self.lower)
        return bool(np.all(x >= self.lower - pad) and np.all(x <= self.upper + pad))


@dataclass(frozen=True)
class BoIteration:
    iteration: int
    params: np.ndarray
    cost: float
    best_so_far: float


@dataclass(frozen=True)
class BoTrace:
    seed: int
    names: tuple[str, ...]
    iterations: tuple[BoIteration, ...] = field(default_factory=tuple)

    @property
    def best(self) -> BoIteration:
        return min(self.iterations, key=lambda it: it.cost)

    def best_so_far_values(self) -> np.ndarray:
        return np.array([it.best_so_far for it in self.iterations])


def expected_improvement(model: gp.GpModel, x, y_best: float):
    """EI of the surrogate above y_best (maximization convention).

    For the cost-minimizing loop the model is trained on negated costs, so
    larger surrogate values mean better parameters.  Returns 0 where the
    posterior variance is 0.
    """
    mean, var = gp.posterior(model, x)
    scalar = np.isscalar(mean)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    var = np.atleast_1d(np.asarray(var, dtype=float))
    sd = np.sqrt(var)
    ei = np.zeros_like(mean)
    ok = sd > 1e-15
    if np.any(ok):
        diff = mean[ok] - y_best
        alpha = diff / sd[ok]
        phi = np.exp(-0.5 * alpha * alpha) / _SQRT_2PI
        ei[ok] = diff * ndtr(alpha) + sd[ok] * phi
    np.maximum(ei, 0.0, out=ei)
    if scalar:
        return float(ei[0])
    return ei


def propose_next(model: gp.GpModel, box: SearchBox, y_best: float,
                 rng: np.random.Generator,
                 n_candidates: int = 1024, n_refine_starts: int = 4,
                 refine_passes: int = 20) -> np.ndarray:
    """Approximate EI argmax inside the box (deterministic given rng state).

    Scores uniform random candidates on the unit cube, then walks the best
    few coordinate-wise with a shrinking step.
    """
    d = box.dim
    cand = rng.uniform(size=(n_candidates, d))
    scores = expected_improvement(model, cand, y_best)
    order = np.argsort(scores)[::-1]
    starts = cand[order[:n_refine_starts]]

    best_z = starts[0].copy()
    best_ei = float(scores[order[0]])
    for z0 in starts:
        z = z0.copy()
        ei_z = float(expected_improvement(model, z, y_best))
        step = 0.1
        for _ in range(refine_passes):
            improved = False
            for k in range(d):
                for sgn in (1.0, -1.0):
                    trial = z.copy()
                    trial[k] = min(1.0, max(0.0, trial[k] + sgn * step))
                    ei_t = float(expected_improvement(model, trial, y_best))
                    if ei_t > ei_z:
                        z, ei_z = trial, ei_t
                        improved = True
            if not improved:
                step *= 0.5
                if step < 1e-4:
                    break
        if ei_z > best_ei:
            best_z, best_ei = z, ei_z
    return box.from_unit(best_z)


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("APID_THREADS", "1")))
    except ValueError:
        return 1


def optimize(objective, box: SearchBox, budget: int, n_init: int = 5,
             seed: int = 42, kernel: gp.KernelParams | None = None,
             length_scale_grid=None) -> BoTrace:
    """Sequential EI minimization of ``objective`` over the box.

    Evaluates n_init Latin-hypercube points, then budget - n_init
    EI-maximizing points.  An objective that raises SimulationDiverged or
    returns a non-finite value is recorded with a penalty cost (twice the
    worst finite cost so far) so the surrogate learns to avoid the region.
    """
    if not budget >= n_init >= 1:
        raise ValueError("need budget >= n_init >= 1")
    kernel = kernel or gp.KernelParams()
    rng = np.random.default_rng(seed)
    sampler = qmc.LatinHypercube(d=box.dim, seed=rng)
    z_init = sampler.random(n=n_init)

    xs: list[np.ndarray] = []
    costs: list[float] = []
    worst_finite = None

    def record(x, raw_cost):
        nonlocal worst_finite
        if raw_cost is None or not np.isfinite(raw_cost):
            cost = FIRST_FAILURE_COST if worst_finite is None else 2.0 * worst_finite
        else:
            cost = float(raw_cost)
            worst_finite = cost if worst_finite is None else max(worst_finite, cost)
        xs.append(np.asarray(x, dtype=float))
        costs.append(cost)

    def safe_eval(x):
        try:
            return objective(x)
        except SimulationDiverged:
            return None

    init_points = [box.from_unit(z) for z in z_init]
    workers = _worker_count()
    if workers > 1 and len(init_points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(safe_eval, init_points))
    else:
        raw = [safe_eval(x) for x in init_points]
    for x, rc in zip(init_points, raw):
        record(x, rc)

    for _ in range(budget - n_init):
        Z = np.array([box.to_unit(x) for x in xs])
        model = gp.fit(Z, -np.asarray(costs), kernel)
        if length_scale_grid is not None:
            model = gp.fit(Z, -np.asarray(costs),
                           gp.select_length_scale(Z, -np.asarray(costs), kernel,
                                                  grid=length_scale_grid))
        y_best = float(np.max(-np.asarray(costs)))
        x_next = propose_next(model, box, y_best, rng)
        record(x_next, safe_eval(x_next))

    iters = []
    best = math.inf
    for i, (x, c) in enumerate(zip(xs, costs), start=1):
        best = min(best, c)
        iters.append(BoIteration(iteration=i, params=x, cost=c, best_so_far=best))
    return BoTrace(seed=seed, names=box.names, iterations=tuple(iters))


def write_trace_csv(trace: BoTrace, path) -> None:
    """CSV trace: iteration, one column per parameter, cost, best_so_far."""
    with open(path, "w") as fh:
        fh.write("iteration," + ",".join(trace.names) + ",cost,best_so_far\n")
        for it in trace.iterations:
            fh.write(csv_line([it.iteration, *map(float, it.params),
                               it.cost, it.best_so_far]))
