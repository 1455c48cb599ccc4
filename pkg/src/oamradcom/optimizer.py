"""Beam-weight search: minimise the summed PCRB under a minimum-rate constraint."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import SINGULAR_COND, SINR_CAP, channel_matrix, mode_fisher
from .forward import OamSystemConfig, beam_matrix

FEASIBILITY_TOL = 1e-9
GRID_BUDGET = 2_000_000
EXHAUSTIVE_MAX_MODES = 6
RANDOM_STARTS = 8


class OptimizerError(ValueError):
    pass


class InfeasibleError(OptimizerError):
    """No candidate meets the rate constraint."""

    def __init__(self, r_min: float, best_weights, best_rate: float):
        self.r_min = r_min
        self.best_weights = np.asarray(best_weights)
        self.best_rate = best_rate
        self.gap = r_min - best_rate
        super().__init__(f"no candidate reaches R_min = {r_min:g}; best rate {best_rate:.6g} "
                         f"(gap {self.gap:.3g}) at weights {np.round(self.best_weights, 4).tolist()}")


def _normalise(levels) -> np.ndarray:
    a = np.asarray(levels, dtype=float)
    return a / np.sqrt(np.sum(a * a, axis=-1, keepdims=True))


def weight_grid(n_modes: int, n_levels: int, budget: int = GRID_BUDGET):
    """Unit-power weight vectors from the level grid ``{1..N}/N`` per mode.

    Proportional level vectors normalise to the same point, so only those
    whose levels share no common factor are yielded.
    """
    if n_levels < 2:
        raise OptimizerError("need at least two weight levels")
    if n_modes < 1:
        raise OptimizerError("need at least one mode")
    if n_modes * math.log(n_levels) > math.log(budget):
        raise OptimizerError(f"{n_levels}^{n_modes} grid points exceed the budget of {budget}; "
                             "use the coordinate sweep")
    for levels in itertools.product(range(1, n_levels + 1), repeat=n_modes):
        if math.gcd(*levels) == 1:
            yield _normalise(levels)


@dataclass
class WeightProblem:
    """Everything needed to score a weight vector without touching the scene again.

    ``fisher_modes`` holds the unit-weight Fisher contribution of each mode;
    ``channel_gain`` and ``residual`` describe the zero-forcing link per
    subcarrier and mode (true-to-estimated ratio minus one).
    """

    fisher_modes: np.ndarray      # (U, n, n)
    channel_gain: np.ndarray      # (W, U) |estimated effective channel|^2
    residual: np.ndarray          # (W, U) |g / g_hat - 1|^2
    noise_variance: float

    @property
    def n_modes(self) -> int:
        return self.fisher_modes.shape[0]

    def objective(self, weights) -> np.ndarray:
        """Summed PCRB for a batch of weight vectors ``(B, U)``; ``inf`` when singular."""
        a2 = np.atleast_2d(weights) ** 2
        j = np.einsum("bu,uij->bij", a2, self.fisher_modes)
        d = np.sqrt(np.maximum(np.einsum("bii->bi", j), 0.0))
        bad = np.any(d == 0, axis=1)
        d[d == 0] = 1.0
        normed = j / (d[:, :, None] * d[:, None, :])
        w, v = np.linalg.eigh(normed)
        bad |= w[:, 0] <= w[:, -1] / SINGULAR_COND
        w = np.where(w > 0, w, np.inf)
        diag = np.einsum("bik,bk->bi", v * v, 1.0 / w) / d ** 2
        out = diag.sum(axis=1)
        out[bad] = np.inf
        return out

    def sinr(self, weights) -> np.ndarray:
        """Per-(w, u) SINR for a batch of weight vectors, ``(B, W, U)``."""
        a2 = np.atleast_2d(weights)[:, None, :] ** 2
        noise = self.noise_variance / self.channel_gain[None]
        den = self.residual[None] * a2 + noise
        with np.errstate(divide="ignore"):
            out = np.where(den > 0, a2 / np.where(den > 0, den, 1.0), SINR_CAP)
        return np.minimum(out, SINR_CAP)

    def rate(self, weights) -> np.ndarray:
        s = self.sinr(weights)
        return np.log2(1.0 + s).sum(axis=(1, 2)) / self.n_modes


def build_problem(cfg: OamSystemConfig, targets, comm_target: int, times,
                  estimate=None) -> WeightProblem:
    """Precompute the per-mode Fisher blocks and the comm-link terms.

    ``estimate`` is the receiver's channel ``(W, M)``; ``None`` means perfect CSI.
    """
    if not 0 <= comm_target < len(targets):
        raise OptimizerError(f"communication target {comm_target} out of range")
    fm = mode_fisher(cfg, targets, times)
    h = channel_matrix(cfg, targets[comm_target])
    h_hat = h if estimate is None else np.asarray(estimate)
    f = beam_matrix(cfg)
    g = h @ f
    g_hat = h_hat @ f
    gain = np.abs(g_hat) ** 2
    if np.any(gain <= 1e-300):
        raise OptimizerError("estimated effective channel is rank deficient")
    return WeightProblem(fm, gain, np.abs(g / g_hat - 1.0) ** 2, cfg.noise_variance)


@dataclass
class OptimizationResult:
    weights: np.ndarray
    objective: float
    rate: float
    evaluated: int
    feasible: int
    method: str = "exhaustive"
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if abs(np.sum(self.weights ** 2) - 1.0) > 1e-12:
            raise OptimizerError("returned weights are not unit power")


def _better(a, b) -> bool:
    """Order candidates ``(objective, rate, weights)``: lower objective, then
    higher rate, then lexicographically smaller weights."""
    if a[0] != b[0]:
        return a[0] < b[0]
    if a[1] != b[1]:
        return a[1] > b[1]
    return tuple(a[2]) < tuple(b[2])


class _Tracker:
    """Keeps the best feasible and the best-rate candidate seen so far."""

    def __init__(self, r_min: float, record: bool):
        self.r_min = r_min
        self.best = None
        self.best_rate = None
        self.evaluated = 0
        self.feasible = 0
        self.history = [] if record else None

    def add(self, weights: np.ndarray, objective: np.ndarray, rate: np.ndarray) -> np.ndarray:
        ok = rate >= self.r_min - FEASIBILITY_TOL
        self.evaluated += len(rate)
        self.feasible += int(ok.sum())
        for i in range(len(rate)):
            cand = (float(objective[i]), float(rate[i]), weights[i])
            if self.history is not None:
                self.history.append((self.evaluated - len(rate) + i, weights[i].copy(),
                                     cand[0], cand[1], bool(ok[i])))
            if ok[i] and (self.best is None or _better(cand, self.best)):
                self.best = cand
            if self.best_rate is None or cand[1] > self.best_rate[1]:
                self.best_rate = cand
        return ok


def _exhaustive(problem: WeightProblem, n_levels: int, tracker: _Tracker, chunk: int = 4096):
    grid = weight_grid(problem.n_modes, n_levels)
    while True:
        batch = list(itertools.islice(grid, chunk))
        if not batch:
            break
        w = np.array(batch)
        tracker.add(w, problem.objective(w), problem.rate(w))


def _sweep_key(obj, rate, ok, weights):
    # feasible points first, ranked as in the final selection; infeasible by rate
    if ok:
        return (0, obj, -rate, tuple(weights))
    return (1, -rate, obj, tuple(weights))


def _coordinate_sweep(problem: WeightProblem, n_levels: int, tracker: _Tracker,
                      seed: int, starts: int, max_rounds: int = 50):
    rng = np.random.default_rng(seed)
    n = problem.n_modes
    inits = [np.full(n, n_levels)]
    inits += [rng.integers(1, n_levels + 1, size=n) for _ in range(starts)]
    levels_axis = np.arange(1, n_levels + 1)
    for levels in inits:
        levels = levels.copy()
        w0 = _normalise(levels)[None]
        ok = tracker.add(w0, problem.objective(w0), problem.rate(w0))
        current = _sweep_key(problem.objective(w0)[0], problem.rate(w0)[0], ok[0], w0[0])
        for _ in range(max_rounds):
            moved = False
            for u in range(n):
                cand = np.repeat(levels[None], n_levels, axis=0)
                cand[:, u] = levels_axis
                w = _normalise(cand)
                obj, rate = problem.objective(w), problem.rate(w)
                ok = tracker.add(w, obj, rate)
                keys = [_sweep_key(obj[i], rate[i], ok[i], w[i]) for i in range(n_levels)]
                best = min(range(n_levels), key=lambda i: keys[i])
                if keys[best] < current:
                    current = keys[best]
                    levels = cand[best]
                    moved = True
            if not moved:
                break


def optimize_weights(cfg: OamSystemConfig, targets, comm_target: int, r_min: float,
                     n_levels: int, times=None, estimate=None, method: str = "auto",
                     seed: int = 0, starts: int = RANDOM_STARTS, record: bool = False,
                     problem: WeightProblem | None = None) -> OptimizationResult:
    """Search the weight grid for the smallest summed PCRB with ``rate >= r_min``.

    ``method`` is ``"exhaustive"``, ``"sweep"`` or ``"auto"`` (exhaustive up
    to ``EXHAUSTIVE_MAX_MODES`` modes).  ``times`` are the slow-time instants
    entering the Fisher matrix.
    """
    if r_min < 0:
        raise OptimizerError("R_min must be >= 0")
    if problem is None:
        if times is None:
            raise OptimizerError("evaluation times are required")
        problem = build_problem(cfg, targets, comm_target, times, estimate)
    if method == "auto":
        method = "exhaustive" if problem.n_modes <= EXHAUSTIVE_MAX_MODES else "sweep"
    tracker = _Tracker(r_min, record)
    if method == "exhaustive":
        _exhaustive(problem, n_levels, tracker)
    elif method == "sweep":
        _coordinate_sweep(problem, n_levels, tracker, seed, starts)
    else:
        raise OptimizerError(f"unknown method {method!r}")
    if tracker.best is None:
        raise InfeasibleError(r_min, tracker.best_rate[2], tracker.best_rate[1])
    obj, rate, w = tracker.best
    return OptimizationResult(np.array(w), obj, rate, tracker.evaluated, tracker.feasible,
                              method, tracker.history or [])
