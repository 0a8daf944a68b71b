"""Coordinated predictive ramp metering on a discovered sparse model.

Every control step the controller solves, by single shooting, a short-horizon
tracking problem on the one-step Euler predictor ``x(l+1) = x(l) + h f(x, u)``:

    min over u(0..N-1) of
        sum_l [ (x(l) - target)' Q (x(l) - target) + du(l)' R du(l) ]
        + (x(N) - target)' P (x(N) - target)

with ``du(l) = u(l) - u(l-1)`` anchored at the previously applied rates,
rates boxed to the feasible meter range by projection, and occupancy bounds
enforced through a quadratic penalty. The solver is projected gradient
descent with a backtracking line search; gradients come from an adjoint sweep
over the model's polynomial Jacobians, so each iteration costs one rollout
forward and one pass backward. Only the first planned action is applied; the
rest warm starts the next solve.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .feedback import RATE_MAX_VPH, RATE_MIN_VPH
from .sysid import SparseModel

__all__ = [
    "ModelBlowupError",
    "SolverSettings",
    "MpcConfig",
    "MpcSolution",
    "rollout",
    "objective",
    "bound_penalty",
    "solve",
    "MpcController",
    "horizon_sweep",
]

logger = logging.getLogger(__name__)


class ModelBlowupError(RuntimeError):
    """A rollout left the finite range (model extrapolated into divergence)."""

    def __init__(self, step: int):
        super().__init__(f"model prediction diverged at rollout step {step}")
        self.step = step


@dataclass(frozen=True)
class SolverSettings:
    """Projected gradient solver knobs. Deterministic for fixed inputs."""

    max_iters: int = 200
    initial_step: float | None = None  # None: scaled from the first gradient
    backtrack_max: int = 40
    rel_tolerance: float = 1e-12  # minimum relative objective decrease


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights, bounds, and solver settings for one controller."""

    horizon: int = 4
    state_weight: float | np.ndarray = 1.0  # Q diagonal
    terminal_weight: float | np.ndarray = 1.0  # P diagonal
    rate_change_weight: float | np.ndarray = 0.0  # R diagonal
    target_occupancy_pct: float = 15.0
    occupancy_min_pct: float = 0.0
    occupancy_max_pct: float = 80.0
    rate_min_vph: float = RATE_MIN_VPH
    rate_max_vph: float = RATE_MAX_VPH
    bound_penalty_weight: float = 1e3
    step_h: float = 1.0  # Euler step, in control steps (model time units)
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rate_min_vph >= self.rate_max_vph:
            raise ValueError("rate bounds must satisfy min < max")
        if self.occupancy_min_pct >= self.occupancy_max_pct:
            raise ValueError("occupancy bounds must satisfy min < max")

    def weights(self, n: int, m: int):
        def diag(w, size, name):
            arr = np.asarray(w, dtype=float) * np.ones(size)
            if arr.shape != (size,):
                raise ValueError(f"{name} must broadcast to shape ({size},)")
            if (arr < 0).any():
                raise ValueError(f"{name} must be nonnegative")
            return arr

        return (diag(self.state_weight, n, "state_weight"),
                diag(self.terminal_weight, n, "terminal_weight"),
                diag(self.rate_change_weight, m, "rate_change_weight"))


@dataclass(frozen=True)
class MpcSolution:
    """One solve: planned rates, predicted states, and solver diagnostics."""

    plan: np.ndarray  # (N, m) veh/h
    states: np.ndarray  # (N+1, n) predicted occupancy %
    objective: float  # exact tracking objective
    penalty: float  # occupancy bound penalty at the solution
    iterations: int
    converged: bool
    solve_time_s: float


def rollout(model: SparseModel, x0, plan, h: float = 1.0) -> np.ndarray:
    """Euler rollout of the plan; states row 0 is ``x0``.

    Raises :class:`ModelBlowupError` (carrying the step index) if any state
    stops being finite; quadratic models can diverge when pushed far outside
    the data they were fit on.
    """
    plan = np.atleast_2d(np.asarray(plan, dtype=float))
    x = np.asarray(x0, dtype=float).reshape(-1)
    states = np.empty((len(plan) + 1, len(x)))
    states[0] = x
    for l in range(len(plan)):
        x = x + h * model.evaluate(x, plan[l])
        if not np.all(np.isfinite(x)):
            raise ModelBlowupError(l + 1)
        states[l + 1] = x
    return states


def objective(states: np.ndarray, plan: np.ndarray, u_prev, cfg: MpcConfig) -> float:
    """Exact tracking objective for a rolled-out plan (no bound penalty).

    Includes the (constant) deviation of the measured state at stage 0, so
    the value is comparable across solvers that report the full cost.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    plan = np.atleast_2d(np.asarray(plan, dtype=float))
    if len(states) != len(plan) + 1:
        raise ValueError("need exactly one more state row than plan rows")
    q, p, r = cfg.weights(states.shape[1], plan.shape[1])
    dev = states - cfg.target_occupancy_pct
    du = np.diff(np.vstack([np.asarray(u_prev, dtype=float).reshape(1, -1), plan]),
                 axis=0)
    stage = float(np.sum(dev[:-1] ** 2 @ q) + np.sum(du ** 2 @ r))
    terminal = float(dev[-1] ** 2 @ p)
    return stage + terminal


def bound_penalty(states: np.ndarray, cfg: MpcConfig) -> float:
    """Quadratic penalty for occupancy bound violations at stages 1..N."""
    interior = np.atleast_2d(states)[1:]
    over = np.maximum(interior - cfg.occupancy_max_pct, 0.0)
    under = np.maximum(cfg.occupancy_min_pct - interior, 0.0)
    return float(cfg.bound_penalty_weight * np.sum(over ** 2 + under ** 2))


def _stage_state_grad(x: np.ndarray, weight: np.ndarray, cfg: MpcConfig,
                      penalized: bool) -> np.ndarray:
    grad = 2.0 * weight * (x - cfg.target_occupancy_pct)
    if penalized:
        over = np.maximum(x - cfg.occupancy_max_pct, 0.0)
        under = np.maximum(cfg.occupancy_min_pct - x, 0.0)
        grad += 2.0 * cfg.bound_penalty_weight * (over - under)
    return grad


def _gradient(model: SparseModel, states: np.ndarray, plan: np.ndarray,
              u_prev: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    """Adjoint gradient of (objective + bound penalty) with respect to the plan."""
    n_steps = len(plan)
    q, p, r = cfg.weights(states.shape[1], plan.shape[1])
    h = cfg.step_h
    jac_x, jac_u = zip(*(model.jacobian(states[l], plan[l])
                         for l in range(n_steps)))
    grad = np.empty_like(plan)
    lam = _stage_state_grad(states[n_steps], p, cfg, penalized=True)
    for l in range(n_steps - 1, -1, -1):
        grad[l] = h * (jac_u[l].T @ lam)
        before = u_prev if l == 0 else plan[l - 1]
        grad[l] += 2.0 * r * (plan[l] - before)
        if l + 1 <= n_steps - 1:
            grad[l] -= 2.0 * r * (plan[l + 1] - plan[l])
        if l >= 1:
            lam = (_stage_state_grad(states[l], q, cfg, penalized=True)
                   + lam + h * (jac_x[l].T @ lam))
    return grad


def solve(model: SparseModel, x0, u_prev, cfg: MpcConfig,
          warm_start: np.ndarray | None = None) -> MpcSolution:
    """Minimize the tracking objective over feasible metering plans.

    Monotone in the penalized objective: an iterate is only accepted when it
    decreases the value, so the reported objective never exceeds the
    warm-start or cold-start value. Raises :class:`ModelBlowupError` only if
    the starting plan itself diverges.
    """
    t0 = time.perf_counter()
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    if len(u_prev) != model.input_dim:
        raise ValueError(f"u_prev must have {model.input_dim} entries")
    lo, hi = cfg.rate_min_vph, cfg.rate_max_vph
    if warm_start is not None:
        plan = np.clip(np.asarray(warm_start, dtype=float), lo, hi).copy()
        if plan.shape != (cfg.horizon, model.input_dim):
            raise ValueError("warm start shape must be (horizon, input_dim)")
    else:
        plan = np.tile(np.clip(u_prev, lo, hi), (cfg.horizon, 1))

    def measure(candidate):
        try:
            states = rollout(model, x0, candidate, cfg.step_h)
        except ModelBlowupError:
            return None, np.inf, np.inf
        track = objective(states, candidate, u_prev, cfg)
        return states, track, track + bound_penalty(states, cfg)

    states, track, total = measure(plan)
    if states is None:
        raise ModelBlowupError(0)

    settings = cfg.solver
    alpha = settings.initial_step
    iterations = 0
    converged = False
    for it in range(settings.max_iters):
        iterations = it + 1
        grad = _gradient(model, states, plan, u_prev, cfg)
        g_max = float(np.max(np.abs(grad)))
        if g_max * (hi - lo) <= settings.rel_tolerance * (1.0 + abs(total)):
            converged = True
            break
        if alpha is None:
            alpha = 0.25 * (hi - lo) / g_max
        improved = False
        step = alpha
        for _ in range(settings.backtrack_max):
            candidate = np.clip(plan - step * grad, lo, hi)
            if np.array_equal(candidate, plan):
                break  # projection fixed point: no feasible descent this way
            cand_states, cand_track, cand_total = measure(candidate)
            if cand_total < total - settings.rel_tolerance * (1.0 + abs(total)):
                plan, states = candidate, cand_states
                track, total = cand_track, cand_total
                alpha = step * 2.0
                improved = True
                break
            step *= 0.5
        if not improved:
            converged = True
            break

    return MpcSolution(
        plan=plan,
        states=states,
        objective=track,
        penalty=total - track,
        iterations=iterations,
        converged=converged,
        solve_time_s=time.perf_counter() - t0,
    )


class MpcController:
    """Receding-horizon metering: solve, apply the first action, remember.

    Compatible with :func:`rampnet.plant.run_episode`. Never raises out of a
    control step: if the solver cannot even evaluate its starting plan (a
    diverging model), the previous rates are reapplied and the event is
    logged and recorded in the diagnostics.
    """

    def __init__(self, model: SparseModel, config: MpcConfig | None = None,
                 initial_rate_vph: float = 1000.0):
        self.model = model
        self.config = config or MpcConfig()
        self.u_prev = np.full(model.input_dim, float(initial_rate_vph))
        self.last_plan: np.ndarray | None = None
        self.diagnostics: list[dict] = []

    def _warm_start(self) -> np.ndarray | None:
        if self.last_plan is None:
            return None
        return np.vstack([self.last_plan[1:], self.last_plan[-1:]])

    def __call__(self, observation) -> np.ndarray:
        entry: dict = {"time_s": float(observation.time_s), "fallback": False}
        try:
            sol = solve(self.model, observation.occupancy, self.u_prev,
                        self.config, warm_start=self._warm_start())
            action = sol.plan[0]
            self.last_plan = sol.plan
            entry.update(objective=sol.objective, penalty=sol.penalty,
                         iterations=sol.iterations, converged=sol.converged,
                         solve_time_s=sol.solve_time_s)
        except ModelBlowupError as exc:
            logger.warning("solve failed (%s); reapplying previous rates", exc)
            action = self.u_prev.copy()
            self.last_plan = None
            entry["fallback"] = True
        self.u_prev = np.asarray(action, dtype=float).copy()
        self.diagnostics.append(entry)
        return action


def horizon_sweep(model: SparseModel, config, horizons=range(3, 8),
                  seeds=(0,), mpc_config: MpcConfig | None = None) -> list[dict]:
    """Run full episodes at each horizon; report tracking and cost figures.

    Returns one dict per horizon with the mean absolute occupancy deviation,
    mean sensor flow, mean per-solve time, and wall-clock runtime, averaged
    over the given seeds.
    """
    from .plant import run_episode  # local import: plant does not need mpc

    base = mpc_config or MpcConfig()
    if isinstance(seeds, (int, np.integer)):
        seeds = (int(seeds),)
    rows = []
    for n in horizons:
        cfg = replace(base, horizon=int(n))
        deviations, flows, solve_ms = [], [], []
        started = time.perf_counter()
        for seed in seeds:
            controller = MpcController(model, cfg)
            record = run_episode(config, controller, seed=int(seed))
            deviations.append(
                np.mean(np.abs(record.occupancy - cfg.target_occupancy_pct)))
            flows.append(np.mean(record.flow))
            times = [d["solve_time_s"] for d in controller.diagnostics
                     if "solve_time_s" in d]
            solve_ms.append(1e3 * float(np.mean(times)) if times else np.nan)
        rows.append({
            "horizon": int(n),
            "mean_abs_deviation_pct": float(np.mean(deviations)),
            "mean_flow_vph": float(np.mean(flows)),
            "mean_solve_ms": float(np.mean(solve_ms)),
            "runtime_s": time.perf_counter() - started,
        })
    return rows
