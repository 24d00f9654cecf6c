"""Generative processes: probability-flow ODE, reverse SDE, and conversions.

Five step modes are supported, named by the exact strings the harness
accepts:

* ``linear-ode``: deterministic Euler steps on the source velocity field.
* ``linear-sde``: Euler-Maruyama on the marginal-preserving reverse SDE,
  drift ``u - (g^2/2) * score`` with the score recovered from the velocity.
* ``vp-sde``: the same SDE after converting the trajectory to a target
  interpolant through the scale-time transform; the latent lives in the
  target coordinates and the velocity oracle is queried at the matched
  source time.
* ``linear-sde-adaptive-time``: linear-sde stepped on the source-time grid
  ``{t_s}`` induced by the uniform target grid (matched log-SNR timesteps).
* ``linear-sde-scaled-diffusion``: the same matched grid, with the
  coefficient rescaled to ``g_s / c_s * sqrt(ds/dt_s)`` so each step injects
  the converted process's noise magnitude in source coordinates.

A trajectory's ``t`` is always the *plan* time (the grid coordinate); for
the matched-grid modes the latent's physical source time is
``latent_time(plan, t)``.

One velocity-oracle call is made per step, and ``nfe_used`` counts exactly
those calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .interpolants import (
    T_MIN,
    InterpolantSchedule,
    ScaleTimeMap,
    eval_schedule,
    scale_time_transform,
)

PROCESS_NAMES = (
    "linear-ode",
    "linear-sde",
    "linear-sde-adaptive-time",
    "linear-sde-scaled-diffusion",
    "vp-sde",
)
# Modes that step in converted (target-interpolant) coordinates.
_CONVERTED = ("vp-sde",)
# Modes that step in source coordinates on the matched time grid.
_MATCHED_GRID = ("linear-sde-adaptive-time", "linear-sde-scaled-diffusion")

_FINAL_EPS = 1e-12


@dataclass(frozen=True)
class DiffusionCoefficient:
    """Power-law noise schedule g(t) = norm * t**exponent."""

    norm: float = 3.0
    exponent: float = 2.0

    def __post_init__(self) -> None:
        if self.norm < 0.0 or self.exponent < 0.0:
            raise DomainError("diffusion coefficient needs norm, exponent >= 0")

    def __call__(self, t: float) -> float:
        return self.norm * t**self.exponent

    @classmethod
    def zero(cls) -> "DiffusionCoefficient":
        return cls(norm=0.0, exponent=2.0)


@dataclass(frozen=True)
class TrajectoryState:
    """A latent point, its plan time, and the velocity calls spent on it."""

    x: np.ndarray
    t: float
    nfe_used: int = 0


def make_time_grid(steps: int, mode: str = "uniform") -> np.ndarray:
    """Decreasing time grid from 1 to 0 with ``steps`` intervals.

    ``adaptive`` remaps the uniform grid through t -> sqrt(1 - (1-t)^2),
    giving finer spacing near t=1 and coarser near t=0.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    grid = np.linspace(1.0, 0.0, steps + 1)
    if mode == "uniform":
        return grid
    if mode == "adaptive":
        out = np.sqrt(np.clip(1.0 - (1.0 - grid) ** 2, 0.0, 1.0))
        out[0], out[-1] = 1.0, 0.0
        return out
    raise DomainError(f"unknown grid mode: {mode!r}")


@dataclass(eq=False)
class StepPlan:
    """Everything fixed about a generative run: mode, schedules, noise, grid."""

    process: str
    src_schedule: InterpolantSchedule
    dst_schedule: InterpolantSchedule
    diffusion: DiffusionCoefficient
    grid: np.ndarray
    _maps: dict = field(default_factory=dict, repr=False)
    _times: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.process not in PROCESS_NAMES:
            raise DomainError(f"unknown process: {self.process!r}")
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise DomainError("grid must be a 1-D sequence of at least 2 times")
        if grid[0] != 1.0 or grid[-1] != 0.0 or np.any(np.diff(grid) >= 0.0):
            raise DomainError("grid must decrease strictly from 1 to 0")
        if self.process == "linear-ode" and self.diffusion.norm != 0.0:
            raise DomainError("linear-ode requires a zero diffusion coefficient")
        if self.process in _MATCHED_GRID and self.src_schedule == self.dst_schedule:
            raise DomainError(f"{self.process} needs distinct src/dst schedules")
        self.grid = grid

    @property
    def steps(self) -> int:
        return self.grid.size - 1

    def scale_map(self, s: float) -> ScaleTimeMap:
        """Scale-time map at plan time ``s`` (cached per grid point)."""
        m = self._maps.get(s)
        if m is None:
            m = scale_time_transform(self.src_schedule, self.dst_schedule, max(s, T_MIN))
            self._maps[s] = m
        return m

    def latent_time(self, s: float) -> float:
        """Physical source time of the latent when the plan clock reads s."""
        if self.process not in _MATCHED_GRID:
            return s
        if s <= _FINAL_EPS:
            return 0.0
        t = self._times.get(s)
        if t is None:
            t = self.scale_map(s).t_s
            self._times[s] = t
        return t

    def value_schedule(self) -> InterpolantSchedule:
        """Schedule in whose coordinates the latent lives (for Tweedie)."""
        if self.process in _CONVERTED:
            return self.dst_schedule
        return self.src_schedule

    def is_stochastic(self) -> bool:
        return self.process != "linear-ode" and self.diffusion.norm != 0.0


def make_plan(
    process: str,
    steps: int,
    diffusion: DiffusionCoefficient | None = None,
    src_schedule: InterpolantSchedule | None = None,
    dst_schedule: InterpolantSchedule | None = None,
    grid_mode: str = "uniform",
) -> StepPlan:
    """Build a StepPlan with the conventional defaults for each mode."""
    src = src_schedule if src_schedule is not None else InterpolantSchedule("linear")
    if dst_schedule is not None:
        dst = dst_schedule
    elif process in _CONVERTED or process in _MATCHED_GRID:
        dst = InterpolantSchedule("vp")
    else:
        dst = src
    if diffusion is None:
        diffusion = DiffusionCoefficient.zero() if process == "linear-ode" else DiffusionCoefficient()
    return StepPlan(
        process=process,
        src_schedule=src,
        dst_schedule=dst,
        diffusion=diffusion,
        grid=make_time_grid(steps, grid_mode),
    )


def deterministic_plan(plan: StepPlan) -> StepPlan:
    """The probability-flow (g = 0) counterpart of a plan, same grid and
    conversion; used wherever trajectories must be completed without noise."""
    if plan.diffusion.norm == 0.0:
        return plan
    return StepPlan(
        process=plan.process,
        src_schedule=plan.src_schedule,
        dst_schedule=plan.dst_schedule,
        diffusion=DiffusionCoefficient(norm=0.0, exponent=plan.diffusion.exponent),
        grid=plan.grid,
    )


def score_from_velocity(
    sched: InterpolantSchedule, t: float, x: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Recover grad log p_t from the velocity field at the same point."""
    if not T_MIN <= t <= 1.0:
        raise DomainError(f"score-from-velocity needs t in [{T_MIN}, 1], got {t}")
    alpha, sigma, alpha_dot, sigma_dot = eval_schedule(sched, t)
    denom = alpha_dot * sigma - alpha * sigma_dot
    return (alpha * u - alpha_dot * x) / (sigma * denom)


def drift(
    sched: InterpolantSchedule,
    diffusion: DiffusionCoefficient,
    t: float,
    x: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Reverse-SDE drift u - (g^2/2) * score; equals u when g = 0."""
    g = diffusion(t)
    if g == 0.0:
        return u
    return u - 0.5 * g * g * score_from_velocity(sched, t, x, u)


def ode_step(state: TrajectoryState, dt: float, u: np.ndarray) -> TrajectoryState:
    """One backward Euler step x <- x - u dt; charges the velocity call."""
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    if dt > state.t + _FINAL_EPS:
        raise DomainError(f"dt={dt} overshoots t={state.t}")
    return TrajectoryState(x=state.x - u * dt, t=state.t - dt, nfe_used=state.nfe_used + 1)


def sde_step(
    state: TrajectoryState,
    dt: float,
    u: np.ndarray,
    z: np.ndarray,
    diffusion: DiffusionCoefficient,
    sched: InterpolantSchedule,
) -> TrajectoryState:
    """One Euler-Maruyama step of the reverse SDE.

    The proposal is Gaussian with mean x - f dt and variance g^2 dt; g is
    evaluated at the interval's left (noisier) endpoint.
    """
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    if dt > state.t + _FINAL_EPS:
        raise DomainError(f"dt={dt} overshoots t={state.t}")
    if state.t < T_MIN:
        raise DomainError(f"sde step needs t >= {T_MIN}, got {state.t}")
    f = drift(sched, diffusion, state.t, state.x, u)
    g = diffusion(state.t)
    x_new = state.x - f * dt + g * math.sqrt(dt) * z
    return TrajectoryState(x=x_new, t=state.t - dt, nfe_used=state.nfe_used + 1)


def transform_velocity(
    src: InterpolantSchedule,
    dst: InterpolantSchedule,
    s: float,
    x_bar: np.ndarray,
    query,
) -> np.ndarray:
    """Velocity of the converted process at (x_bar, s).

    ``query(x, t)`` must return the source velocity.  Exactly one query is
    issued; identity conversions pass the arguments through untouched.
    """
    m = scale_time_transform(src, dst, s)
    if m.is_identity:
        return query(x_bar, s)
    return (m.c_dot / m.c_s) * x_bar + (m.c_s * m.t_dot) * query(x_bar / m.c_s, m.t_s)


def denoise_interval(
    plan: StepPlan,
    x: np.ndarray,
    s_left: float,
    s_right: float,
    z: np.ndarray | None,
    velocity,
) -> np.ndarray:
    """Advance the latent over one grid interval; exactly one velocity call.

    The final interval (landing at time 0) is integrated with g forced to 0
    and the velocity evaluated no lower than T_MIN: 1/sigma is singular at 0
    and with g ~ t^2 the discarded noise is O(T_MIN^2).
    """
    final = s_right <= _FINAL_EPS
    if plan.process in _MATCHED_GRID:
        t_left = plan.latent_time(s_left)
        t_right = plan.latent_time(s_right)
        dt = t_left - t_right
        t_eval = max(t_left, T_MIN)
        u = velocity(x, t_eval)
        if final or plan.diffusion.norm == 0.0:
            return x - u * dt
        if plan.process == "linear-sde-adaptive-time":
            g = plan.diffusion(t_left)
        else:  # scaled diffusion on the matched grid
            m = plan.scale_map(s_left)
            g = plan.diffusion(s_left) / m.c_s * math.sqrt((s_left - s_right) / dt)
        f = u - 0.5 * g * g * score_from_velocity(plan.src_schedule, t_eval, x, u)
        return x - f * dt + g * math.sqrt(dt) * z

    # Conversion family: latent lives in dst coordinates at plan time s.
    ds = s_left - s_right
    s_eval = max(s_left, T_MIN)
    m = plan.scale_map(s_left)
    if m.is_identity:
        u = velocity(x, s_eval)
    else:
        u = (m.c_dot / m.c_s) * x + (m.c_s * m.t_dot) * velocity(x / m.c_s, m.t_s)
    if final or plan.process == "linear-ode" or plan.diffusion.norm == 0.0:
        return x - u * ds
    g = plan.diffusion(s_left)
    f = u - 0.5 * g * g * score_from_velocity(plan.dst_schedule, s_eval, x, u)
    return x - f * ds + g * math.sqrt(ds) * z


def stoch_denoise(
    plan: StepPlan,
    state: TrajectoryState,
    ds: float,
    z: np.ndarray | None,
    velocity,
    s_next: float | None = None,
) -> TrajectoryState:
    """One-step stochastic denoising under the plan's mode.

    Composes the scale-time velocity transform, the score recovery, the
    reverse-SDE drift, and one Euler-Maruyama step; consumes exactly one
    velocity evaluation.  ``s_next`` pins the landing time to an exact grid
    value (otherwise ``state.t - ds`` is used).
    """
    if s_next is None:
        s_next = state.t - ds
    if s_next < -_FINAL_EPS:
        raise DomainError(f"step from t={state.t} by ds={ds} lands below 0")
    s_next = max(s_next, 0.0)
    x_new = denoise_interval(plan, state.x, state.t, s_next, z, velocity)
    return TrajectoryState(x=x_new, t=s_next, nfe_used=state.nfe_used + 1)


def run_process(
    plan: StepPlan,
    x1: np.ndarray,
    rng: np.random.Generator,
    velocity,
) -> tuple[np.ndarray, int]:
    """Integrate the full grid from noise to data.

    ``x1`` may be a single point ``(d,)`` or a batch ``(..., d)``; noise is
    drawn from ``rng`` once per stochastic interval for the whole batch.
    Returns the endpoint and the per-trajectory velocity-call count (one per
    grid interval).
    """
    x = np.asarray(x1, dtype=float)
    grid = plan.grid
    stochastic = plan.is_stochastic()
    for i in range(plan.steps):
        s_left, s_right = grid[i], grid[i + 1]
        z = None
        if stochastic and s_right > _FINAL_EPS:
            z = rng.standard_normal(x.shape)
        x = denoise_interval(plan, x, s_left, s_right, z, velocity)
    return x, plan.steps
