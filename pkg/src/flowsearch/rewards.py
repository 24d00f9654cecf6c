"""Reward functions, the posterior-mean value estimator, and guidance.

Rewards act on data space.  A latent at time t is valued through its Tweedie
posterior mean, v(x_t) = r(E[x0 | x_t]); at t=0 this is the reward itself.
For differentiable rewards the guided score adds (1/beta) * grad r(x0|t) to
the plain score, with the guidance gradient taken by central finite
differences through the posterior-mean map so reward kinds stay extensible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analytic_flow import GaussianMixtureModel, posterior_mean, rare_component, score_at
from .errors import DomainError
from .interpolants import T_MIN, InterpolantSchedule

REWARD_KINDS = ("target-point", "rare-mode", "ring")

_FD_STEP = 1e-4


@dataclass(frozen=True)
class RewardSpec:
    """A reward function plus the KL temperature used in exponential weights."""

    kind: str
    params: dict = field(default_factory=dict)
    kl_temperature: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in REWARD_KINDS:
            raise DomainError(f"unknown reward kind: {self.kind!r}")
        if self.kl_temperature <= 0.0:
            raise DomainError("kl_temperature must be positive")


def target_point_reward(target, kl_temperature: float = 0.1) -> RewardSpec:
    """r(x) = -||x - target||^2."""
    return RewardSpec(
        "target-point",
        {"target": np.asarray(target, dtype=float)},
        kl_temperature,
    )


def ring_reward(radius: float, kl_temperature: float = 0.1) -> RewardSpec:
    """r(x) = -(||x|| - radius)^2."""
    if radius <= 0.0:
        raise DomainError("ring radius must be positive")
    return RewardSpec("ring", {"radius": float(radius)}, kl_temperature)


def rare_mode_reward(
    gmm: GaussianMixtureModel,
    component: int | None = None,
    kl_temperature: float = 0.1,
) -> RewardSpec:
    """r(x) = log-density of one (by default the rarest) mixture component."""
    k = rare_component(gmm) if component is None else int(component)
    if not 0 <= k < gmm.n_components:
        raise DomainError(f"component {k} out of range")
    return RewardSpec(
        "rare-mode",
        {"mean": gmm.means[k].copy(), "variance": gmm.variances[k].copy()},
        kl_temperature,
    )


def evaluate_reward(spec: RewardSpec, x) -> np.ndarray | float:
    """Evaluate the reward at ``x`` of shape (d,) or any batch (..., d)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("reward argument must be finite")
    if spec.kind == "target-point":
        diff = x - spec.params["target"]
        out = -np.sum(diff * diff, axis=-1)
    elif spec.kind == "ring":
        out = -((np.linalg.norm(x, axis=-1) - spec.params["radius"]) ** 2)
    else:  # rare-mode: diagonal Gaussian log-density
        mean = spec.params["mean"]
        var = spec.params["variance"]
        diff = x - mean
        out = -0.5 * np.sum(diff * diff / var + np.log(2.0 * np.pi * var), axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ValueEstimate:
    """Expected-future-reward estimate of a latent: r(posterior mean)."""

    value: float | np.ndarray
    posterior_mean: np.ndarray
    nfe_charged: int


def estimate_value(
    spec: RewardSpec,
    gmm: GaussianMixtureModel,
    sched: InterpolantSchedule,
    t: float,
    x_t,
    step_paid: bool = True,
) -> ValueEstimate:
    """Value of a latent through its posterior mean.

    ``step_paid`` records whether the velocity evaluation for this latent at
    this time was already charged to the budget (it is, whenever the latent
    was produced by a charged denoising step); only a fresh latent, such as
    the initial noise, costs an extra call.
    """
    x0 = posterior_mean(gmm, sched, t, np.asarray(x_t, dtype=float))
    return ValueEstimate(
        value=evaluate_reward(spec, x0),
        posterior_mean=x0,
        nfe_charged=0 if step_paid else 1,
    )


def reward_gradient_through_posterior(
    spec: RewardSpec,
    gmm: GaussianMixtureModel,
    sched: InterpolantSchedule,
    t: float,
    x_t: np.ndarray,
    h: float = _FD_STEP,
) -> np.ndarray:
    """grad_x r(posterior_mean(x)) by central differences, batched over x."""
    x = np.asarray(x_t, dtype=float)
    d = x.shape[-1]
    grad = np.empty_like(x)
    for i in range(d):
        shift = np.zeros(d)
        shift[i] = h
        up = evaluate_reward(spec, posterior_mean(gmm, sched, t, x + shift))
        dn = evaluate_reward(spec, posterior_mean(gmm, sched, t, x - shift))
        grad[..., i] = (np.asarray(up) - np.asarray(dn)) / (2.0 * h)
    return grad


def guided_score(
    spec: RewardSpec,
    gmm: GaussianMixtureModel,
    sched: InterpolantSchedule,
    t: float,
    x_t,
) -> np.ndarray:
    """Score of the reward-tilted marginal: (1/beta) grad r(x0|t) + score."""
    if not T_MIN <= t <= 1.0 - T_MIN:
        raise DomainError(f"guided score needs t in [{T_MIN}, {1.0 - T_MIN}], got {t}")
    x = np.asarray(x_t, dtype=float)
    guidance = reward_gradient_through_posterior(spec, gmm, sched, t, x)
    return guidance / spec.kl_temperature + score_at(gmm, sched, t, x)
