"""Forward solvers: Euler for rectified flow, DDIM for the diffusion comparison.

Grid convention: sigmas[0] = 0 is the noise end, sigmas[T] = 1 the data end.
The DDIM schedule uses the same orientation (alphas_bar[0] small, ~1 at index T).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ConfigError, InvalidArgumentError, NumericalError
from .fields import VelocityField


@dataclass(frozen=True)
class TimeGrid:
    sigmas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))
        s = self.sigmas
        if s.ndim != 1 or s.size < 2:
            raise ConfigError("grid needs at least two nodes")
        if s[0] != 0.0 or s[-1] != 1.0:
            raise ConfigError("grid endpoints must be exactly 0 and 1")
        if np.any(np.diff(s) <= 0):
            raise ConfigError("grid must be strictly increasing")

    @property
    def steps(self) -> int:
        return self.sigmas.size - 1

    @classmethod
    def uniform(cls, steps: int, shift: float | None = None) -> "TimeGrid":
        """Uniform grid with T steps; optional timestep-shift transform
        sigma -> shift*sigma / (1 + (shift - 1)*sigma), which fixes both endpoints."""
        if steps < 1:
            raise ConfigError("steps must be >= 1")
        s = np.linspace(0.0, 1.0, steps + 1)
        if shift is not None and shift != 1.0:
            s = shift * s / (1.0 + (shift - 1.0) * s)
            s[0], s[-1] = 0.0, 1.0
        return cls(s)


@dataclass(frozen=True)
class DiffusionSchedule:
    """abar_t values, indexed noise end (t=0, small) to data end (t=T, ~1)."""

    alphas_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alphas_bar", np.asarray(self.alphas_bar, dtype=np.float64))
        ab = self.alphas_bar
        if np.any(ab <= 0) or np.any(ab > 1):
            raise ConfigError("alphas_bar must lie in (0, 1]")
        if np.any(np.diff(ab) < 0):
            raise ConfigError("alphas_bar must be nondecreasing toward the data end")
        if ab[-1] < 0.999:
            raise ConfigError("alphas_bar at the data end must be ~1")

    @property
    def steps(self) -> int:
        return self.alphas_bar.size - 1

    @classmethod
    def cosine(cls, steps: int = 50, squash: float = 0.999) -> "DiffusionSchedule":
        u = np.linspace(0.0, 1.0, steps + 1)
        ab = np.cos((1.0 - u) * squash * np.pi / 2.0) ** 2
        return cls(ab)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: list[np.ndarray]
    cond: tuple | None = None

    def __post_init__(self):
        if len(self.states) != self.grid.sigmas.size:
            raise InvalidArgumentError("need one state per grid node")

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]


def cfg_velocity(field: VelocityField, x, sigma: float, cond, w: float) -> np.ndarray:
    """Classifier-free guidance: v_u + w*(v_c - v_u). w=1 is the conditional
    velocity bitwise, w=0 the unconditional one."""
    if cond is None or w == 1.0:
        return field.velocity(x, sigma, cond)
    if field.supports_conditioning and not getattr(field, "supports_null_condition", True):
        raise CapabilityError("field does not support null-condition evaluation")
    v_u = field.velocity(x, sigma, None)
    if w == 0.0:
        return v_u
    v_c = field.velocity(x, sigma, cond)
    return v_u + w * (v_c - v_u)


def guided_velocity(field: VelocityField, x, sigma: float, cond=None, w: float = 1.0) -> np.ndarray:
    """Velocity under optional conditioning and guidance weight."""
    if cond is None:
        return field.velocity(x, sigma, None)
    return cfg_velocity(field, x, sigma, cond, w)


def _check_step_index(t: int, grid: TimeGrid):
    if not 0 <= t < grid.steps:
        raise InvalidArgumentError(f"step index {t} out of range [0, {grid.steps})")


def euler_step(field: VelocityField, x, t: int, grid: TimeGrid, cond=None, w: float = 1.0) -> np.ndarray:
    """x + (sigma_{t+1} - sigma_t) * v(x, sigma_t, cond)."""
    _check_step_index(t, grid)
    x = np.asarray(x, dtype=np.float64)
    dsig = grid.sigmas[t + 1] - grid.sigmas[t]
    return x + dsig * guided_velocity(field, x, grid.sigmas[t], cond, w)


def sample_ode(field: VelocityField, x0, grid: TimeGrid, cond=None, w: float = 1.0) -> Trajectory:
    """Integrate noise -> data with Euler steps, recording every grid node."""
    x = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("x0 must be finite")
    states = [x]
    for t in range(grid.steps):
        x = euler_step(field, x, t, grid, cond, w)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state after sampler step {t}")
        states.append(x)
    return Trajectory(grid, states, cond)


def ddim_predict_x0(score_field, x, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    """Predicted clean sample: (x - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)."""
    abar = float(schedule.alphas_bar[t])
    if abar <= 0:
        raise ConfigError(f"alphas_bar[{t}] must be > 0")
    x = np.asarray(x, dtype=np.float64)
    eps = score_field.predicted_noise(x, t)
    return (x - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)


def ddim_step(score_field, x, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    """One deterministic DDIM step toward the data end (t -> t+1)."""
    if not 0 <= t < schedule.steps:
        raise InvalidArgumentError(f"step index {t} out of range [0, {schedule.steps})")
    abar_next = float(schedule.alphas_bar[t + 1])
    x = np.asarray(x, dtype=np.float64)
    eps = score_field.predicted_noise(x, t)
    x0_pred = ddim_predict_x0(score_field, x, t, schedule)
    return np.sqrt(abar_next) * x0_pred + np.sqrt(1.0 - abar_next) * eps


def ddim_sample(score_field, x_noise, schedule: DiffusionSchedule) -> Trajectory:
    """Run the full DDIM chain from the noise end; returns states at every index."""
    x = np.asarray(x_noise, dtype=np.float64)
    states = [x]
    for t in range(schedule.steps):
        x = ddim_step(score_field, x, t, schedule)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state after DDIM step {t}")
        states.append(x)
    grid = TimeGrid(np.linspace(0.0, 1.0, schedule.steps + 1))
    return Trajectory(grid, states)


def rescaled_ddim_check(score_field, x, t: int, schedule: DiffusionSchedule) -> float:
    """Residual of the first-order identity in the rescaled variable y = x / sqrt(abar).

    The DDIM step satisfies y_{t+1} = y_t + (lam_{t+1} - lam_t) * eps_hat with
    lam = sqrt((1 - abar) / abar); this is algebraic, so the residual is rounding only.
    """
    abar_t = float(schedule.alphas_bar[t])
    abar_next = float(schedule.alphas_bar[t + 1])
    x = np.asarray(x, dtype=np.float64)
    eps = score_field.predicted_noise(x, t)
    x_next = ddim_step(score_field, x, t, schedule)
    y_t = x / np.sqrt(abar_t)
    y_next = x_next / np.sqrt(abar_next)
    lam_t = np.sqrt((1.0 - abar_t) / abar_t)
    lam_next = np.sqrt((1.0 - abar_next) / abar_next)
    return float(np.max(np.abs(y_next - y_t - (lam_next - lam_t) * eps)))
