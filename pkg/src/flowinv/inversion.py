"""Reverse-ODE machinery: naive Euler inversion, fixed-point refinement with
latent averaging, per-step velocity compensation, compensated regeneration,
and an exact inverse for affine fields used as an oracle."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    DivergenceError,
    InvalidArgumentError,
    SingularityError,
    StateError,
)
from .fields import LinearField, VelocityField
from .samplers import TimeGrid, Trajectory, _check_step_index, guided_velocity


@dataclass(frozen=True)
class FixedPointConfig:
    iterations: int = 3
    aggregation: str = "average"  # or "last"
    damping: float = 1.0  # 1 = undamped

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidArgumentError("iterations must be >= 0")
        if self.aggregation not in ("average", "last"):
            raise InvalidArgumentError(f"unknown aggregation {self.aggregation!r}")
        if not 0.0 < self.damping <= 1.0:
            raise InvalidArgumentError("damping must be in (0, 1]")


@dataclass
class StepDiagnostics:
    iterate_distances: list[float] = dc_field(default_factory=list)
    velocity_gap: float = 0.0


@dataclass
class InversionResult:
    """Trajectory stored noise -> data; compensations[t] maps x_t -> x_{t+1}."""

    trajectory: Trajectory
    compensations: list[np.ndarray]
    diagnostics: list[StepDiagnostics]
    cond: tuple | None = None
    guidance: float = 1.0

    @property
    def has_compensations(self) -> bool:
        return len(self.compensations) == self.trajectory.grid.steps


def naive_invert_step(field: VelocityField, x_next, t: int, grid: TimeGrid, cond=None, w: float = 1.0) -> np.ndarray:
    """Approximate inverse step: evaluate the velocity at the known later state.

    x_t ~= x_{t+1} + (sigma_t - sigma_{t+1}) * v(x_{t+1}, sigma_t, cond)
    """
    _check_step_index(t, grid)
    x_next = np.asarray(x_next, dtype=np.float64)
    dsig = grid.sigmas[t] - grid.sigmas[t + 1]
    return x_next + dsig * guided_velocity(field, x_next, grid.sigmas[t], cond, w)


def fixed_point_invert_step(
    field: VelocityField,
    x_next,
    t: int,
    grid: TimeGrid,
    cond=None,
    cfg: FixedPointConfig = FixedPointConfig(),
    w: float = 1.0,
) -> tuple[np.ndarray, StepDiagnostics]:
    """Refine the inverse step by iterating it on its own output.

    Starting from x^0 = x_{t+1}, iterate
        x^i = x_{t+1} + (sigma_t - sigma_{t+1}) * v(x^{i-1}, sigma_t, cond)
    for i = 1..I and aggregate (mean of the iterates, or the last one).
    I = 0 reduces exactly to naive_invert_step.
    """
    _check_step_index(t, grid)
    x_next = np.asarray(x_next, dtype=np.float64)
    diag = StepDiagnostics()
    if cfg.iterations == 0:
        return naive_invert_step(field, x_next, t, grid, cond, w), diag
    dsig = grid.sigmas[t] - grid.sigmas[t + 1]
    sigma_t = grid.sigmas[t]
    limit = 1e6 * max(float(np.linalg.norm(x_next)), 1.0)
    prev = x_next
    iterates = []
    for i in range(1, cfg.iterations + 1):
        proposal = x_next + dsig * guided_velocity(field, prev, sigma_t, cond, w)
        cur = proposal if cfg.damping == 1.0 else (1.0 - cfg.damping) * prev + cfg.damping * proposal
        diag.iterate_distances.append(float(np.linalg.norm(cur - prev)))
        if float(np.linalg.norm(cur)) > limit:
            raise DivergenceError(f"fixed-point iteration diverged at step t={t}, iterate i={i}")
        iterates.append(cur)
        prev = cur
    if cfg.aggregation == "average":
        out = sum(iterates) / len(iterates)
    else:
        out = iterates[-1]
    return out, diag


def exact_linear_invert_step(f: LinearField, x_next, t: int, grid: TimeGrid) -> np.ndarray:
    """Closed-form inverse Euler step for an affine field:
    x_t = (I - dsig*A(sigma_t))^{-1} (x_{t+1} + dsig*b(sigma_t)), dsig = sigma_t - sigma_{t+1}."""
    _check_step_index(t, grid)
    x_next = np.asarray(x_next, dtype=np.float64)
    dsig = grid.sigmas[t] - grid.sigmas[t + 1]
    a, b = f.coefficients(grid.sigmas[t])
    d = a.shape[0]
    m = np.eye(d) - dsig * a
    try:
        sol = np.linalg.solve(m, (x_next + dsig * b)[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"singular step matrix at t={t}") from exc
    return sol


def invert(
    field: VelocityField,
    x1,
    grid: TimeGrid,
    cond=None,
    cfg: FixedPointConfig = FixedPointConfig(),
    w: float = 1.0,
) -> InversionResult:
    """Walk the grid from the data end to the noise end with fixed-point steps."""
    x = np.asarray(x1, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("x1 must be finite")
    states = [x]
    diagnostics: list[StepDiagnostics] = []
    for t in range(grid.steps - 1, -1, -1):
        x_prev, diag = fixed_point_invert_step(field, x, t, grid, cond, cfg, w)
        gap = guided_velocity(field, x, grid.sigmas[t], cond, w) - guided_velocity(
            field, x_prev, grid.sigmas[t], cond, w
        )
        diag.velocity_gap = float(np.linalg.norm(gap))
        diagnostics.append(diag)
        states.append(x_prev)
        x = x_prev
    states.reverse()
    diagnostics.reverse()
    return InversionResult(Trajectory(grid, states, cond), [], diagnostics, cond, w)


def compute_compensations(
    field: VelocityField,
    inv: InversionResult,
    grid: TimeGrid,
    cond=None,
    w: float = 1.0,
) -> InversionResult:
    """Fill per-step compensations so Euler replay reproduces the stored trajectory.

    For each t: eps_t = x_{t+1} - (x_t + (sigma_{t+1} - sigma_t) * v(x_t, sigma_t, cond)).
    """
    if len(inv.trajectory.states) != grid.steps + 1:
        raise StateError("inversion trajectory incomplete")
    comps = []
    for t in range(grid.steps):
        x_t = inv.trajectory.states[t]
        x_next = inv.trajectory.states[t + 1]
        dsig = grid.sigmas[t + 1] - grid.sigmas[t]
        x_hat = x_t + dsig * guided_velocity(field, x_t, grid.sigmas[t], cond, w)
        comps.append(x_next - x_hat)
    return InversionResult(inv.trajectory, comps, inv.diagnostics, cond, w)


def regenerate(
    field: VelocityField,
    inv: InversionResult,
    grid: TimeGrid,
    cond_target=None,
    apply_compensation: bool = True,
    w: float = 1.0,
) -> Trajectory:
    """Replay Euler steps from the inverted noise latent under cond_target,
    optionally adding the stored per-step compensations."""
    if apply_compensation and not inv.has_compensations:
        raise StateError("compensations missing; run compute_compensations first")
    x = inv.trajectory.states[0]
    states = [x]
    for t in range(grid.steps):
        dsig = grid.sigmas[t + 1] - grid.sigmas[t]
        x = x + dsig * guided_velocity(field, x, grid.sigmas[t], cond_target, w)
        if apply_compensation:
            x = x + inv.compensations[t]
        states.append(x)
    return Trajectory(grid, states, cond_target)


def ddim_naive_invert_step(score_field, x_next, t: int, schedule) -> np.ndarray:
    """Naive DDIM inversion step (t+1 -> t), mirroring the naive Euler inversion:
    work in the rescaled variable y = x / sqrt(abar) and evaluate the noise
    prediction at the known later state."""
    abar_t = float(schedule.alphas_bar[t])
    abar_next = float(schedule.alphas_bar[t + 1])
    x_next = np.asarray(x_next, dtype=np.float64)
    eps = score_field.predicted_noise(x_next, t + 1)
    lam_t = np.sqrt((1.0 - abar_t) / abar_t)
    lam_next = np.sqrt((1.0 - abar_next) / abar_next)
    y_t = x_next / np.sqrt(abar_next) + (lam_t - lam_next) * eps
    return np.sqrt(abar_t) * y_t


def round_trip_report(
    field: VelocityField,
    x1,
    grid: TimeGrid,
    cond,
    cfgs: list[FixedPointConfig],
    w: float = 1.0,
) -> list[dict]:
    """One metrics row per config: round-trip reconstruction errors, max
    compensation norm, and per-step velocity-gap statistics.

    x1 may be a batch (n, d); mse values are then means over the batch.
    """
    rows = []
    x1 = np.asarray(x1, dtype=np.float64)
    for cfg in cfgs:
        inv = invert(field, x1, grid, cond, cfg, w)
        inv = compute_compensations(field, inv, grid, cond, w)
        plain = regenerate(field, inv, grid, cond, apply_compensation=False, w=w)
        comped = regenerate(field, inv, grid, cond, apply_compensation=True, w=w)
        mse = float(np.mean((plain.terminal - x1) ** 2))
        mse_comp = float(np.mean((comped.terminal - x1) ** 2))
        eps_norms = [float(np.max(np.linalg.norm(np.atleast_2d(e), axis=-1))) for e in inv.compensations]
        gaps = [d.velocity_gap for d in inv.diagnostics]
        rows.append(
            {
                "iterations": cfg.iterations,
                "aggregation": cfg.aggregation,
                "mse": mse,
                "mse_compensated": mse_comp,
                "max_eps_norm": max(eps_norms),
                "vgap_mean": float(np.mean(gaps)),
                "vgap_max": float(np.max(gaps)),
            }
        )
    return rows
