"""Invariance-controlled editing on the two-stream transformer.

The token map keeps edited-token text features from the target prompt and
re-injects the source branch's features for all unedited tokens during the
first floor(S * T) regeneration steps. Q/K/V injection from the source
attention cache is an optional complementary control.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, StateError
from .inversion import FixedPointConfig, compute_compensations, invert
from .minidit import NULL_TOKEN, MiniDiT, MiniDiTVelocityField
from .samplers import TimeGrid, Trajectory


@dataclass
class TokenFeatures:
    matrix: np.ndarray  # (j, d) or (n, j, d)
    prompt_tokens: tuple[int, ...]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape[-2] != len(self.prompt_tokens):
            raise InvalidArgumentError("row count must equal token count")


@dataclass(frozen=True)
class AttentionInjection:
    components: frozenset = frozenset({"V"})
    fraction: float = 0.0

    def __post_init__(self):
        comps = frozenset(self.components)
        if not comps <= {"Q", "K", "V"}:
            raise InvalidArgumentError("components must be a subset of {Q, K, V}")
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidArgumentError("fraction must be in [0, 1]")
        object.__setattr__(self, "components", comps)


@dataclass(frozen=True)
class EditSpec:
    source_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]
    s_fraction: float = 0.6
    attention: AttentionInjection | None = None

    def __post_init__(self):
        src = tuple(int(t) for t in self.source_tokens)
        tgt = tuple(int(t) for t in self.target_tokens)
        if len(src) != len(tgt):
            raise InvalidArgumentError("source and target prompts must have equal length")
        if not 0.0 <= self.s_fraction <= 1.0:
            raise InvalidArgumentError("s_fraction must be in [0, 1]")
        object.__setattr__(self, "source_tokens", src)
        object.__setattr__(self, "target_tokens", tgt)

    @property
    def edited_indices(self) -> frozenset:
        return frozenset(
            i for i, (s, t) in enumerate(zip(self.source_tokens, self.target_tokens)) if s != t
        )


def adaln_map(
    m_source: TokenFeatures,
    m_target: TokenFeatures,
    spec: EditSpec,
    step: int,
    total: int,
) -> TokenFeatures:
    """Row-wise text-feature replacement, active for step < floor(s_fraction * total).

    Active: rows at edited indices stay from the target, all other rows are
    taken from the source. Inactive: the target features pass through unchanged.
    """
    if m_source.matrix.shape != m_target.matrix.shape:
        raise InvalidArgumentError("source/target feature shapes differ")
    if step >= int(np.floor(spec.s_fraction * total)):
        return m_target
    out = m_source.matrix.copy()
    edited = sorted(spec.edited_indices)
    if edited:
        out[..., edited, :] = m_target.matrix[..., edited, :]
    return TokenFeatures(out, m_target.prompt_tokens)


def attention_inject(
    source_cache: dict,
    target_qkv: tuple[np.ndarray, np.ndarray, np.ndarray],
    components,
    step: int,
    total: int,
    fraction: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Replace the named Q/K/V components with the source cache while
    step < floor(fraction * total); passthrough otherwise."""
    q, k, v = target_qkv
    if step >= int(np.floor(fraction * total)):
        return q, k, v
    if source_cache is None:
        raise StateError(f"missing source attention cache for step {step}")
    comps = set(components)
    if "Q" in comps:
        q = source_cache["q"]
    if "K" in comps:
        k = source_cache["k"]
    if "V" in comps:
        v = source_cache["v"]
    return q, k, v


class EditHooks:
    """Per-step hook object wired into the target branch's conditional forward."""

    def __init__(self, spec: EditSpec, source_caches: list[dict], step: int, total: int):
        self.spec = spec
        self.source_caches = source_caches
        self.step = step
        self.total = total
        self.map_applications = 0
        self.injection_applications = 0

    def text_features(self, block: int, m: np.ndarray) -> np.ndarray:
        src = TokenFeatures(self.source_caches[block]["text_features"], self.spec.source_tokens)
        tgt = TokenFeatures(m, self.spec.target_tokens)
        out = adaln_map(src, tgt, self.spec, self.step, self.total)
        if out is not tgt:
            self.map_applications += 1
        return out.matrix

    def qkv(self, block: int, q, k, v):
        if self.spec.attention is None:
            return q, k, v
        inj = self.spec.attention
        out = attention_inject(
            self.source_caches[block], (q, k, v), inj.components, self.step, self.total, inj.fraction
        )
        if out[0] is not q or out[1] is not k or out[2] is not v:
            self.injection_applications += 1
        return out


@dataclass
class EditResult:
    edited: np.ndarray
    reconstruction: np.ndarray
    source_trajectory: Trajectory
    target_trajectory: Trajectory
    metrics: dict
    map_steps: int = 0
    injection_steps: int = 0


def edit_pipeline(
    model: MiniDiT,
    params: dict,
    x1,
    spec: EditSpec,
    grid: TimeGrid,
    fp_cfg: FixedPointConfig = FixedPointConfig(),
    w_inv: float = 1.0,
    w_edit: float = 2.0,
    capture_dump: list | None = None,
) -> EditResult:
    """Two-stage inversion under the source prompt, then dual-branch regeneration.

    The source branch replays the compensated reconstruction and caches its
    per-block text features and Q/K/V; the target branch regenerates under the
    target prompt with the token map (and optional attention injection) wired
    in, adding the same compensations.

    Compensations are computed against the velocity used at regeneration time
    (source prompt, guidance w_edit), so the source branch replay is exact and
    the two branches differ only through the prompt change.
    """
    x1 = np.asarray(x1, dtype=np.float64).reshape(1, -1)
    field = MiniDiTVelocityField(model, params)
    inv = invert(field, x1, grid, cond=spec.source_tokens, cfg=fp_cfg, w=w_inv)
    inv = compute_compensations(field, inv, grid, cond=spec.source_tokens, w=w_edit)

    src_tok = np.asarray(spec.source_tokens, dtype=np.int64).reshape(1, -1)
    tgt_tok = np.asarray(spec.target_tokens, dtype=np.int64).reshape(1, -1)
    null_tok = np.full_like(src_tok, NULL_TOKEN)

    total = grid.steps
    x_src = inv.trajectory.states[0]
    x_tgt = inv.trajectory.states[0]
    src_states = [x_src]
    tgt_states = [x_tgt]
    map_steps = 0
    inj_steps = 0
    for t in range(total):
        sigma = grid.sigmas[t]
        dsig = grid.sigmas[t + 1] - sigma

        v_src_c, aux = model.forward(params, x_src, src_tok, sigma, capture=True)
        caches = aux["caches"]
        if capture_dump is not None:
            capture_dump.append(caches)
        if w_edit == 1.0:
            v_src = v_src_c
        else:
            v_src_u, _ = model.forward(params, x_src, null_tok, sigma)
            v_src = v_src_u + w_edit * (v_src_c - v_src_u)
        x_src = x_src + dsig * v_src + inv.compensations[t]
        src_states.append(x_src)

        hooks = EditHooks(spec, caches, t, total)
        v_tgt_c, _ = model.forward(params, x_tgt, tgt_tok, sigma, hooks=hooks)
        if w_edit == 1.0:
            v_tgt = v_tgt_c
        else:
            v_tgt_u, _ = model.forward(params, x_tgt, null_tok, sigma)
            v_tgt = v_tgt_u + w_edit * (v_tgt_c - v_tgt_u)
        x_tgt = x_tgt + dsig * v_tgt + inv.compensations[t]
        tgt_states.append(x_tgt)
        map_steps += int(hooks.map_applications > 0)
        inj_steps += int(hooks.injection_applications > 0)

    edited = x_tgt[0]
    recon = x_src[0]
    x1v = x1[0]
    metrics = {
        "recon_rel_err": float(
            np.max(np.abs(recon - x1v)) / max(np.max(np.abs(x1v)), 1e-300)
        ),
        "edited_displacement": float(np.linalg.norm(edited - x1v)),
    }
    return EditResult(
        edited,
        recon,
        Trajectory(grid, src_states, spec.source_tokens),
        Trajectory(grid, tgt_states, spec.target_tokens),
        metrics,
        map_steps,
        inj_steps,
    )


def factor_metrics(edited: np.ndarray, x1: np.ndarray, spec: EditSpec, factor_means: dict) -> dict:
    """Preservation/attainment metrics on the two-factor layout: the first two
    coordinates belong to factor A (tokens 1/2), the last two to factor B (3/4)."""
    edited = np.asarray(edited, dtype=np.float64).reshape(-1)
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1)
    slices = {0: slice(0, 2), 1: slice(2, 4)}
    out = {}
    for pos in (0, 1):
        sl = slices[pos]
        if pos in spec.edited_indices:
            tgt_mean = factor_means[spec.target_tokens[pos]]
            src_mean = factor_means[spec.source_tokens[pos]]
            d_tgt = np.linalg.norm(edited[sl] - tgt_mean)
            d_src = np.linalg.norm(edited[sl] - src_mean)
            out["attained"] = bool(d_tgt < d_src)
            out["edit_target_distance"] = float(d_tgt)
        else:
            out["preservation_error"] = float(np.linalg.norm(edited[sl] - x1[sl]))
    return out


def dump_caches(path, per_step_caches: list[list[dict]]) -> None:
    """Debug dump of per-step, per-block caches: one JSON header line naming
    every array's key and shape, then the little-endian float64 blocks in order."""
    entries = []
    blocks = []
    for step, caches in enumerate(per_step_caches):
        for blk, cache in enumerate(caches):
            for key in ("text_features", "q", "k", "v"):
                arr = np.ascontiguousarray(cache[key], dtype="<f8")
                entries.append({"step": step, "block": blk, "name": key, "shape": list(arr.shape)})
                blocks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(json.dumps({"dtype": "<f8", "entries": entries}, sort_keys=True).encode() + b"\n")
        for blob in blocks:
            fh.write(blob)
