"""Command-line harness: dataset generation, training, inversion studies,
the DDIM comparison, editing experiments, attention sweeps, and the iteration
benchmark. Every command writes manifest.json + metrics.csv into a run
directory named by the config hash; re-running a config reproduces the same
bytes.

Exit codes: 0 ok, 1 usage/config, 2 missing input, 3 assertion failure,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import figures, report
from .editing import AttentionInjection, EditSpec, edit_pipeline, factor_metrics
from .errors import (
    CheckFailedError,
    ConfigError,
    FlowInvError,
    MissingInputError,
)
from .fields import AnalyticGaussianFlow, GaussianMixtureScore, field_from_config
from .inversion import (
    FixedPointConfig,
    compute_compensations,
    ddim_naive_invert_step,
    invert,
    regenerate,
)
from .numerics import RngStream
from .samplers import DiffusionSchedule, TimeGrid, ddim_step, rescaled_ddim_check, sample_ode
from .training import (
    TOKENS,
    TrainConfig,
    checkpoint_field,
    load_checkpoint,
    make_dataset,
    save_checkpoint,
    train_field,
    two_factor_sample_for_prompt,
)

OUT_ROOT_ENV = "FLOWINV_OUT_ROOT"

_FIELD_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["analytic_gaussian", "linear", "constant_coupling", "checkpoint"]},
        "mu": {"type": "array"},
        "s": {"type": "number"},
        "sigmas": {"type": "array"},
        "a_table": {"type": "array"},
        "b_table": {"type": "array"},
        "x0": {"type": "array"},
        "x1": {"type": "array"},
        "path": {"type": "string"},
    },
    "required": ["type"],
    "additionalProperties": False,
}

_DATASET_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["gaussian", "gmm2d", "two_factor"]},
        "params": {"type": "object"},
        "seed": {"type": "integer"},
    },
    "required": ["kind", "params", "seed"],
    "additionalProperties": False,
}

_PROMPT = {"type": "array", "items": {"type": ["string", "integer"]}}

_ATTENTION_SCHEMA = {
    "type": ["object", "null"],
    "properties": {
        "components": {"type": "array", "items": {"enum": ["Q", "K", "V"]}},
        "fraction": {"type": "number"},
    },
    "required": ["components", "fraction"],
    "additionalProperties": False,
}

SCHEMAS = {
    "gen-data": {
        "type": "object",
        "properties": {
            "kind": {"enum": ["gaussian", "gmm2d", "two_factor"]},
            "params": {"type": "object"},
            "seed": {"type": "integer"},
            "n": {"type": "integer", "minimum": 1},
        },
        "required": ["kind", "params", "seed", "n"],
        "additionalProperties": False,
    },
    "train": {
        "type": "object",
        "properties": {
            "arch": {"type": "object"},
            "dataset": _DATASET_SCHEMA,
            "train": {
                "type": "object",
                "properties": {
                    "batch_size": {"type": "integer"},
                    "steps": {"type": "integer"},
                    "lr": {"type": "number"},
                    "optimizer": {"enum": ["sgd", "momentum", "adam"]},
                    "seed": {"type": "integer"},
                    "cond_dropout": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
        "required": ["arch", "dataset", "train"],
        "additionalProperties": False,
    },
    "invert": {
        "type": "object",
        "properties": {
            "field": _FIELD_SCHEMA,
            "T": {"type": "integer", "minimum": 1},
            "shift": {"type": ["number", "null"]},
            "iterations": {"type": "integer", "minimum": 0},
            "aggregation": {"enum": ["average", "last"]},
            "damping": {"type": "number"},
            "w_inv": {"type": "number"},
            "cond": {"oneOf": [{"type": "null"}, _PROMPT]},
            "input": {
                "type": "object",
                "properties": {"values": {"type": "array"}, "seed": {"type": "integer"}},
                "additionalProperties": False,
            },
        },
        "required": ["field", "input"],
        "additionalProperties": False,
    },
    "edit": {
        "type": "object",
        "properties": {
            "checkpoint": {"type": "string"},
            "source_prompt": _PROMPT,
            "target_prompt": _PROMPT,
            "s_fraction": {"type": "number"},
            "attention": _ATTENTION_SCHEMA,
            "T": {"type": "integer", "minimum": 1},
            "iterations": {"type": "integer", "minimum": 0},
            "aggregation": {"enum": ["average", "last"]},
            "w_inv": {"type": "number"},
            "w_edit": {"type": "number"},
            "seeds": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer"},
            "dataset_std": {"type": "number"},
            "dump_caches": {"type": "boolean"},
        },
        "required": ["checkpoint", "source_prompt", "target_prompt"],
        "additionalProperties": False,
    },
    "compare-ddim": {
        "type": "object",
        "properties": {
            "T": {"type": "integer", "minimum": 2},
            "seed": {"type": "integer"},
            "n_probe": {"type": "integer", "minimum": 1},
            "euler_field": _FIELD_SCHEMA,
            "mixture": {
                "type": "object",
                "properties": {
                    "weights": {"type": "array"},
                    "means": {"type": "array"},
                    "variances": {"type": "array"},
                },
                "required": ["weights", "means", "variances"],
                "additionalProperties": False,
            },
            "w": {"type": "number"},
        },
        "required": [],
        "additionalProperties": False,
    },
    "bench": {
        "type": "object",
        "properties": {
            "field": _FIELD_SCHEMA,
            "T": {"type": "integer", "minimum": 1},
            "iterations": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "aggregation": {"enum": ["average", "last"]},
            "seeds": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer"},
        },
        "required": [],
        "additionalProperties": False,
    },
}
SCHEMAS["reconstruct"] = SCHEMAS["invert"]
SCHEMAS["sweep-attn"] = {
    "type": "object",
    "properties": dict(
        SCHEMAS["edit"]["properties"],
        taus={"type": "array", "items": {"type": "number"}},
        components={"type": "array", "items": {"enum": ["Q", "K", "V"]}},
    ),
    "required": ["checkpoint", "source_prompt", "target_prompt"],
    "additionalProperties": False,
}

DEFAULTS = {
    "gen-data": {},
    "train": {},
    "invert": {
        "T": 30,
        "shift": None,
        "iterations": 3,
        "aggregation": "average",
        "damping": 1.0,
        "w_inv": 1.0,
        "cond": None,
    },
    "edit": {
        "s_fraction": 0.6,
        "attention": None,
        "T": 30,
        "iterations": 3,
        "aggregation": "average",
        "w_inv": 1.0,
        "w_edit": 2.0,
        "seeds": 32,
        "seed": 0,
        "dataset_std": 0.1,
        "dump_caches": False,
    },
    "compare-ddim": {
        "T": 50,
        "seed": 0,
        "n_probe": 8,
        "euler_field": {"type": "analytic_gaussian", "mu": [2.0, -1.0], "s": 0.5},
        "mixture": {
            "weights": [0.5, 0.5],
            "means": [[-2.0, 0.0], [2.0, 0.0]],
            "variances": [[0.3, 0.3], [0.3, 0.3]],
        },
        "w": 1.0,
    },
    "bench": {
        "field": {"type": "analytic_gaussian", "mu": [2.0, 2.0], "s": 0.5},
        "T": 30,
        "iterations": [0, 1, 2, 3],
        "aggregation": "average",
        "seeds": 64,
        "seed": 0,
    },
}
DEFAULTS["reconstruct"] = DEFAULTS["invert"]
DEFAULTS["sweep-attn"] = dict(
    DEFAULTS["edit"], taus=[0.0, 0.2, 0.5, 1.0], components=["V"], seeds=16
)


def parse_prompt(prompt) -> tuple[int, ...]:
    out = []
    for tok in prompt:
        if isinstance(tok, str):
            if tok not in TOKENS:
                raise ConfigError(f"unknown token name {tok!r}")
            out.append(TOKENS[tok])
        else:
            out.append(int(tok))
    return tuple(out)


def _merge_defaults(command: str, cfg: dict) -> dict:
    merged = json.loads(json.dumps(DEFAULTS.get(command, {})))
    merged.update(cfg)
    return merged


def _apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return cfg


def validate_config(command: str, cfg: dict) -> None:
    validator = Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(cfg), key=str)
    if errors:
        first = errors[0]
        path = ".".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {path}: {first.message}")


def _run_dir(command: str, cfg: dict, out: str | None) -> Path:
    if out:
        path = Path(out)
    else:
        root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
        path = root / f"{command}-{report.config_hash(cfg)}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _metrics(cfg: dict, command: str, pairs: list[tuple[str, float, str]]) -> list[report.MetricsRow]:
    h = report.config_hash(cfg)
    run_id = f"{command}-{h}"
    return [report.MetricsRow(run_id, h, name, value, unit) for name, value, unit in pairs]


# ------------------------------------------------------------------- commands


def cmd_gen_data(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    target = outdir / "samples.csv"
    if target.exists() and not force:
        raise ConfigError(f"refusing to overwrite {target}; pass --force")
    ds = make_dataset(cfg["kind"], cfg["params"], cfg["seed"])
    x, tokens = ds.sample(cfg["n"])
    header = [f"c{i}" for i in range(x.shape[1])]
    rows = [list(map(float, row)) for row in x]
    if tokens is not None:
        header += ["token_a", "token_b"]
        rows = [r + [int(t[0]), int(t[1])] for r, t in zip(rows, tokens)]
    report.write_csv(target, header, rows)
    return [("n_samples", float(cfg["n"]), "count"), ("dim", float(x.shape[1]), "count")]


def cmd_train(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    ds = make_dataset(cfg["dataset"]["kind"], cfg["dataset"]["params"], cfg["dataset"]["seed"])
    tc = TrainConfig(**cfg["train"])
    ckpt, curve = train_field(cfg["arch"], tc, ds)
    save_checkpoint(outdir / "checkpoint.ckpt", ckpt)
    report.write_csv(outdir / "loss_curve.csv", ["step", "loss"], [[i, l] for i, l in enumerate(curve)])
    return [
        ("final_loss", float(ckpt.meta["final_loss"]), "loss"),
        ("loss_warning", float(ckpt.meta["loss_warning"]), "flag"),
    ]


def _build_field_and_input(cfg: dict):
    field = field_from_config(cfg["field"])
    cond = parse_prompt(cfg["cond"]) if cfg.get("cond") else None
    grid = TimeGrid.uniform(cfg["T"], cfg.get("shift"))
    inp = cfg["input"]
    if "values" in inp:
        x1 = np.asarray(inp["values"], dtype=np.float64)
    else:
        rng = RngStream(int(inp["seed"]))
        if isinstance(field, AnalyticGaussianFlow):
            x1 = field.flow_map(rng.normal(field.mu.shape), 1.0)
        else:
            # draw an in-distribution point by running the model's own sampler
            probe = getattr(field, "params", None)
            dim = _field_dim(cfg["field"], field)
            x0 = rng.normal((dim,))
            x1 = sample_ode(field, x0, grid, cond).terminal
            del probe
    return field, cond, grid, x1


def _field_dim(field_cfg: dict, field) -> int:
    if field_cfg["type"] == "checkpoint":
        arch = load_checkpoint(field_cfg["path"]).arch
        return int(arch["data_dim"])
    if field_cfg["type"] == "analytic_gaussian":
        return len(field_cfg["mu"])
    raise ConfigError("cannot infer input dimension; pass input.values")


def _state_rows(grid: TimeGrid, states) -> tuple[list[str], list[list]]:
    d = np.atleast_1d(states[0]).reshape(-1).size
    header = ["step", "sigma"] + [f"c{i}" for i in range(d)]
    rows = []
    for t, x in enumerate(states):
        rows.append([t, float(grid.sigmas[t])] + [float(v) for v in np.asarray(x).reshape(-1)])
    return header, rows


def cmd_invert(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    field, cond, grid, x1 = _build_field_and_input(cfg)
    fp = FixedPointConfig(cfg["iterations"], cfg["aggregation"], cfg["damping"])
    inv = invert(field, x1, grid, cond, fp, cfg["w_inv"])
    inv = compute_compensations(field, inv, grid, cond, cfg["w_inv"])
    header, rows = _state_rows(grid, inv.trajectory.states)
    report.write_csv(outdir / "trajectory.csv", header, rows)
    cheader = ["step", "sigma"] + [f"c{i}" for i in range(np.asarray(x1).reshape(-1).size)]
    crows = [
        [t, float(grid.sigmas[t])] + [float(v) for v in np.asarray(e).reshape(-1)]
        for t, e in enumerate(inv.compensations)
    ]
    report.write_csv(outdir / "compensations.csv", cheader, crows)
    dheader = ["step", "sigma", "velocity_gap"] + [f"iter_dist_{i+1}" for i in range(fp.iterations)]
    drows = []
    for t, diag in enumerate(inv.diagnostics):
        dists = diag.iterate_distances + [float("nan")] * (fp.iterations - len(diag.iterate_distances))
        drows.append([t, float(grid.sigmas[t]), diag.velocity_gap] + dists)
    report.write_csv(outdir / "diagnostics.csv", dheader, drows)
    plain = regenerate(field, inv, grid, cond, apply_compensation=False, w=cfg["w_inv"])
    mse = float(np.mean((plain.terminal - x1) ** 2))
    max_eps = max(float(np.linalg.norm(np.asarray(e).reshape(-1))) for e in inv.compensations)
    return [("round_trip_mse", mse, "mse"), ("max_eps_norm", max_eps, "norm")]


def cmd_reconstruct(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    field, cond, grid, x1 = _build_field_and_input(cfg)
    fp = FixedPointConfig(cfg["iterations"], cfg["aggregation"], cfg["damping"])
    inv = invert(field, x1, grid, cond, fp, cfg["w_inv"])
    inv = compute_compensations(field, inv, grid, cond, cfg["w_inv"])
    recon = regenerate(field, inv, grid, cond, apply_compensation=True, w=cfg["w_inv"]).terminal
    rel_err = float(np.max(np.abs(recon - x1)) / max(float(np.max(np.abs(x1))), 1e-300))
    if rel_err > 1e-8:
        raise CheckFailedError(f"compensated_reconstruction_exactness: rel_err={rel_err}")
    return [("recon_rel_err", rel_err, "relative")]


def _edit_runs(cfg: dict, spec: EditSpec):
    ckpt = load_checkpoint(cfg["checkpoint"])
    if ckpt.arch["type"] != "minidit":
        raise ConfigError("edit requires a minidit checkpoint")
    from .training import make_net

    model = make_net(ckpt.arch)
    params = model.unflatten(ckpt.params)
    grid = TimeGrid.uniform(cfg["T"])
    fp = FixedPointConfig(cfg["iterations"], cfg["aggregation"])
    streams = RngStream(cfg["seed"]).split(cfg["seeds"])
    results = []
    for i, rng in enumerate(streams):
        x1 = two_factor_sample_for_prompt(rng, spec.source_tokens, cfg["dataset_std"])
        dump = [] if cfg.get("dump_caches") else None
        res = edit_pipeline(
            model, params, x1, spec, grid, fp, cfg["w_inv"], cfg["w_edit"], capture_dump=dump
        )
        results.append((i, x1, res, dump))
    return results


def cmd_edit(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    attention = None
    if cfg.get("attention"):
        attention = AttentionInjection(frozenset(cfg["attention"]["components"]), cfg["attention"]["fraction"])
    spec = EditSpec(
        parse_prompt(cfg["source_prompt"]),
        parse_prompt(cfg["target_prompt"]),
        cfg["s_fraction"],
        attention,
    )
    from .training import TWO_FACTOR_MEANS

    rows = []
    attained, preservation = [], []
    for i, x1, res, dump in _edit_runs(cfg, spec):
        fm = factor_metrics(res.edited, x1, spec, TWO_FACTOR_MEANS)
        rows.append(
            [i, int(fm.get("attained", True)), fm.get("preservation_error", 0.0), res.metrics["recon_rel_err"]]
            + [float(v) for v in res.edited]
        )
        attained.append(fm.get("attained", True))
        preservation.append(fm.get("preservation_error", 0.0))
        if dump is not None:
            from .editing import dump_caches

            dump_caches(outdir / f"caches_seed{i}.bin", dump)
    header = ["seed", "attained", "preservation_error", "recon_rel_err"] + [f"edited_c{j}" for j in range(4)]
    report.write_csv(outdir / "edits.csv", header, rows)
    return [
        ("attain_rate", float(np.mean(attained)), "rate"),
        ("median_preservation_error", float(np.median(preservation)), "distance"),
    ]


def cmd_sweep_attn(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    src = parse_prompt(cfg["source_prompt"])
    tgt = parse_prompt(cfg["target_prompt"])
    from .training import TWO_FACTOR_MEANS

    taus = cfg["taus"]
    table = []
    for tau in taus:
        attention = AttentionInjection(frozenset(cfg["components"]), tau) if tau > 0 else AttentionInjection(
            frozenset(cfg["components"]), 0.0
        )
        spec = EditSpec(src, tgt, cfg["s_fraction"], attention)
        attained, preservation = [], []
        for _, x1, res, _ in _edit_runs(cfg, spec):
            fm = factor_metrics(res.edited, x1, spec, TWO_FACTOR_MEANS)
            attained.append(fm.get("attained", True))
            preservation.append(fm.get("preservation_error", 0.0))
        table.append([tau, float(np.mean(attained)), float(np.median(preservation))])
    report.write_csv(outdir / "sweep_attn.csv", ["tau", "attain_rate", "median_preservation_error"], table)
    figures.plot_attention_sweep(
        [r[0] for r in table], [r[1] for r in table], [r[2] for r in table], outdir / "sweep_attn.png"
    )
    out = []
    for tau, rate, pres in table:
        tag = str(tau).replace(".", "p")
        out.append((f"attain_rate_tau_{tag}", rate, "rate"))
        out.append((f"preservation_tau_{tag}", pres, "distance"))
    return out


def cmd_compare_ddim(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    steps = cfg["T"]
    rng = RngStream(cfg["seed"])
    rng_euler, rng_ddim = rng.split(2)

    # Euler branch: analytic rectified-flow field, naive inversion then replay
    field = field_from_config(cfg["euler_field"])
    grid = TimeGrid.uniform(steps)
    x1 = field.flow_map(rng_euler.normal((cfg["n_probe"], field.mu.size)), 1.0)
    inv = invert(field, x1, grid, cond=None, cfg=FixedPointConfig(iterations=0), w=cfg["w"])
    replay = sample_ode(field, inv.trajectory.states[0], grid)
    euler_err = [
        float(np.mean(np.linalg.norm(replay.states[t] - inv.trajectory.states[t], axis=-1)))
        for t in range(1, steps + 1)
    ]

    # DDIM branch: closed-form mixture score, naive inversion then replay
    mix_cfg = cfg["mixture"]
    schedule = DiffusionSchedule.cosine(steps)
    mixture = GaussianMixtureScore(
        np.asarray(mix_cfg["weights"]), np.asarray(mix_cfg["means"]), np.asarray(mix_cfg["variances"]), schedule
    )
    x_data = mixture.sample_data(rng_ddim, cfg["n_probe"])
    ddim_states = [None] * (steps + 1)
    ddim_states[steps] = x_data
    for t in range(steps - 1, -1, -1):
        ddim_states[t] = ddim_naive_invert_step(mixture, ddim_states[t + 1], t, schedule)
    x = ddim_states[0]
    ddim_err = []
    residuals = []
    for t in range(steps):
        residuals.append(rescaled_ddim_check(mixture, x, t, schedule))
        x = ddim_step(mixture, x, t, schedule)
        ddim_err.append(float(np.mean(np.linalg.norm(x - ddim_states[t + 1], axis=-1))))

    rows = [
        [t + 1, euler_err[t], ddim_err[t], residuals[t]]
        for t in range(steps)
    ]
    report.write_csv(
        outdir / "compare_ddim.csv",
        ["step", "euler_round_trip_err", "ddim_round_trip_err", "ddim_rescaled_residual"],
        rows,
    )
    figures.plot_compare_ddim(list(range(1, steps + 1)), euler_err, ddim_err, outdir / "compare_ddim.png")
    max_res = max(residuals)
    if max_res > 1e-10:
        raise CheckFailedError(f"rescaled_ddim_identity: max residual {max_res}")
    return [
        ("euler_final_err", euler_err[-1], "norm"),
        ("ddim_final_err", ddim_err[-1], "norm"),
        ("max_rescaled_residual", max_res, "norm"),
    ]


def cmd_bench(cfg: dict, outdir: Path, force: bool) -> list[tuple[str, float, str]]:
    field = field_from_config(cfg["field"])
    grid = TimeGrid.uniform(cfg["T"])
    rng = RngStream(cfg["seed"])
    x1 = field.flow_map(rng.normal((cfg["seeds"], field.mu.size)), 1.0)
    table = []
    medians = []
    for iters in cfg["iterations"]:
        fp = FixedPointConfig(iters, cfg["aggregation"])
        inv = invert(field, x1, grid, None, fp)
        inv = compute_compensations(field, inv, grid, None)
        plain = regenerate(field, inv, grid, None, apply_compensation=False)
        per_seed_mse = np.mean((plain.terminal - x1) ** 2, axis=-1)
        eps_norms = np.stack([np.linalg.norm(e, axis=-1) for e in inv.compensations])
        median_mse = float(np.median(per_seed_mse))
        medians.append(median_mse)
        table.append(
            [iters, median_mse, float(np.median(eps_norms.max(axis=0))), float(np.mean([d.velocity_gap for d in inv.diagnostics]))]
        )
    report.write_csv(
        outdir / "bench.csv",
        ["iterations", "median_mse", "median_max_eps_norm", "mean_velocity_gap"],
        table,
    )
    figures.plot_iteration_sweep(cfg["iterations"], medians, outdir / "bench.png")
    for a, b in zip(medians, medians[1:]):
        if b > a * (1 + 1e-9):
            raise CheckFailedError("iteration_sweep_monotone: median MSE increased with iterations")
    out = [(f"median_mse_iter_{it}", m, "mse") for it, m in zip(cfg["iterations"], medians)]
    return out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "invert": cmd_invert,
    "reconstruct": cmd_reconstruct,
    "edit": cmd_edit,
    "compare-ddim": cmd_compare_ddim,
    "sweep-attn": cmd_sweep_attn,
    "bench": cmd_bench,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowinv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        p.add_argument("--out", help="output directory (default: $FLOWINV_OUT_ROOT/<cmd>-<hash>)")
        p.add_argument("--seeds", type=int, help="number of seeds for sweep commands")
        p.add_argument("--force", action="store_true", help="allow overwriting outputs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = {}
        if args.config:
            path = Path(args.config)
            if not path.exists():
                raise MissingInputError(f"config file not found: {path}")
            cfg = json.loads(path.read_text(encoding="utf-8"))
        cfg = _merge_defaults(args.command, cfg)
        cfg = _apply_overrides(cfg, args.set)
        if args.seeds is not None:
            cfg["seeds"] = args.seeds
        validate_config(args.command, cfg)
        outdir = _run_dir(args.command, cfg, args.out)
        pairs = COMMANDS[args.command](cfg, outdir, args.force)
        report.write_manifest(outdir / "manifest.json", args.command, cfg)
        report.write_metrics(outdir / "metrics.csv", _metrics(cfg, args.command, pairs))
    except FlowInvError as exc:
        print(f"flowinv {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"flowinv {args.command}: ok ({outdir})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
