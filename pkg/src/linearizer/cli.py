"""Command-line entry point.

Every subcommand builds a :class:`Config` from ``--config file.json`` (if
given) overlaid with explicit flags, runs one task, and writes its artifacts
into the output directory. ``LINEARIZER_OUT_DIR`` overrides that directory.

Exit codes: 0 success, 1 usage or contract error, 2 numeric failure, 3 I/O.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import NumericError
from .checkpoint import (CheckpointError, atomic_write_text, load_checkpoint,
                         load_operator, save_checkpoint, save_operator)
from .config import Config, ConfigError, load_config_file, parse_config, set_path
from .data import DataError, dataset, embed, ingest_csv
from .operators import ContractError

OUT_DIR_ENV = "LINEARIZER_OUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag tables ---------------------------------------------------------------
# (flag, config path, type, help)

_MODEL = [
    ("--dim", "model.dim", int, "data dimension"),
    ("--blocks", "model.blocks", int, "invertible blocks in g"),
    ("--rank", "model.rank", int, "rank of the hyper-generated core (clamped to dim)"),
    ("--width", "model.width", int, "hidden width of coupling and hyper networks"),
]
_TRAIN = [
    ("--steps", "train.steps", int, "optimizer steps"),
    ("--batch", "train.batch", int, "batch size"),
    ("--lr", "train.lr", float, "Adam learning rate"),
    ("--seed", "train.seed", int, "training seed"),
    ("--log-every", "train.log_every", int, "metrics interval in steps"),
]
_DATA = [
    ("--dataset", "data.dataset", str, "built-in dataset name"),
    ("--n-points", "data.n_points", int, "points drawn from the dataset"),
    ("--data-seed", "data.seed", int, "dataset seed"),
    ("--input", "data.input", str, "CSV of points (overrides --dataset)"),
]
_SAMPLER = [
    ("--steps", "sampler.steps", int, "solver steps N"),
    ("--scheme", "sampler.scheme", str, "euler or rk4"),
]
_CKPT = [("--checkpoint", "paths.checkpoint", str, "model checkpoint")]
_OUT = [("--out-dir", "paths.out_dir", str, "output directory")]

COMMANDS: dict[str, tuple[str, list]] = {
    "verify": ("residual report for freshly initialized models", [
        ("--seed", "train.seed", int, "seed for the random models"),
        ("--trials", "verify.trials", int, "random probes per check"),
        ("--tolerance", "verify.tolerance", float, "residual tolerance"),
    ] + _OUT),
    "train-flow": ("train a flow-matching Linearizer", _MODEL + _TRAIN + _DATA + [
        ("--align-weight", "train.align_weight", float, "weight of the alignment term"),
        ("--loss-norm", "train.loss_norm", str, "latent, data or relative"),
    ] + _CKPT + _OUT),
    "sample": ("draw samples with an iterative or collapsed sampler", _CKPT + _SAMPLER + [
        ("--count", "sampler.count", int, "number of samples"),
        ("--sample-seed", "sampler.seed", int, "prior seed"),
        ("--one-step", "sampler.one_step", bool, "apply the collapsed operator once"),
        ("--trajectory", "sampler.trajectory", bool, "emit every solver step"),
        ("--collapsed", "paths.collapsed", str, "collapsed operator file for --one-step"),
    ] + _OUT),
    "collapse": ("collapse N solver steps into one operator", _CKPT + _SAMPLER + _OUT),
    "invert": ("encode data with the pseudoinverse and decode again", _CKPT + _SAMPLER + [
        ("--collapsed", "paths.collapsed", str, "collapsed operator file"),
        ("--count", "sampler.count", int, "held-out points"),
    ] + _DATA + _OUT),
    "interp": ("interpolate between two data points through noise codes", _CKPT + _SAMPLER + [
        ("--a", "interp.a", float, "interpolation weight"),
        ("--combine", "interp.combine", str, "induced or euclidean"),
        ("--collapsed", "paths.collapsed", str, "collapsed operator file"),
    ] + _DATA + _OUT),
    "train-ign": ("train an idempotent projector", _TRAIN + _DATA + [
        ("--dim", "ign.dim", int, "ambient dimension (data are zero-padded)"),
        ("--blocks", "model.blocks", int, "invertible blocks in g"),
        ("--width", "model.width", int, "hidden width of coupling networks"),
        ("--w-rec", "ign.w_rec", float, "reconstruction weight"),
        ("--w-sparse", "ign.w_sparse", float, "rank-sparsity weight"),
        ("--w-iso", "ign.w_iso", float, "isometry weight"),
        ("--probes", "ign.probes", int, "far-field idempotency probes"),
    ] + _CKPT + _OUT),
    "project": ("project points with a trained idempotent model", _CKPT + [
        ("--input", "data.input", str, "CSV of points to project"),
    ] + _OUT),
    "train-style": ("fit two style cores under one shared g", _MODEL[1:] + _TRAIN + _DATA + _OUT),
    "style-interp": ("mix two style cores over an alpha grid", _CKPT + [
        ("--checkpoint-b", "paths.checkpoint_b", str, "second style checkpoint"),
        ("--alphas", "interp.alphas", float, "alpha values"),
    ] + _DATA + _OUT),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linearizer", description="Linearizer toolkit")
    sub = parser.add_subparsers(dest="task", required=True, parser_class=_Parser)
    for name, (help_text, flags) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file; explicit flags take precedence")
        for flag, path, typ, h in flags:
            dest = path.replace(".", "__")
            if typ is bool:
                p.add_argument(flag, dest=dest, action="store_true", default=argparse.SUPPRESS, help=h)
            elif flag == "--alphas":
                p.add_argument(flag, dest=dest, type=float, nargs="+", default=argparse.SUPPRESS, help=h)
            else:
                p.add_argument(flag, dest=dest, type=typ, default=argparse.SUPPRESS, help=h)
    return parser


def resolve_config(argv: Sequence[str]) -> Config:
    args = build_parser().parse_args(argv)
    raw = load_config_file(args.config) if args.config else {}
    if raw.get("task", args.task) != args.task:
        raise ConfigError(f"config file is for task {raw['task']!r}, not {args.task!r}")
    raw["task"] = args.task
    for key, value in vars(args).items():
        if "__" in key:
            set_path(raw, key.replace("__", "."), value)
    env_dir = os.environ.get(OUT_DIR_ENV)
    if env_dir:
        set_path(raw, "paths.out_dir", env_dir)
    return parse_config(raw)


# output helpers ------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(x if isinstance(x, str) else str(x) if isinstance(x, (int, np.integer))
                           else _fmt(x) for x in row) + "\n")
    return buf.getvalue()


def coord_names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]


def samples_csv(points: np.ndarray, step: int, trajectory: np.ndarray | None = None,
                step_labels: Sequence[int] | None = None) -> str:
    """Columns sample_id, step, x0, x1, ...; a trajectory has shape (states, B, n)."""
    n = points.shape[-1]
    rows = []
    if trajectory is None:
        rows = [[i, step, *p] for i, p in enumerate(points)]
    else:
        labels = list(step_labels) if step_labels is not None else range(trajectory.shape[0])
        for i in range(trajectory.shape[1]):
            rows.extend([i, s, *trajectory[k, i]] for k, s in enumerate(labels))
    return csv_text(["sample_id", "step", *coord_names("x", n)], rows)


class Run:
    """Artifact writer bound to one task's output directory."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.out = Path(cfg.paths.out_dir)
        self.metrics: list[str] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def log(self, row: dict) -> None:
        self.metrics.append(json.dumps(row, allow_nan=False))
        # flush as we go so long runs can be monitored; each write is atomic
        self.write_text(f"{self.cfg.task}.jsonl", "\n".join(self.metrics) + "\n")

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        atomic_write_text(p, text)
        return p

    def finish(self) -> None:
        self.write_text(f"{self.cfg.task}.config.json",
                        json.dumps(self.cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def load_points(cfg: Config, count: int | None = None, seed_offset: int = 0) -> np.ndarray:
    if cfg.data.input:
        return ingest_csv(cfg.data.input)
    return dataset(cfg.data.dataset, count or cfg.data.n_points, cfg.data.seed + seed_offset)


def _checkpoint_in(cfg: Config, default: str) -> Path:
    return Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else Path(cfg.paths.out_dir) / default


def _require_dim(points: np.ndarray, dim: int, what: str) -> np.ndarray:
    if points.shape[1] != dim:
        raise DataError(f"{what} has {points.shape[1]} columns but the model expects {dim}")
    return points


# tasks -----------------------------------------------------------------------

def task_verify(cfg: Config, run: Run) -> int:
    from .verify import run_verify

    report = run_verify(cfg.train.seed, cfg.verify.trials, cfg.verify.tolerance)
    run.write_text("verify.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name, e in report["checks"].items():
        run.log({"check": name, **e})
        print(f"{'PASS' if e['ok'] else 'FAIL'} {name} residual={e['residual']:.3e} tol={e['tolerance']:.0e}")
    print("all checks passed" if report["ok"] else "some checks failed")
    return EXIT_OK if report["ok"] else EXIT_NUMERIC


def task_train_flow(cfg: Config, run: Run) -> int:
    from .flow import FlowModel, train_flow
    from .rng import RngStream

    m, t = cfg.model, cfg.train
    data = _require_dim(load_points(cfg), m.dim, "training data")
    rng = RngStream(t.seed)
    model = FlowModel.create(m.dim, m.blocks, m.width, m.rank, m.features, rng.substream(0),
                             m.coupling_scale, m.core_scale)
    train_rng = rng.substream(1)
    start = time.perf_counter()
    res = train_flow(model, data, cfg.train_steps(), t.batch, t.lr, train_rng, t.align_weight,
                     t.loss_norm, t.log_every, log=run.log)
    _note(f"trained {cfg.train_steps()} steps in {time.perf_counter() - start:.1f}s; "
          f"fm_loss {res.initial_loss:.4g} -> {res.final_loss:.4g}")
    out = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else run.path("flow.ckpt")
    save_checkpoint(model, out, cfg.snapshot(), train_rng,
                    {"initial_fm_loss": res.initial_loss, "final_fm_loss": res.final_loss})
    print(out)
    return EXIT_OK


def _operator(cfg: Config, model):
    from .flow import collapse

    if cfg.paths.collapsed:
        op = load_operator(cfg.paths.collapsed)
        if op.model_checksum != model.checksum():
            raise ContractError("collapsed operator was built from a different model")
        return op
    return collapse(model, cfg.sampler.steps, cfg.sampler.scheme)


def task_sample(cfg: Config, run: Run) -> int:
    from .flow import sample
    from .rng import RngStream

    model = load_checkpoint(_checkpoint_in(cfg, "flow.ckpt"), "flow")
    s = cfg.sampler
    x0 = RngStream(s.seed).normal((s.count, model.dim))
    if s.one_step:
        op = _operator(cfg, model)
        x1 = op.one_step(model, x0)
        # a one-step trajectory has two states: the prior draw and the result
        text = samples_csv(x1, op.steps, np.stack([x0, x1]) if s.trajectory else None, [0, op.steps])
        run.log({"mode": "one-step", **op.provenance(), "count": s.count})
    else:
        x1, traj = sample(model, x0, s.steps, s.scheme, trajectory=s.trajectory)
        text = samples_csv(x1, s.steps, traj)
        run.log({"mode": "iterative", "scheme": s.scheme, "steps": s.steps, "count": s.count})
    if not np.isfinite(x1).all():
        raise NumericError("non-finite samples")
    run.log({"mean": x1.mean(axis=0).tolist(), "cov": np.atleast_2d(np.cov(x1.T)).tolist()})
    print(run.write_text("samples.csv", text))
    return EXIT_OK


def task_collapse(cfg: Config, run: Run) -> int:
    from .flow import collapse

    model = load_checkpoint(_checkpoint_in(cfg, "flow.ckpt"), "flow")
    op = collapse(model, cfg.sampler.steps, cfg.sampler.scheme)
    out = run.path("collapsed.op")
    save_operator(op, out, cfg.snapshot())
    sv = np.linalg.svd(op.matrix, compute_uv=False)
    run.log({**op.provenance(), "singular_values": sv.tolist()})
    print(out)
    return EXIT_OK


def task_invert(cfg: Config, run: Run) -> int:
    from .flow import decode, encode
    from .induced import residual

    model = load_checkpoint(_checkpoint_in(cfg, "flow.ckpt"), "flow")
    op = _operator(cfg, model)
    # held-out points: a dataset draw with a seed distinct from the training one
    x = _require_dim(load_points(cfg, cfg.sampler.count, seed_offset=1), model.dim, "input")
    z = encode(model, op, x)
    xr = decode(model, op, z)
    res = np.abs(xr - x).max(axis=1)
    n = model.dim
    rows = [[i, *x[i], *z[i], *xr[i], res[i]] for i in range(len(x))]
    run.write_text("inversion.csv", csv_text(["sample_id", *coord_names("x", n), *coord_names("z", n),
                                              *coord_names("r", n), "residual"], rows))
    run.log({"count": len(x), "max_residual": residual(xr, x), "scheme": op.scheme, "steps": op.steps})
    print(f"max reconstruction residual {res.max():.3e}")
    return EXIT_OK


def task_interp(cfg: Config, run: Run) -> int:
    from .flow import latent_interpolate

    model = load_checkpoint(_checkpoint_in(cfg, "flow.ckpt"), "flow")
    op = _operator(cfg, model)
    pts = _require_dim(load_points(cfg, 2), model.dim, "input")
    if len(pts) < 2:
        raise DataError("interpolation needs two points")
    a = cfg.interp.a
    out = latent_interpolate(model, op, pts[0], pts[1], a, cfg.interp.combine)
    n = model.dim
    run.write_text("interp.csv", csv_text(["a", *coord_names("x", n)], [[a, *np.atleast_1d(out)]]))
    run.log({"a": a, "combine": cfg.interp.combine, "point": np.atleast_1d(out).tolist()})
    return EXIT_OK


def task_train_ign(cfg: Config, run: Run) -> int:
    from .ign import IGNModel, train_ign
    from .rng import RngStream

    t, c = cfg.train, cfg.ign
    data = embed(load_points(cfg), c.dim)
    rng = RngStream(t.seed)
    model = IGNModel.create(c.dim, cfg.model.blocks, cfg.model.width, rng.substream(0),
                            cfg.model.coupling_scale, c.logit_init,
                            {"rec": c.w_rec, "sparse": c.w_sparse, "iso": c.w_iso})
    probe = rng.substream(2).normal((c.probes, c.dim), 3.0)
    train_rng = rng.substream(1)
    res = train_ign(model, data, cfg.train_steps(), t.batch, t.lr, train_rng, t.log_every, probe, run.log)
    out = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else run.path("ign.ckpt")
    save_checkpoint(model, out, cfg.snapshot(), train_rng, {"rank": model.rank()})
    _note(f"rank {model.rank()}/{c.dim}; worst idempotency residual {max(res.idempotency):.3e}")
    print(out)
    return EXIT_OK


def task_project(cfg: Config, run: Run) -> int:
    from .induced import residual

    model = load_checkpoint(_checkpoint_in(cfg, "ign.ckpt"), "ign")
    if not cfg.data.input:
        raise ConfigError("project needs --input")
    x = ingest_csv(cfg.data.input)
    if x.shape[1] < model.dim:
        x = embed(x, model.dim)
    x = _require_dim(x, model.dim, "input")
    f = model.linearizer()
    fx = f(x)
    ffx = f(fx)
    dist = np.linalg.norm(fx - x, axis=1)
    idem = np.abs(ffx - fx).max(axis=1)
    n = model.dim
    rows = [[i, *x[i], *fx[i], dist[i], idem[i]] for i in range(len(x))]
    run.write_text("projection.csv", csv_text(["sample_id", *coord_names("in", n), *coord_names("out", n),
                                               "distance", "idempotency_residual"], rows))
    run.log({"count": len(x), "rank": model.rank(), "max_idempotency_residual": residual(ffx, fx),
             "mean_distance": float(dist.mean())})
    return EXIT_OK


def task_train_style(cfg: Config, run: Run) -> int:
    from .rng import RngStream
    from .style import train_styles

    t = cfg.train
    data = load_points(cfg)
    rng = RngStream(t.seed)
    train_rng = rng.substream(1)
    styles = train_styles(data, cfg.interp.targets, cfg.train_steps(), t.batch, t.lr, train_rng,
                          cfg.model.blocks, cfg.model.width, t.log_every, run.log)
    for label, target, s in zip("ab", cfg.interp.targets, styles):
        p = run.path(f"style_{label}.ckpt")
        save_checkpoint(s, p, cfg.snapshot(), train_rng, {"target": target})
        print(p)
    return EXIT_OK


def task_style_interp(cfg: Config, run: Run) -> int:
    from .style import style_interp

    if not (cfg.paths.checkpoint and cfg.paths.checkpoint_b):
        raise ConfigError("style-interp needs --checkpoint and --checkpoint-b")
    a = load_checkpoint(cfg.paths.checkpoint, "linearizer")
    b = load_checkpoint(cfg.paths.checkpoint_b, "linearizer")
    x = _require_dim(load_points(cfg), a.g.dim, "input")
    outs = style_interp(a, b, x, cfg.interp.alphas)
    n = a.g.dim
    rows = [[alpha, i, *y[i]] for alpha, y in outs.items() for i in range(len(x))]
    run.write_text("style_interp.csv", csv_text(["alpha", "sample_id", *coord_names("x", n)], rows))
    for alpha, y in outs.items():
        run.log({"alpha": alpha, "mean": y.mean(axis=0).tolist()})
    return EXIT_OK


TASKS = {
    "verify": task_verify, "train-flow": task_train_flow, "sample": task_sample,
    "collapse": task_collapse, "invert": task_invert, "interp": task_interp,
    "train-ign": task_train_ign, "project": task_project, "train-style": task_train_style,
    "style-interp": task_style_interp,
}


def run_config(cfg: Config) -> int:
    run = Run(cfg)
    code = TASKS[cfg.task](cfg, run)
    run.finish()
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = resolve_config(argv)
        return run_config(cfg)
    except (UsageError, ConfigError, ContractError) as exc:
        _note(f"error: {exc}")
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        _note(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (OSError, CheckpointError, DataError) as exc:
        _note(f"I/O error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        # shape and argument errors raised by the library
        _note(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
