"""Command-line driver.

Exit codes: 0 success, 1 usage error (bad flags or config), 2 runtime or
numeric failure.  Every output file is written to a temporary sibling and
renamed into place, so a failed command leaves no partial output.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
FNO_TOLERANCE = 1e-8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _thread_limit():
    raw = os.environ.get("CVIT_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CVIT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("CVIT_THREADS must be non-negative")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _write_text(path, text: str) -> None:
    from .operators.params import atomic_write_bytes

    atomic_write_bytes(path, text.encode("utf-8"))


# -- subcommands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    from .data import GrfSpec, make_advection_dataset, save_dataset

    if args.n <= 0:
        raise UsageError("--n must be positive")
    try:
        spec = GrfSpec(n=args.grid, tau=args.tau, d=args.d)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = make_advection_dataset(args.n, spec, t=args.t, c=args.c, seed=args.seed, exact_shift=not args.bandlimited)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} samples on a {spec.n}-point grid to {args.out} (shift: {ds.metadata['shift']})")
    return EXIT_OK


def _load_config(path):
    from .config import ConfigError, parse_config

    try:
        return parse_config(path)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    from .data import load_dataset
    from .operators import build_model
    from .training import TrainingAborted, train_loop

    cfg = _load_config(args.config)
    sys.stdout.write(cfg.echo())
    if cfg.data_path is None:
        raise UsageError(f"{args.config}: key 'data_path' is required for training")
    ds = load_dataset(cfg.data_path)
    try:
        spec = cfg.model_spec(spatial=(ds.grid_size,), channels=ds.channels)
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    model = build_model(cfg.model, spec, seed=cfg.train.seed)
    ckpt_dir = Path(cfg.checkpoint_dir or "checkpoints")
    try:
        result = train_loop(model, ds, cfg.train, checkpoint_dir=ckpt_dir, resume=args.resume,
                            inject_nan_at=args.inject_nan_at or (), log_every=args.log_every)
    except TrainingAborted as exc:
        print(f"error: {exc} after {len(exc.history)} accepted steps", file=sys.stderr)
        return EXIT_FAILURE
    lines = ["step,loss"] + [f"{i + 1},{v:.9g}" for i, v in enumerate(result.history)]
    _write_text(ckpt_dir / "loss_history.csv", "\n".join(lines) + "\n")
    final = result.history[-1] if result.history else float("nan")
    print(f"trained {len(result.history)} steps ({result.restarts} restarts); final loss {final:.6g}")
    print(f"checkpoint: {ckpt_dir / 'checkpoint.cvc'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .evaluation import evaluate_dataset, identity_step, model_step
    from .operators import load_model

    if (args.checkpoint is None) == (args.baseline is None):
        raise UsageError("eval: give exactly one of --checkpoint or --baseline")
    if args.rollout < 1:
        raise UsageError("--rollout must be at least 1")
    ds = load_dataset(args.data)
    if args.checkpoint is not None:
        step = model_step(load_model(args.checkpoint), ds.coords())
    else:
        step = identity_step
    report = evaluate_dataset(step, ds, args.rollout)
    report.save(args.out)
    for name, agg in report.summary().items():
        print(f"{name}: mean={agg['mean']:.6g} median={agg['median']:.6g} worst={agg['worst']:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.what == "fno-equivalence":
        from .operators import equivalence_discrepancy

        worst = 0.0
        for n in args.modes:
            try:
                gap = equivalence_discrepancy(args.grid, n, args.trials, args.seed)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            print(f"grid={args.grid} modes={n} trials={args.trials}: max relative discrepancy {gap:.3e}")
            worst = max(worst, gap)
        ok = worst < FNO_TOLERANCE
        print(f"{'PASS' if ok else 'FAIL'}: max relative discrepancy {worst:.3e} (tolerance {FNO_TOLERANCE:g})")
        return EXIT_OK if ok else EXIT_FAILURE

    from .tensor.gradcheck import run_all

    tol = 1e-4
    worst = run_all(n_trials=args.trials, seed=args.seed, tol=tol)
    for name, err in sorted(worst.items()):
        print(f"{name:18s} max relative error {err:.3e}  {'ok' if err <= tol else 'FAIL'}")
    ok = all(err <= tol for err in worst.values())
    print(f"{'PASS' if ok else 'FAIL'}: {len(worst)} primitives checked")
    return EXIT_OK if ok else EXIT_FAILURE


def _read_queries(spec, source: str, dim: int) -> np.ndarray:
    if source == "grid":
        axes = [np.arange(n) / n for n in spec]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)
    rows = []
    for lineno, line in enumerate(Path(source).read_text("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line[0].isalpha():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise UsageError(f"{source}:{lineno}: cannot parse query row {line!r}") from None
    q = np.asarray(rows, dtype=np.float64).reshape(-1, dim) if rows else np.zeros((0, dim))
    if q.shape[1] != dim or np.any((q < 0) | (q > 1)) or not np.all(np.isfinite(q)):
        raise UsageError(f"{source}: queries must be rows of {dim} coordinates in [0, 1]")
    return q


def _read_input(path, sample: int) -> np.ndarray:
    from .data import MAGIC, load_dataset
    from .tensor import load_tensor

    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MAGIC:
        ds = load_dataset(path)
        if not 0 <= sample < len(ds):
            raise UsageError(f"--sample {sample} out of range for {len(ds)} samples")
        return ds.u0[sample]
    return np.asarray(load_tensor(path))


def cmd_predict(args) -> int:
    from .operators import load_model

    model = load_model(args.checkpoint)
    u = _read_input(args.input, args.sample)
    spec = model.spec
    if model.name == "cvit":
        spatial, dim = spec.spatial, spec.query_dim
        frame = (spec.frames, *spatial, spec.in_channels)
        u = u.reshape(frame) if u.size == int(np.prod(frame)) else u
        batch = u[None]
    else:
        spatial, dim = (u.shape[0],), spec.query_dim
        batch = u[None]
    y = _read_queries(spatial, args.queries, dim)
    pred = model.predict(batch.astype(model.store.dtype), y).data[0]
    cols = [f"y{i + 1}" for i in range(dim)] + [f"s{k + 1}" for k in range(pred.shape[-1])]
    lines = [",".join(cols)] + [",".join(f"{v:.9g}" for v in (*yy, *pp)) for yy, pp in zip(y, pred)]
    _write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(y)} predictions to {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plot import plot_csv

    svg = plot_csv(Path(args.csv).read_text("utf-8"), args.title or "")
    _write_text(args.out, svg)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cvit", description="Continuous neural-field operators: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a benchmark dataset")
    g.add_argument("--task", choices=["advection"], default="advection")
    g.add_argument("--n", type=int, required=True, help="number of samples")
    g.add_argument("--grid", type=int, default=200)
    g.add_argument("--tau", type=float, default=3.0)
    g.add_argument("--d", type=float, default=2.0)
    g.add_argument("--t", type=float, default=0.5)
    g.add_argument("--c", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--bandlimited", action="store_true", help="allow off-grid shifts via Fourier interpolation")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in checkpoint_dir")
    t.add_argument("--inject-nan-at", type=int, action="append", metavar="STEP",
                   help="poison the loss at STEP once (fault injection)")
    t.add_argument("--log-every", type=int, default=1000)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a checkpoint or baseline on a dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--baseline", choices=["identity"])
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics CSV")
    e.add_argument("--rollout", type=int, default=1, help="auto-regressive steps before scoring")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="numerical self-checks")
    v.add_argument("what", choices=["fno-equivalence", "gradients"])
    v.add_argument("--grid", type=int, default=64)
    v.add_argument("--modes", type=int, nargs="+", default=[1, 4, 8, 16])
    v.add_argument("--trials", type=int, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("predict", help="evaluate a checkpoint at query points")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True, help="CVD1 dataset or CVT1 tensor")
    r.add_argument("--sample", type=int, default=0, help="sample index when --input is a dataset")
    r.add_argument("--queries", default="grid", help="'grid' or a CSV of rows y1[,y2]")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    pl = sub.add_parser("plot", help="render a CSV as SVG")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "verify" and args.trials is None:
            args.trials = 50 if args.what == "fno-equivalence" else 10
        if getattr(args, "trials", 1) is not None and getattr(args, "trials", 1) < 1:
            raise UsageError("--trials must be at least 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(message)s", stream=sys.stderr)
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
