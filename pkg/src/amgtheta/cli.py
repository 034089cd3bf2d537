"""Command-line front end for the sweep/train/predict/compare pipeline.

Every subcommand is deterministic given its flags; all randomness sits
behind the single ``--seed`` flag.  Kernel libraries are written as
comma-separated combos of plus-joined bases, for example
``--kernels gaussian+laplacian,matern52``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from amgtheta import gpr, io_mm, metrics, pipeline
from amgtheta.problems import assemble

DEFAULT_KERNELS = (
    "gaussian+laplacian,gaussian,laplacian,matern52,rationalquadratic,"
    "gaussian+matern52,gaussian+rationalquadratic,laplacian+matern52,"
    "gaussian+periodic"
)
# global 1-based matrix indices per protocol stage (training grid first,
# then the three drawn stages, then the comparison matrices)
STAGE_INDEX = {"training": 1, "retrain1": 23, "retrain2": 33, "test": 45}
COMPARE_INDEX = 52


def parse_kernels(text: str) -> list[gpr.KernelSpec]:
    """``"gaussian+laplacian,matern52"`` -> one spec per combo."""
    specs = []
    for combo in text.split(","):
        names = [part.strip() for part in combo.split("+") if part.strip()]
        if not names:
            raise ValueError(f"empty kernel combo in {text!r}")
        specs.append(gpr.spec_from_names(names))
    return specs


def parse_n_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _add_family(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--family",
        required=True,
        choices=sorted(pipeline.FAMILIES),
        help="problem family",
    )
    p.add_argument(
        "--magnitude",
        type=float,
        default=2.0,
        help="multiscale exponent of the diffusion family (ignored otherwise)",
    )


def _add_sweep_flags(p: argparse.ArgumentParser, step: float, cap: int) -> None:
    p.add_argument("--theta-step", type=float, default=step, help="grid step")
    p.add_argument(
        "--theta-min",
        type=float,
        default=None,
        help="grid start (defaults to one step above zero)",
    )
    p.add_argument("--theta-max", type=float, default=1.0, help="grid end")
    p.add_argument("--cap", type=int, default=cap, help="iteration cap / sentinel")
    p.add_argument("--workers", type=int, default=1, help="parallel solves per sweep")


def _sweep_config(args, problem) -> pipeline.SweepConfig:
    theta_min = args.theta_step if args.theta_min is None else args.theta_min
    return pipeline.SweepConfig(
        problem=problem,
        theta_min=theta_min,
        theta_max=args.theta_max,
        step=args.theta_step,
        max_iter_cap=args.cap,
        workers=args.workers,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amgtheta",
        description="θ sweeps, threshold regression, and comparison runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="emit one assembled system to disk")
    _add_family(p)
    p.add_argument("--n", type=int, required=True, help="cells per axis")
    p.add_argument("--index", type=int, default=1, help="1-based matrix index")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="θ traversal for one problem size")
    _add_family(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--index", type=int, default=1)
    _add_sweep_flags(p, step=0.001, cap=100)
    p.add_argument("--out", required=True, help="traversal CSV path")

    p = sub.add_parser("dataset", help="sweep a protocol stage into a CSV")
    _add_family(p)
    p.add_argument(
        "--tag",
        default="training",
        choices=pipeline.PROTOCOL_TAGS,
        help="protocol role; picks the size grid and matrix indices",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-list", default=None, help="override sizes, e.g. 64,80,96")
    _add_sweep_flags(p, step=0.001, cap=200)
    p.add_argument("--out", required=True, help="dataset CSV path")

    p = sub.add_parser("train", help="fit kernel combos on a dataset CSV")
    p.add_argument("--data", required=True, help="dataset CSV from `dataset`")
    p.add_argument("--kernels", default=DEFAULT_KERNELS)
    p.add_argument("--sigma", type=float, default=gpr.DEFAULT_SIGMA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="directory for model JSON files")

    p = sub.add_parser("predict", help="predict θ at given sizes")
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--n", type=int, nargs="+", required=True)

    p = sub.add_parser("evaluate", help="score models on a test dataset CSV")
    p.add_argument(
        "--model", action="append", required=True, help="model JSON (repeatable)"
    )
    p.add_argument("--data", required=True, help="test dataset CSV")
    p.add_argument("--out", required=True, help="directory for metric CSVs")

    p = sub.add_parser("compare", help="predicted vs optimal vs default solves")
    _add_family(p)
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--compare-n", type=int, default=512)
    p.add_argument("--default-theta", type=float, default=0.25)
    p.add_argument("--index", type=int, default=COMPARE_INDEX)
    _add_sweep_flags(p, step=0.001, cap=200)
    p.add_argument("--out", required=True, help="directory for comparison CSVs")

    p = sub.add_parser("pipeline", help="full protocol end to end")
    _add_family(p)
    p.add_argument("--kernels", default=DEFAULT_KERNELS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=gpr.DEFAULT_SIGMA)
    p.add_argument("--compare-n", type=int, default=512)
    p.add_argument("--default-theta", type=float, default=0.25)
    _add_sweep_flags(p, step=0.04, cap=200)
    p.add_argument("--out", required=True, help="artifact directory")
    return parser


def _cmd_generate(args) -> int:
    problem = pipeline.make_problem(args.family, args.n, args.index, args.magnitude)
    inst = assemble(problem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io_mm.write_matrix(out / "matrix.mtx", inst.a)
    io_mm.write_vector(out / "rhs.mtx", inst.b)
    print(f"wrote {out / 'matrix.mtx'} ({inst.a.nrows} unknowns)")
    print(f"wrote {out / 'rhs.mtx'}")
    return 0


def _cmd_sweep(args) -> int:
    problem = pipeline.make_problem(args.family, args.n, args.index, args.magnitude)
    row, curve = pipeline.sweep_theta(_sweep_config(args, problem))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(pipeline.traversal_csv(curve).encode())
    flag = "" if row.converged else " (no θ converged)"
    print(
        f"n={row.n} theta_opt={row.theta_opt!r} iter={row.iterations} "
        f"residual={row.residual:.3e}{flag}"
    )
    print(f"wrote {out}")
    return 0


def _cmd_dataset(args) -> int:
    if args.n_list is not None:
        sizes = parse_n_list(args.n_list)
    elif args.tag == "training":
        sizes = pipeline.TRAIN_N
    else:
        drawn = dict(zip(("retrain1", "retrain2", "test"), pipeline.protocol_draws(args.seed)))
        sizes = drawn[args.tag]
    template = pipeline.make_problem(args.family, max(sizes), 1, args.magnitude)
    dataset = pipeline.build_dataset(
        args.family,
        sizes,
        _sweep_config(args, template),
        args.tag,
        STAGE_INDEX[args.tag],
        args.magnitude,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(pipeline.dataset_csv(dataset).encode())
    print(f"wrote {out} ({len(dataset.rows)} rows, tag={args.tag})")
    return 0


def _cmd_train(args) -> int:
    dataset = pipeline.dataset_from_csv(Path(args.data).read_text())
    x, y = dataset.xy()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in parse_kernels(args.kernels):
        model = gpr.train(x, y, spec, noise_var=args.sigma**2, seed=args.seed)
        path = out / f"model_{spec.name}.json"
        path.write_bytes(gpr.model_to_json(model).encode())
        lml = gpr.log_marginal_likelihood(model)
        print(f"{spec.name}: log marginal likelihood {lml:.4f} -> {path}")
    return 0


def _cmd_predict(args) -> int:
    model = gpr.model_from_json(Path(args.model).read_text())
    for n in args.n:
        print(f"{n} {gpr.predict_theta(model, float(n))!r}")
    return 0


def _cmd_evaluate(args) -> int:
    dataset = pipeline.dataset_from_csv(Path(args.data).read_text(), "test")
    rows = []
    for path in args.model:
        model = gpr.model_from_json(Path(path).read_text())
        pairs = []
        for row in dataset.rows:
            pred = gpr.predict(model, float(row.n))
            pairs.append(
                metrics.EvalPair(
                    row.theta_opt,
                    gpr.predict_theta(model, float(row.n)),
                    pred.variance**0.5,
                )
            )
        rows.append((model.spec.name, metrics.evaluate(model, pairs)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_bytes(metrics.metrics_table_csv(rows).encode())
    (out / "picp.csv").write_bytes(metrics.picp_table_csv(rows).encode())
    print(f"wrote {out / 'metrics.csv'} and {out / 'picp.csv'} ({len(rows)} models)")
    return 0


def _cmd_compare(args) -> int:
    model = gpr.model_from_json(Path(args.model).read_text())
    template = pipeline.make_problem(
        args.family, args.compare_n, args.index, args.magnitude
    )
    row = pipeline.run_compare(
        args.family,
        model,
        _sweep_config(args, template),
        args.compare_n,
        args.default_theta,
        args.index,
        args.magnitude,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_bytes(pipeline.compare_csv([row]).encode())
    (out / "compare_times.csv").write_bytes(
        pipeline.compare_times_csv([row]).encode()
    )
    print(pipeline.compare_csv([row]), end="")
    print(f"wrote {out / 'compare.csv'}")
    return 0


def _cmd_pipeline(args) -> int:
    specs = parse_kernels(args.kernels)
    try:
        art = pipeline.run_pipeline(
            args.family,
            specs,
            seed=args.seed,
            step=args.theta_step,
            cap=args.cap,
            compare_n=args.compare_n,
            default_theta=args.default_theta,
            sigma=args.sigma,
            workers=args.workers,
            magnitude=args.magnitude,
        )
    except pipeline.PipelineError as exc:
        pipeline.emit_reports(exc.artifacts, args.out)
        print(f"error: {exc} (partial artifacts in {args.out})", file=sys.stderr)
        return 2
    manifest = pipeline.emit_reports(art, args.out)
    print(f"wrote {len(manifest)} artifact files to {args.out}")
    if art.compare:
        print(pipeline.compare_csv(art.compare), end="")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "sweep": _cmd_sweep,
    "dataset": _cmd_dataset,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
