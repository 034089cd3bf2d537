"""End-to-end experiment pipeline around the θ-sweep oracle.

Builds sweep datasets over problem families, trains and retrains the
regression models that map problem size to the best strong threshold,
scores them on a held-out test set, and runs the three-way comparison
solves (predicted θ vs sweep-optimal θ vs the 0.25 default).  Every
artifact is emitted as a deterministic file with a hashed manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from amgtheta import amg, gpr, metrics
from amgtheta.problems import ProblemSpec, assemble
from amgtheta.sparse import SmootherError

__all__ = [
    "CompareRow",
    "DatasetRow",
    "FAMILIES",
    "PipelineArtifacts",
    "PipelineError",
    "PROTOCOL_POOL",
    "SweepConfig",
    "SweepPoint",
    "TRAIN_N",
    "ThetaDataset",
    "build_dataset",
    "dataset_csv",
    "dataset_from_csv",
    "emit_reports",
    "make_problem",
    "protocol_draws",
    "run_compare",
    "run_pipeline",
    "sweep_grid",
    "sweep_theta",
    "traversal_csv",
]

FAMILIES = {
    "poisson": "ConstPoisson",
    "diffusion": "BlockDiffusion",
    "helmholtz": "Helmholtz",
}

TRAIN_N = tuple(range(64, 401, 16))
PROTOCOL_POOL = tuple(range(200, 601, 8))
PROTOCOL_DRAWS = (10, 12, 7)
PROTOCOL_TAGS = ("training", "retrain1", "retrain2", "test")
COMPARE_MATRICES = 3
_POINTS_STREAM = 1


class PipelineError(RuntimeError):
    """A pipeline stage failed; partial artifacts ride on the exception."""

    def __init__(self, stage: str, artifacts: "PipelineArtifacts", cause: Exception):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.artifacts = artifacts


@dataclass(frozen=True)
class SweepConfig:
    """One θ-sweep over a fixed problem.

    The grid is ``theta_min, theta_min + step, ...`` up to ``theta_max``
    inclusive; it starts strictly above zero because θ ∈ (0, 1].  The
    cap doubles as the non-convergence sentinel in recorded iteration
    counts.  ``workers`` > 1 runs the per-θ solves on a thread pool;
    aggregation stays in grid order, so the winner never depends on it.
    """

    problem: ProblemSpec
    solver_base: amg.SolverOptions = field(default_factory=amg.SolverOptions)
    theta_min: float = 0.001
    theta_max: float = 1.0
    step: float = 0.001
    max_iter_cap: int = 200
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.theta_min > 0.0:
            raise ValueError(f"theta_min must be positive, got {self.theta_min}")
        if not self.step > 0.0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not self.theta_min <= self.theta_max <= 1.0:
            raise ValueError(
                f"need theta_min <= theta_max <= 1, got "
                f"[{self.theta_min}, {self.theta_max}]"
            )
        if self.max_iter_cap < 1:
            raise ValueError(f"max_iter_cap must be positive, got {self.max_iter_cap}")
        if self.workers < 1:
            raise ValueError(f"workers must be positive, got {self.workers}")


@dataclass(frozen=True)
class SweepPoint:
    """One grid point of a traversal curve."""

    theta: float
    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class DatasetRow:
    """Sweep winner for one problem size.

    ``iterations`` equals the cap when the whole grid failed to
    converge; ``converged`` records that flag explicitly.
    """

    n: int
    theta_opt: float
    iterations: int
    residual: float
    converged: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_opt <= 1.0:
            raise ValueError(f"theta_opt must lie in (0, 1], got {self.theta_opt}")


@dataclass(frozen=True)
class ThetaDataset:
    """Rows of (n, θ_opt, iter, residual) under a protocol role tag."""

    rows: tuple[DatasetRow, ...]
    protocol_tag: str

    def __post_init__(self) -> None:
        if self.protocol_tag not in PROTOCOL_TAGS:
            raise ValueError(
                f"protocol_tag must be one of {PROTOCOL_TAGS}, "
                f"got {self.protocol_tag!r}"
            )
        ns = [row.n for row in self.rows]
        if len(set(ns)) != len(ns):
            raise ValueError("duplicate n in dataset rows")

    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Training arrays: sizes as inputs, optimal thresholds as targets."""
        x = np.array([row.n for row in self.rows], dtype=np.float64)
        y = np.array([row.theta_opt for row in self.rows], dtype=np.float64)
        return x, y


@dataclass(frozen=True)
class CompareRow:
    """Three-way comparison at one size: predicted / sweep-opt / default.

    Iteration counts are reals because the diffusion family averages
    over three seeded matrices; a ``converged`` flag of False marks the
    non-convergence cell rather than erroring.
    """

    n: int
    theta_pred: float
    theta_opt: float
    theta_default: float
    iters: tuple[float, float, float]
    times: tuple[float, float, float]
    converged: tuple[bool, bool, bool]

    def __post_init__(self) -> None:
        if len(self.iters) != 3 or len(self.times) != 3 or len(self.converged) != 3:
            raise ValueError("iters, times, converged must each have three entries")


@dataclass
class PipelineArtifacts:
    """Everything a pipeline run produces, ready for emission."""

    family: str = ""
    seed: int = 0
    step: float = 0.001
    cap: int = 200
    compare_n: int = 512
    default_theta: float = 0.25
    sigma: float = gpr.DEFAULT_SIGMA
    kernel_names: tuple[str, ...] = ()
    datasets: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    compare: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def canonical_family(family: str) -> str:
    """Map a CLI family alias or a problem kind onto the problem kind."""
    if family in FAMILIES:
        return FAMILIES[family]
    if family in FAMILIES.values():
        return family
    raise ValueError(
        f"unknown family {family!r}; expected one of {sorted(FAMILIES)}"
    )


def make_problem(
    family: str, n: int, index: int = 1, magnitude: float = 2.0
) -> ProblemSpec:
    """Problem for one protocol matrix.

    The block-diffusion family draws its partition count T as an integer
    in the open interval (10, 20) from a generator seeded with the
    1-based matrix index, and uses that same index as the coefficient
    seed; the other families carry the index only as an inert seed.
    """
    kind = canonical_family(family)
    if kind == "BlockDiffusion":
        t = int(np.random.default_rng(index).integers(11, 20))
        return ProblemSpec(
            kind=kind, n=n, blocks=t, magnitude=magnitude, seed=index
        )
    return ProblemSpec(kind=kind, n=n, seed=index)


def sweep_grid(cfg: SweepConfig) -> np.ndarray:
    """The inclusive θ grid, rounded to 12 decimals for clean emission."""
    count = int(math.floor((cfg.theta_max - cfg.theta_min) / cfg.step + 1e-9)) + 1
    return np.round(cfg.theta_min + cfg.step * np.arange(count), 12)


def _solve_point(a, b, opts: amg.SolverOptions, cap: int) -> SweepPoint:
    return _timed_solve(a, b, opts, cap)[0]


def sweep_theta(cfg: SweepConfig) -> tuple[DatasetRow, list[SweepPoint]]:
    """Solve across the θ grid and pick the winner.

    The winner minimizes iteration count, then final residual, then θ.
    A grid with no convergent point still yields a row (flagged via
    ``converged=False`` with the cap as its iteration count).
    """
    inst = assemble(cfg.problem)
    thetas = sweep_grid(cfg)

    def run_one(theta: float) -> SweepPoint:
        opts = dataclasses.replace(
            cfg.solver_base, theta=float(theta), max_iter=cfg.max_iter_cap
        )
        return _solve_point(inst.a, inst.b, opts, cfg.max_iter_cap)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            points = list(pool.map(run_one, thetas))
    else:
        points = [run_one(float(t)) for t in thetas]
    best = min(points, key=lambda p: (p.iterations, p.residual, p.theta))
    row = DatasetRow(
        n=cfg.problem.n,
        theta_opt=best.theta,
        iterations=best.iterations,
        residual=best.residual,
        converged=best.converged,
    )
    return row, points


def build_dataset(
    family: str,
    n_list,
    cfg: SweepConfig,
    protocol_tag: str = "training",
    start_index: int = 1,
    magnitude: float = 2.0,
    curves_out: dict | None = None,
) -> ThetaDataset:
    """Sweep every size in ``n_list`` into a dataset.

    ``cfg.problem`` serves as a template; each row gets its own problem
    via :func:`make_problem` with consecutive matrix indices starting at
    ``start_index``.  Pass ``curves_out`` to also collect the full
    traversal curve per n.
    """
    if len(n_list) == 0:
        raise ValueError("n_list must not be empty")
    rows = []
    for offset, n in enumerate(n_list):
        problem = make_problem(family, int(n), start_index + offset, magnitude)
        row, curve = sweep_theta(dataclasses.replace(cfg, problem=problem))
        rows.append(row)
        if curves_out is not None:
            curves_out[int(n)] = curve
    return ThetaDataset(tuple(rows), protocol_tag)


def protocol_draws(seed: int) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """Retrain and test sizes: 10 + 12 + 7 draws without replacement.

    The pool is the 51 multiples of 8 in [200, 600]; the three sets are
    mutually disjoint (they may still coincide with training sizes) and
    come back sorted ascending.
    """
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _POINTS_STREAM]))
    picks = rng.choice(np.array(PROTOCOL_POOL), size=sum(PROTOCOL_DRAWS), replace=False)
    r1, r2 = PROTOCOL_DRAWS[0], PROTOCOL_DRAWS[0] + PROTOCOL_DRAWS[1]
    return (
        tuple(sorted(int(v) for v in picks[:r1])),
        tuple(sorted(int(v) for v in picks[r1:r2])),
        tuple(sorted(int(v) for v in picks[r2:])),
    )


def _timed_solve(a, b, opts: amg.SolverOptions, cap: int):
    try:
        h = amg.setup_hierarchy(a, opts)
        _, report = amg.solve(h, b)
    except (amg.SetupError, amg.DivergenceError, SmootherError):
        # solver breakdown at this θ is scored as the cap sentinel
        return SweepPoint(opts.theta, cap, math.inf, False), 0.0
    iters = report.iterations if report.converged else cap
    resid = report.residual_history[-1] if report.residual_history else 0.0
    point = SweepPoint(opts.theta, iters, float(resid), report.converged)
    return point, report.setup_seconds + report.solve_seconds


def run_compare(
    family: str,
    model: gpr.GprModel,
    cfg: SweepConfig,
    compare_n: int = 512,
    default_theta: float = 0.25,
    start_index: int = 1,
    magnitude: float = 2.0,
) -> CompareRow:
    """Three-way solve at one size: θ_pred vs sweep-opt vs default.

    The diffusion family averages iterations, seconds, and the sweep
    optimum over three consecutive seeded matrices (arithmetic mean);
    a column is marked non-convergent when any matrix in it fails.
    """
    kind = canonical_family(family)
    count = COMPARE_MATRICES if kind == "BlockDiffusion" else 1
    theta_pred = gpr.predict_theta(model, float(compare_n))
    iters = np.zeros(3)
    times = np.zeros(3)
    converged = [True, True, True]
    opt_sum = 0.0
    for k in range(count):
        problem = make_problem(family, compare_n, start_index + k, magnitude)
        local = dataclasses.replace(cfg, problem=problem)
        opt_row, _ = sweep_theta(local)
        opt_sum += opt_row.theta_opt
        inst = assemble(problem)
        thetas = (theta_pred, opt_row.theta_opt, default_theta)
        for col, theta in enumerate(thetas):
            opts = dataclasses.replace(
                cfg.solver_base, theta=float(theta), max_iter=cfg.max_iter_cap
            )
            point, seconds = _timed_solve(inst.a, inst.b, opts, cfg.max_iter_cap)
            iters[col] += point.iterations
            times[col] += seconds
            converged[col] = converged[col] and point.converged
    return CompareRow(
        n=int(compare_n),
        theta_pred=theta_pred,
        theta_opt=opt_sum / count,
        theta_default=float(default_theta),
        iters=tuple(float(v) / count for v in iters),
        times=tuple(float(v) / count for v in times),
        converged=tuple(converged),
    )


def run_pipeline(
    family: str,
    kernel_spec,
    seed: int = 0,
    step: float = 0.04,
    cap: int = 200,
    compare_n: int = 512,
    default_theta: float = 0.25,
    sigma: float = gpr.DEFAULT_SIGMA,
    workers: int = 1,
    magnitude: float = 2.0,
    train_n=TRAIN_N,
    draw_sets=None,
) -> PipelineArtifacts:
    """Full experiment: datasets, train/retrain, predict, evaluate, compare.

    ``kernel_spec`` is one :class:`~amgtheta.gpr.KernelSpec` or a list
    of them; the first is the headline model used for the comparison
    stage, the rest ride along for the metric tables.  ``train_n`` and
    ``draw_sets`` (a (retrain1, retrain2, test) size triple) exist for
    scaled-down runs; the defaults are the experiment protocol.

    Raises
    ------
    PipelineError
        Any stage failure, named, with partial artifacts attached.
    """
    specs = [kernel_spec] if isinstance(kernel_spec, gpr.KernelSpec) else list(kernel_spec)
    if not specs:
        raise ValueError("at least one kernel spec is required")
    names = tuple(spec.name for spec in specs)
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate kernel names in {names}")
    art = PipelineArtifacts(
        family=family,
        seed=int(seed),
        step=float(step),
        cap=int(cap),
        compare_n=int(compare_n),
        default_theta=float(default_theta),
        sigma=float(sigma),
        kernel_names=names,
    )
    base = SweepConfig(
        problem=make_problem(family, max(int(n) for n in train_n), 1, magnitude),
        theta_min=step,
        theta_max=1.0,
        step=step,
        max_iter_cap=cap,
        workers=workers,
    )

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:
            raise PipelineError(name, art, exc) from exc
        art.timings[name] = time.perf_counter() - t0
        return out

    def dataset_stage(tag, sizes, start_index):
        curve_sink = art.curves.setdefault(tag, {})
        art.datasets[tag] = build_dataset(
            family, sizes, base, tag, start_index, magnitude, curve_sink
        )

    if draw_sets is None:
        draw_sets = protocol_draws(seed)
    retrain1_n, retrain2_n, test_n = draw_sets

    stage("training dataset", lambda: dataset_stage("training", train_n, 1))
    x, y = art.datasets["training"].xy()
    stage(
        "train",
        lambda: art.models.update(
            {s.name: gpr.train(x, y, s, noise_var=sigma**2, seed=seed) for s in specs}
        ),
    )
    stage(
        "retrain1 dataset",
        lambda: dataset_stage("retrain1", retrain1_n, len(train_n) + 1),
    )
    x1, y1 = art.datasets["retrain1"].xy()
    stage(
        "retrain1",
        lambda: art.models.update(
            {name: gpr.retrain(m, x1, y1, seed=seed) for name, m in art.models.items()}
        ),
    )
    stage(
        "retrain2 dataset",
        lambda: dataset_stage(
            "retrain2", retrain2_n, len(train_n) + len(retrain1_n) + 1
        ),
    )
    x2, y2 = art.datasets["retrain2"].xy()
    stage(
        "retrain2",
        lambda: art.models.update(
            {name: gpr.retrain(m, x2, y2, seed=seed) for name, m in art.models.items()}
        ),
    )
    stage(
        "test dataset",
        lambda: dataset_stage(
            "test", test_n, len(train_n) + len(retrain1_n) + len(retrain2_n) + 1
        ),
    )

    def predict_stage():
        for name, model in art.models.items():
            rows = []
            for row in art.datasets["test"].rows:
                pred = gpr.predict(model, float(row.n))
                rows.append(
                    (
                        row.n,
                        row.theta_opt,
                        gpr.predict_theta(model, float(row.n)),
                        math.sqrt(pred.variance),
                    )
                )
            art.predictions[name] = rows

    stage("predict", predict_stage)

    def evaluate_stage():
        for name, model in art.models.items():
            pairs = [
                metrics.EvalPair(actual, predicted, sd)
                for _, actual, predicted, sd in art.predictions[name]
            ]
            art.reports[name] = metrics.evaluate(model, pairs)

    stage("evaluate", evaluate_stage)

    compare_index = (
        len(train_n) + len(retrain1_n) + len(retrain2_n) + len(test_n) + 1
    )
    stage(
        "compare",
        lambda: art.compare.append(
            run_compare(
                family,
                art.models[names[0]],
                base,
                compare_n,
                default_theta,
                compare_index,
                magnitude,
            )
        ),
    )
    return art


def dataset_csv(dataset: ThetaDataset) -> str:
    """``n,theta_opt,iter,residual`` rows in stored order."""
    lines = ["n,theta_opt,iter,residual"]
    for row in dataset.rows:
        lines.append(
            f"{row.n},{row.theta_opt!r},{row.iterations},{row.residual!r}"
        )
    return "\n".join(lines) + "\n"


def dataset_from_csv(text: str, protocol_tag: str = "training") -> ThetaDataset:
    """Inverse of :func:`dataset_csv`; the tag is not stored in the file."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "n,theta_opt,iter,residual":
        raise ValueError("expected header 'n,theta_opt,iter,residual'")
    rows = []
    for ln in lines[1:]:
        n, theta, iters, resid = ln.split(",")
        rows.append(DatasetRow(int(n), float(theta), int(iters), float(resid)))
    return ThetaDataset(tuple(rows), protocol_tag)


def traversal_csv(curve) -> str:
    """``theta,iter`` rows in grid order."""
    lines = ["theta,iter"]
    for point in curve:
        lines.append(f"{point.theta!r},{point.iterations}")
    return "\n".join(lines) + "\n"


def _compare_cell(iters: float, converged: bool) -> str:
    return repr(float(iters)) if converged else "non-convergence"


def compare_csv(rows) -> str:
    """Comparison table: θ columns then iteration columns, per size."""
    lines = [
        "n,theta_pred,theta_opt,theta_default,iter_pred,iter_opt,iter_default"
    ]
    for row in rows:
        cells = [
            str(row.n),
            repr(row.theta_pred),
            repr(row.theta_opt),
            repr(row.theta_default),
        ]
        cells += [
            _compare_cell(it, conv) for it, conv in zip(row.iters, row.converged)
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def compare_times_csv(rows) -> str:
    """Wall-clock seconds per comparison column; volatile by nature."""
    lines = ["n,time_pred,time_opt,time_default"]
    for row in rows:
        lines.append(
            f"{row.n},{row.times[0]!r},{row.times[1]!r},{row.times[2]!r}"
        )
    return "\n".join(lines) + "\n"


def predictions_csv(artifacts: PipelineArtifacts) -> str:
    """Per-kernel test-set predictions with posterior spread."""
    lines = ["kernel,n,theta_opt,theta_pred,pred_std"]
    for name in artifacts.kernel_names:
        for n, actual, predicted, sd in artifacts.predictions.get(name, []):
            lines.append(f"{name},{n},{actual!r},{predicted!r},{sd!r}")
    return "\n".join(lines) + "\n"


def _config_json(artifacts: PipelineArtifacts) -> str:
    payload = {
        "family": artifacts.family,
        "seed": artifacts.seed,
        "step": artifacts.step,
        "cap": artifacts.cap,
        "compare_n": artifacts.compare_n,
        "default_theta": artifacts.default_theta,
        "sigma": artifacts.sigma,
        "kernels": list(artifacts.kernel_names),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_reports(artifacts: PipelineArtifacts, out_dir) -> dict:
    """Write every artifact file and the hashed manifest.

    Timing files (stage timings, comparison seconds) are volatile: the
    manifest lists them with a null hash so two runs of the same
    configuration produce byte-identical manifests.  Returns the
    manifest mapping (relative path -> hash or None).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashed: dict[str, str] = {}
    volatile: list[str] = []

    def write(rel: str, text: str, is_volatile: bool = False) -> None:
        data = text.encode()
        try:
            (out / rel).parent.mkdir(parents=True, exist_ok=True)
            (out / rel).write_bytes(data)
        except OSError as exc:
            raise OSError(f"failed writing artifact {out / rel}: {exc}") from exc
        if is_volatile:
            volatile.append(rel)
        else:
            hashed[rel] = hashlib.sha256(data).hexdigest()

    if artifacts.family:
        write("config.json", _config_json(artifacts))
    for tag in PROTOCOL_TAGS:
        if tag in artifacts.datasets:
            write(f"dataset_{tag}.csv", dataset_csv(artifacts.datasets[tag]))
        for n, curve in sorted(artifacts.curves.get(tag, {}).items()):
            write(f"traversal/{tag}_n{n:04d}.csv", traversal_csv(curve))
    for name in artifacts.kernel_names:
        if name in artifacts.models:
            write(f"model_{name}.json", gpr.model_to_json(artifacts.models[name]))
    if artifacts.predictions:
        write("predictions.csv", predictions_csv(artifacts))
    if artifacts.reports:
        rows = [
            (name, artifacts.reports[name])
            for name in artifacts.kernel_names
            if name in artifacts.reports
        ]
        write("metrics.csv", metrics.metrics_table_csv(rows))
        write("picp.csv", metrics.picp_table_csv(rows))
    if artifacts.compare:
        write("compare.csv", compare_csv(artifacts.compare))
        write("compare_times.csv", compare_times_csv(artifacts.compare), True)
    if artifacts.timings:
        write(
            "timings.json",
            json.dumps(artifacts.timings, indent=2, sort_keys=True) + "\n",
            True,
        )

    manifest = {rel: hashed[rel] for rel in sorted(hashed)}
    manifest.update({rel: None for rel in sorted(volatile)})
    manifest_text = json.dumps({"files": manifest}, indent=2, sort_keys=True) + "\n"
    (out / "manifest.json").write_bytes(manifest_text.encode())
    return manifest
