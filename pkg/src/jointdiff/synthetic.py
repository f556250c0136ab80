"""Twelve-task toy world with known task groups, and the metric-recovery experiment.

Tasks 1-4 and 5-8 have rank-one weight matrices (each group is four scalar
multiples of one direction); tasks 9-12 are independent. Every task is also
observed on its own half-size subsample through a task-specific PCA feature
extractor, with only the first ``n_coupled`` instances shared across tasks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bridge import aligned_reference
from .errors import DegenerateDataError, ZeroVarianceError
from .joint import (
    DiffusionConfig,
    MetricMatrixReport,
    ProblemInstance,
    Reference,
    build_metric_report,
    run_joint_diffusion,
)
from .manifold import manifold_metric

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToyConfig:
    n_tasks: int = 12
    dim: int = 100
    n: int = 1000
    group_spans: tuple[tuple[int, int], ...] = ((0, 4), (4, 8))
    noise_std: float = 0.2
    n_coupled: int = 30
    variance_retained: float = 0.95
    n_val_pairs: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.variance_retained <= 1:
            raise ValueError("variance_retained must lie in (0, 1]")
        spans = sorted(self.group_spans)
        for lo, hi in spans:
            if not 0 <= lo < hi <= self.n_tasks:
                raise ValueError(f"group span {(lo, hi)} outside {self.n_tasks} tasks")
        for (_, hi), (lo, _) in zip(spans, spans[1:]):
            if lo < hi:
                raise ValueError("group spans overlap")
        if not self.n_coupled <= self.n // 2:
            raise ValueError("n_coupled cannot exceed the subsample size")


@dataclass
class DecoupledTask:
    source_index: np.ndarray   # rows of the shared input matrix
    features: np.ndarray
    predictions: np.ndarray
    ground_truth: np.ndarray   # noiseless task predictions on the same instances
    pca_mean: np.ndarray
    pca_components: np.ndarray  # dim x d_k
    couples: np.ndarray        # (n_coupled, 2) pairs against any other task


@dataclass
class ToyWorld:
    config: ToyConfig
    ground_truth_weights: np.ndarray   # dim x n_tasks
    inputs: np.ndarray                 # n x dim
    coupled_obs: np.ndarray            # n_tasks x n
    decoupled: list[DecoupledTask] = field(default_factory=list)

    def ground_truth(self) -> np.ndarray:
        return (self.inputs @ self.ground_truth_weights).T


def pca_extractor(data, variance_retained: float = 0.95):
    """Principal directions of ``data`` and the number needed to retain the variance.

    Returns ``(components, d)`` where ``components`` (columns sorted by
    decreasing eigenvalue) span all directions and the first ``d`` retain at
    least ``variance_retained`` of the total variance.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("pca_extractor needs a 2-D array with at least two rows")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1].clip(min=0.0), evecs[:, ::-1]
    total = evals.sum()
    if not total > 0:
        raise DegenerateDataError("data has zero covariance")
    frac = np.cumsum(evals) / total
    # guard against round-off pushing an exact threshold below itself
    d = int(np.searchsorted(frac, variance_retained - 1e-12) + 1)
    return evecs, min(d, evecs.shape[1])


def least_squares_fit(features, targets) -> np.ndarray:
    """Minimize ``||X w - y||^2``; a tiny ridge handles rank deficiency."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    gram = x.T @ x
    rhs = x.T @ y
    d = gram.shape[0]
    try:
        if np.linalg.matrix_rank(x) < d:
            raise np.linalg.LinAlgError
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        ridge = 1e-8 * np.trace(gram) / d
        return np.linalg.solve(gram + ridge * np.eye(d), rhs)


def generate_toy_world(cfg: ToyConfig) -> ToyWorld:
    rng = np.random.default_rng(cfg.seed)
    w = rng.uniform(-1, 1, size=(cfg.dim, cfg.n_tasks))
    for lo, hi in cfg.group_spans:
        u = rng.uniform(-1, 1, size=(cfg.dim, 1))
        v = rng.uniform(-1, 1, size=(1, hi - lo))
        w[:, lo:hi] = u @ v
    x = rng.uniform(-1, 1, size=(cfg.n, cfg.dim))
    clean = (x @ w).T
    coupled = clean + rng.normal(0.0, cfg.noise_std, size=clean.shape)

    n_sub = cfg.n // 2
    shared = np.arange(cfg.n_coupled)
    couples = np.column_stack([shared, shared])
    tasks = []
    for t in range(cfg.n_tasks):
        rest = rng.choice(np.arange(cfg.n_coupled, cfg.n), size=n_sub - cfg.n_coupled, replace=False)
        idx = np.concatenate([shared, rest])
        sub = x[idx]
        comps, d95 = pca_extractor(sub, cfg.variance_retained)
        d_k = int(rng.integers(d95, cfg.dim + 1))
        mean = sub.mean(axis=0)
        proj = comps[:, :d_k]
        feats = (sub - mean) @ proj
        wk = least_squares_fit(feats, coupled[t, idx])
        preds = feats @ wk + rng.normal(0.0, cfg.noise_std, size=n_sub)
        tasks.append(DecoupledTask(
            source_index=idx, features=feats, predictions=preds,
            ground_truth=clean[t, idx], pca_mean=mean, pca_components=proj,
            couples=couples.copy(),
        ))
    return ToyWorld(config=cfg, ground_truth_weights=w, inputs=x, coupled_obs=coupled, decoupled=tasks)


def validation_pairs(truth, n_pairs: int, rng) -> np.ndarray:
    """Random ordered pairs labelled by ``truth`` (higher value ranks first)."""
    n = truth.size
    i = rng.integers(0, n, size=n_pairs)
    j = (i + rng.integers(1, n, size=n_pairs)) % n
    hi = np.where(truth[i] >= truth[j], i, j)
    lo = np.where(truth[i] >= truth[j], j, i)
    return np.column_stack([hi, lo])


def toy_problem(world: ToyWorld, main: int) -> ProblemInstance:
    """Predictor combination problem with task ``main`` refined by the others."""
    cfg = world.config
    t = world.decoupled[main]
    rng = np.random.default_rng([cfg.seed, main])
    val = validation_pairs(t.ground_truth, cfg.n_val_pairs, rng)
    refs = [
        Reference(features=o.features, predictions=o.predictions, couples=o.couples)
        for k, o in enumerate(world.decoupled) if k != main
    ]
    return ProblemInstance(features=t.features, predictions=t.predictions, refs=refs, val_pairs=val)


def metric_matrix(vectors) -> np.ndarray:
    k = len(vectors)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = manifold_metric(vectors[i], vectors[j])
    return out


@dataclass
class ToyResult:
    ground_truth: MetricMatrixReport
    initial: MetricMatrixReport
    refined: MetricMatrixReport
    refined_predictions: list[np.ndarray]
    outer_iterations: list[int]


def _place_row(out, main, row):
    # row[0] is the main predictor, row[1:] the references in task order
    others = [k for k in range(out.shape[0]) if k != main]
    out[main, others] = row[1:]
    out[main, main] = 1.0


def run_toy_experiment(cfg: ToyConfig, dcfg: DiffusionConfig | None = None, world: ToyWorld | None = None) -> ToyResult:
    """Run the twelve combination problems and collect the three metric matrices.

    Row ``k`` of the initial matrix holds task ``k``'s original predictor
    against every other task's original predictor aligned through the initial
    bridge. Row ``k`` of the refined matrix uses the refined predictors of
    both tasks and the final bridges of problem ``k``.
    """
    dcfg = dcfg or DiffusionConfig()
    world = world or generate_toy_world(cfg)
    labels = [f"task{k + 1}" for k in range(cfg.n_tasks)]
    gt = metric_matrix(list(world.coupled_obs))
    initial = np.eye(cfg.n_tasks)
    refined = np.eye(cfg.n_tasks)
    preds, iters, states = [], [], []
    for k in range(cfg.n_tasks):
        inst = toy_problem(world, k)
        f, state = run_joint_diffusion(inst, dcfg)
        _place_row(initial, k, build_metric_report(state, inst, state.initial_bridges, inst.predictions).matrix[0])
        preds.append(f)
        iters.append(state.outer_iterations)
        states.append(state)
        logger.info("task %d: outer=%d val=%s", k + 1, state.outer_iterations, state.val_history)
    for k, state in enumerate(states):
        others = [l for l in range(cfg.n_tasks) if l != k]
        for b, l in zip(state.bridges, others):
            refined[k, l] = _safe_metric(preds[k], aligned_reference(b, preds[l]))
    return ToyResult(
        ground_truth=MetricMatrixReport(gt, labels),
        initial=MetricMatrixReport(initial, labels),
        refined=MetricMatrixReport(refined, labels),
        refined_predictions=preds,
        outer_iterations=iters,
    )


def _safe_metric(a, b) -> float:
    try:
        return manifold_metric(a, b)
    except ZeroVarianceError:
        return float("nan")


def make_scaling_instance(n: int, m: int, dim: int = 3, n_coupled: int = 200,
                          n_val_pairs: int = 500, noise_std: float = 0.2, seed: int = 0) -> ProblemInstance:
    """Large low-dimensional problem for timing runs.

    The main task is linear in the inputs; even-numbered references are noisy
    rescalings of it, odd-numbered ones are unrelated. Every reference sees the
    inputs in its own shuffled order through a random rotation, with the first
    ``n_coupled`` instances shared.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, dim))
    w = rng.uniform(-1, 1, size=dim)
    truth = x @ w
    refs = []
    for k in range(m):
        wk = w * rng.uniform(0.5, 2.0) if k % 2 == 0 else rng.uniform(-1, 1, size=dim)
        order = np.concatenate([np.arange(n_coupled), n_coupled + rng.permutation(n - n_coupled)])
        rot, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        xk = x[order]
        refs.append(Reference(
            features=xk @ rot,
            predictions=xk @ wk + rng.normal(0.0, noise_std, size=n),
            couples=np.column_stack([np.arange(n_coupled)] * 2),
        ))
    preds = truth + rng.normal(0.0, noise_std, size=n)
    val = validation_pairs(truth, n_val_pairs, rng)
    return ProblemInstance(features=x, predictions=preds, refs=refs, val_pairs=val)
