"""Joint diffusion of the main predictor and the reference bridges.

The run first diffuses every bridge from its coupling labels, then alternates
f-diffusion (validation-accuracy driven) with bridge diffusion (alignment
driven), rebuilding the main feature graph from the refined predictor after
each round.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import bridge as br
from .errors import LengthMismatchError, NoValidationPairsError, ZeroVarianceError
from .fdiffusion import ScoreProblem, diffuse_f_step
from .manifold import manifold_metric, project_to_manifold, task_affinity
from .ranking import check_rank_pairs, ranking_accuracy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionConfig:
    """Hyperparameters of a joint diffusion run.

    ``sigma_f2`` and ``sigma_k2`` are multipliers of the variance of the
    (manifold-projected) main and reference predictions.
    """

    sigma2: float = 0.1
    delta: float = 2.0
    delta_b: float = 1e-5
    sigma_f2: float = 0.01
    sigma_k2: float = 0.01
    n_neighbors: int = 20
    k: int = 5
    t1: int = 20
    t2: int = 20
    improvement_eps: float = 1e-6
    bridge_solver: str = "auto"
    auto_terminate: bool = True

    def __post_init__(self):
        if self.t1 < 1 or self.t2 < 1:
            raise ValueError("t1 and t2 must be at least 1")
        if self.k < 1 or self.n_neighbors < 1:
            raise ValueError("k and n_neighbors must be at least 1")
        for name in ("sigma2", "delta_b", "sigma_f2", "sigma_k2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if self.bridge_solver not in ("auto", "implicit", "explicit"):
            raise ValueError(f"unknown bridge_solver {self.bridge_solver!r}")


@dataclass
class Reference:
    """A reference predictor evaluated on its own instances.

    ``couples`` lists ``(main_index, ref_index)`` pairs; ``None`` means the
    reference is evaluated on exactly the main instances.
    """

    features: np.ndarray
    predictions: np.ndarray
    couples: np.ndarray | None = None


@dataclass
class ProblemInstance:
    features: np.ndarray
    predictions: np.ndarray
    refs: list[Reference]
    val_pairs: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.predictions)

    def validate(self) -> None:
        n = self.n
        if len(self.features) != n:
            raise LengthMismatchError(f"main features have {len(self.features)} rows for {n} predictions")
        if not self.refs:
            raise ValueError("at least one reference required")
        for i, r in enumerate(self.refs):
            if len(r.features) != len(r.predictions):
                raise LengthMismatchError(f"reference {i}: {len(r.features)} feature rows for {len(r.predictions)} predictions")
            if r.couples is None:
                if len(r.predictions) != n:
                    raise LengthMismatchError(f"reference {i} is fully coupled but has {len(r.predictions)} instances, main has {n}")
            else:
                pairs = br.check_pairs(r.couples, n, len(r.predictions))
                if len(pairs) == 0:
                    raise ValueError(f"reference {i} has no coupling labels")
        if self.val_pairs is not None:
            check_rank_pairs(self.val_pairs, n)


@dataclass
class DiffusionState:
    f: np.ndarray
    bridges: list[sp.csr_matrix]
    weights: np.ndarray
    initial_bridges: list[sp.csr_matrix] = field(default_factory=list)
    outer_iterations: int = 0
    f_steps: int = 0
    bridge_steps: int = 0
    val_history: list[float] = field(default_factory=list)
    alignment_history: list[list[float]] = field(default_factory=list)
    converged: bool = False

    @property
    def val_accuracy(self) -> float | None:
        return self.val_history[-1] if self.val_history else None


@dataclass
class MetricMatrixReport:
    matrix: np.ndarray
    labels: list[str]


def task_weights(f, aligned_refs, sigma2: float) -> np.ndarray:
    """Affinity between ``f`` and every aligned reference."""
    if len(aligned_refs) == 0:
        raise ValueError("task_weights needs at least one reference")
    return np.array([task_affinity(manifold_metric(f, g), sigma2) for g in aligned_refs])


def _safe_alignment(f, g, b) -> float:
    try:
        return br.alignment_score(f, g, b)
    except ZeroVarianceError:
        return -np.inf


def _use_implicit(cfg: DiffusionConfig, n_main: int, n_ref: int) -> bool:
    if cfg.bridge_solver == "auto":
        return max(n_main, n_ref) <= br.DENSE_SIZE_LIMIT
    return cfg.bridge_solver == "implicit"


def diffuse_bridge(b, f, g, g_f, g_k, cfg: DiffusionConfig):
    """Run up to ``t2`` bridge steps, stopping once the alignment stops increasing.

    Returns the last accepted bridge, its alignment history, and the number of
    accepted steps.
    """
    implicit = _use_implicit(cfg, g_f.n, g_k.n)
    history = [_safe_alignment(f, g, b)]
    steps = 0
    for _ in range(cfg.t2):
        if implicit:
            nb = br.bridge_step_implicit(b, g_f, g_k, cfg.delta_b, cfg.k)
        else:
            nb = br.bridge_step_explicit(b, g_f, g_k, cfg.delta_b, cfg.k)
        s = _safe_alignment(f, g, nb)
        if not s > history[-1] + cfg.improvement_eps:
            break
        b = nb
        history.append(s)
        steps += 1
    return b, history, steps


class _Run:
    """Mutable working set of one joint diffusion run."""

    def __init__(self, inst: ProblemInstance, cfg: DiffusionConfig):
        inst.validate()
        self.inst = inst
        self.cfg = cfg
        self.f0 = project_to_manifold(inst.predictions)
        self.refs = [project_to_manifold(r.predictions) for r in inst.refs]
        n = self.f0.size
        self.g_f = br.build_feature_graph(
            inst.features, self.f0, cfg.n_neighbors, cfg.sigma_f2 * self.f0.var()
        )
        self.g_k = [
            br.build_feature_graph(r.features, g, cfg.n_neighbors, cfg.sigma_k2 * g.var())
            for r, g in zip(inst.refs, self.refs)
        ]
        self.bridges = [
            sp.identity(n, format="csr") if r.couples is None else br.init_bridge(r.couples, n, len(g))
            for r, g in zip(inst.refs, self.refs)
        ]
        self.alignment_history: list[list[float]] = [[] for _ in self.refs]
        self.bridge_steps = 0

    def bridge_phase(self, f) -> list[float]:
        scores = []
        for i, (g, gk) in enumerate(zip(self.refs, self.g_k)):
            b, hist, steps = diffuse_bridge(self.bridges[i], f, g, self.g_f, gk, self.cfg)
            self.bridges[i] = b
            self.alignment_history[i].extend(hist if not self.alignment_history[i] else hist[1:])
            self.bridge_steps += steps
            scores.append(hist[-1])
        return scores

    def aligned(self) -> list[np.ndarray]:
        return [br.aligned_reference(b, g) for b, g in zip(self.bridges, self.refs)]


def _f_problem(f, aligned, cfg):
    usable = []
    for a in aligned:
        try:
            usable.append(project_to_manifold(a))
        except ZeroVarianceError:
            continue
    if not usable:
        return ScoreProblem(f, np.zeros((0, f.size)), np.zeros(0), cfg.delta)
    weights = task_weights(f, usable, cfg.sigma2)
    return ScoreProblem(f, np.array(usable), weights, cfg.delta)


def run_joint_diffusion(inst: ProblemInstance, cfg: DiffusionConfig | None = None):
    """Refine ``inst.predictions`` against the references.

    Returns ``(refined, state)`` where ``refined`` is the manifold point with
    the best validation accuracy seen during the run.
    """
    cfg = cfg or DiffusionConfig()
    val = inst.val_pairs
    has_val = val is not None and len(val) > 0
    if cfg.auto_terminate and not has_val:
        raise NoValidationPairsError("validation pairs are required for automatic termination")

    run = _Run(inst, cfg)
    f0 = run.f0
    run.bridge_phase(f0)
    initial_bridges = [b.copy() for b in run.bridges]

    def accuracy(f):
        return ranking_accuracy(f, val) if has_val else 0.0

    f = f0
    best_f, best_acc = f0, accuracy(f0)
    state = DiffusionState(f=f0, bridges=run.bridges, weights=np.zeros(len(run.refs)),
                           initial_bridges=initial_bridges, val_history=[best_acc])
    eps = cfg.improvement_eps

    for _ in range(cfg.t1):
        state.outer_iterations += 1
        phase_acc = accuracy(f)
        for _ in range(cfg.t2):
            new_f = diffuse_f_step(_f_problem(f, run.aligned(), cfg), f0)
            new_acc = accuracy(new_f)
            if cfg.auto_terminate and not new_acc > phase_acc + eps:
                break
            f, phase_acc = new_f, new_acc
            state.f_steps += 1
        improved = phase_acc > best_acc + eps
        if improved or not cfg.auto_terminate:
            best_f, best_acc = f, phase_acc
            state.val_history.append(phase_acc)
        elif cfg.auto_terminate:
            state.converged = True
            break
        run.bridge_phase(f)
        run.g_f = run.g_f.with_predictions(f, cfg.sigma_f2 * f.var())

    state.f = best_f
    state.bridges = run.bridges
    state.alignment_history = run.alignment_history
    state.bridge_steps = run.bridge_steps
    aligned = run.aligned()
    state.weights = np.array([
        task_affinity(manifold_metric(best_f, a), cfg.sigma2) if np.ptp(a) > 0 else 0.0
        for a in aligned
    ])
    return best_f.copy(), state


def _pairwise_metrics(vectors) -> np.ndarray:
    k = len(vectors)
    out = np.eye(k)
    for i, j in itertools.combinations(range(k), 2):
        try:
            out[i, j] = out[j, i] = manifold_metric(vectors[i], vectors[j])
        except ZeroVarianceError:
            out[i, j] = out[j, i] = np.nan
    return out


def build_metric_report(state: DiffusionState, inst: ProblemInstance, bridges=None, main=None) -> MetricMatrixReport:
    """Pairwise metrics between the main predictor and the aligned references.

    ``bridges`` and ``main`` default to the final bridges and refined
    predictor of the run.
    """
    bridges = state.bridges if bridges is None else bridges
    main = state.f if main is None else main
    vectors = [main] + [
        br.aligned_reference(b, project_to_manifold(r.predictions)) for b, r in zip(bridges, inst.refs)
    ]
    labels = ["main"] + [f"ref{i}" for i in range(len(inst.refs))]
    return MetricMatrixReport(matrix=_pairwise_metrics(vectors), labels=labels)


@dataclass(frozen=True)
class TuneGrid:
    sigma2: tuple[float, ...] = (0.05, 0.1, 0.25, 0.5, 1.0, 2.0)
    delta: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
    n_neighbors: tuple[int, ...] = (5, 10, 20)
    k: tuple[int, ...] = (3, 5, 10)
    sigma_f2: tuple[float, ...] = (0.01, 0.1, 1.0)


def coupling_score(inst: ProblemInstance, cfg: DiffusionConfig) -> float:
    """Maximum alignment over references after the bridge initialization phase."""
    run = _Run(inst, cfg)
    return float(max(run.bridge_phase(run.f0)))


def tune_hyperparameters(inst: ProblemInstance, grid: TuneGrid | None = None,
                         base: DiffusionConfig | None = None) -> DiffusionConfig:
    """Two-stage grid search.

    Graph and bridge parameters maximize the best coupling score; ``sigma2``
    and ``delta`` then maximize validation accuracy of full runs with the
    graph parameters held fixed. Ties keep the earliest grid point.
    """
    grid = grid or TuneGrid()
    base = base or DiffusionConfig()
    if inst.val_pairs is None or len(inst.val_pairs) == 0:
        raise NoValidationPairsError("tuning needs validation pairs")
    if not all((grid.sigma2, grid.delta, grid.n_neighbors, grid.k, grid.sigma_f2)):
        raise ValueError("every grid axis needs at least one value")

    best_graph, best_score = None, -np.inf
    for nn, k, sf in itertools.product(grid.n_neighbors, grid.k, grid.sigma_f2):
        cand = replace(base, n_neighbors=nn, k=k, sigma_f2=sf, sigma_k2=sf)
        s = coupling_score(inst, cand)
        logger.debug("N=%d K=%d sigma_f2=%g coupling=%.6f", nn, k, sf, s)
        if s > best_score:
            best_graph, best_score = cand, s

    best_cfg, best_acc = None, -np.inf
    for s2, d in itertools.product(grid.sigma2, grid.delta):
        cand = replace(best_graph, sigma2=s2, delta=d)
        refined, _ = run_joint_diffusion(inst, cand)
        acc = ranking_accuracy(refined, inst.val_pairs)
        logger.debug("sigma2=%g delta=%g accuracy=%.6f", s2, d, acc)
        if acc > best_acc:
            best_cfg, best_acc = cand, acc
    return best_cfg
