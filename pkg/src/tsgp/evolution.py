"""Fitness evaluation, Pareto tournament selection, typed variation and the
generational loop.

Fitness is the vector of per-fold validation accuracies of an extra-trees
classifier trained on the transformed fold data. Parents are selected with a
Pareto tournament that keeps every non-dominated member of each sampled
tournament, which discourages programs that score well on average by
overfitting a few folds.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import TOOL_ID
from .classifier import ExtraTreesModel, fit_extra_trees
from .dataset import Dataset, FoldPlan, stratified_kfold
from .errors import ConfigError, DataError, TSGPError, InfeasibleDepth, MalformedModel
from .ops import DIVISORS, RATIOS
from .program import (
    DEPTH_MAX,
    DEPTH_MIN,
    FORMAT_VERSION,
    Node,
    ProgramTree,
    canonical_key,
    generate_tree,
    grammar_for,
    infer,
    iter_nodes,
    node_at,
    render_tree,
    replace_at,
    slot_context,
    term,
    transform_dataset,
    tree_from_document,
    tree_to_dict,
    validate_tree,
)

log = logging.getLogger(__name__)

MAX_RETRIES = 10
LOG_COLUMNS = ("generation", "best_mean_fitness", "mean_mean_fitness", "best_tree_size", "evaluations_cached")


@dataclass(frozen=True)
class FitnessVector:
    per_fold: tuple
    mean: float

    @classmethod
    def of(cls, accs) -> "FitnessVector":
        accs = tuple(float(a) for a in accs)
        return cls(accs, math.fsum(accs) / len(accs))

    @classmethod
    def zeros(cls, k: int) -> "FitnessVector":
        return cls.of([0.0] * k)

    def to_dict(self) -> dict:
        return {"per_fold": list(self.per_fold), "mean": self.mean}


@dataclass(frozen=True)
class EvoConfig:
    population_size: int = 100
    generations: int = 50
    crossover_rate: float = 0.8
    mutation_rate: float = 0.19
    elitism_rate: float = 0.01
    depth_min: int = DEPTH_MIN
    depth_max: int = DEPTH_MAX
    folds: int = 5
    fitness_trees: int = 10
    final_trees: int = 100
    tournament_ratio: float = 7.0  # μ, percent of the population
    seed: int = 0
    selection: str = "pareto"  # or "tournament" (scalar, on mean fitness)
    znorm: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.population_size >= 2, "population_size must be at least 2")
        need(self.generations >= 1, "generations must be at least 1")
        rates = (self.crossover_rate, self.mutation_rate, self.elitism_rate)
        need(all(0.0 <= r <= 1.0 for r in rates), "rates must lie in [0, 1]")
        need(abs(sum(rates) - 1.0) <= 1e-9, "crossover, mutation and elitism rates must sum to 1")
        need(DEPTH_MIN <= self.depth_min <= self.depth_max <= DEPTH_MAX,
             f"depth window must satisfy {DEPTH_MIN} <= depth_min <= depth_max <= {DEPTH_MAX}")
        need(self.folds >= 2, "folds must be at least 2")
        need(self.fitness_trees >= 1 and self.final_trees >= 1, "tree counts must be positive")
        need(0.0 < self.tournament_ratio <= 100.0, "tournament ratio must lie in (0, 100]")
        need(self.selection in ("pareto", "tournament"), "selection must be 'pareto' or 'tournament'")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")

    def offspring_counts(self) -> tuple[int, int, int]:
        """(elites, crossover children, mutation children) per generation."""
        m = self.population_size
        n_elite = min(m, math.ceil(self.elitism_rate * m - 1e-9))
        n_mut = min(m - n_elite, math.floor(self.mutation_rate * m + 1e-9))
        return n_elite, m - n_elite - n_mut, n_mut

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EvoConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


# ---------------------------------------------------------------------------
# fitness

def tree_digest(t: ProgramTree) -> int:
    return int.from_bytes(hashlib.sha256(canonical_key(t).encode()).digest()[:8], "little")


def _fold_seed(seed: int, fold: int, digest: int) -> int:
    ss = np.random.SeedSequence([seed, fold, digest & 0xFFFFFFFF, digest >> 32])
    return int(ss.generate_state(1, np.uint64)[0])


def fitness_from_features(F: np.ndarray, y: np.ndarray, plan: FoldPlan, fitness_trees: int,
                          seed: int, digest: int, n_classes: int) -> FitnessVector:
    accs = []
    for j, (train, val) in enumerate(plan.folds):
        model = fit_extra_trees(F[train], y[train], fitness_trees, _fold_seed(seed, j, digest), n_classes)
        accs.append(np.mean(model.predict(F[val]) == y[val]))
    return FitnessVector.of(accs)


def fitness(t: ProgramTree, d: Dataset, plan: FoldPlan, fitness_trees: int = 10, seed: int = 0) -> FitnessVector:
    """Per-fold validation accuracy of extra-trees on the features of ``t``.

    The dataset is transformed once and the rows are sliced per fold, which
    is equivalent to transforming each partition since every series is
    mapped independently.
    """
    F = transform_dataset(t, d)
    return fitness_from_features(F, d.y, plan, fitness_trees, seed, tree_digest(t), d.n_classes)


def _safe_fitness(t, X, y, plan, fitness_trees, seed, n_classes):
    try:
        F = transform_dataset(t, X)
        if not np.all(np.isfinite(F)):
            raise ArithmeticError("non-finite features")
        return fitness_from_features(F, y, plan, fitness_trees, seed, tree_digest(t), n_classes), None
    except (TSGPError, ArithmeticError, ValueError) as exc:
        return FitnessVector.zeros(plan.k), f"{type(exc).__name__}: {exc}"


# worker-process state for parallel evaluation
_WORKER: dict = {}


def _worker_init(X, y, plan, fitness_trees, seed, n_classes):
    _WORKER.update(X=X, y=y, plan=plan, fitness_trees=fitness_trees, seed=seed, n_classes=n_classes)


def _worker_eval(t):
    w = _WORKER
    return _safe_fitness(t, w["X"], w["y"], w["plan"], w["fitness_trees"], w["seed"], w["n_classes"])


# ---------------------------------------------------------------------------
# selection

def dominates(a, b) -> bool:
    """``a`` is no worse than ``b`` on every objective and better on one."""
    pa = a.per_fold if isinstance(a, FitnessVector) else a
    pb = b.per_fold if isinstance(b, FitnessVector) else b
    strictly = False
    for x, z in zip(pa, pb):
        if x < z:
            return False
        if x > z:
            strictly = True
    return strictly


def non_dominated(indices, pop_fitness) -> list[int]:
    """Members of ``indices`` not dominated by another member, in input order."""
    F = np.array([_objectives(pop_fitness[i]) for i in indices])
    # row i is dominated if some j is >= everywhere and > somewhere
    ge = np.all(F[:, None, :] >= F[None, :, :], axis=2)
    gt = np.any(F[:, None, :] > F[None, :, :], axis=2)
    dominated = np.any(ge & gt, axis=0)
    return [i for i, dom in zip(indices, dominated) if not dom]


def _objectives(f):
    return f.per_fold if isinstance(f, FitnessVector) else tuple(f)


def tournament_size(mu: float, n: int) -> int:
    return max(1, min(n, math.ceil(mu * n / 100 - 1e-9)))


def pareto_tournament_select(pop_fitness, mu: float, n_parents: int, rng, trace: list | None = None) -> list[int]:
    """Fill a parent pool with the non-dominated members of random tournaments.

    Each tournament samples ``ceil(mu% * |P|)`` distinct individuals and
    appends all of its non-dominated members. When ``trace`` is a list, each
    tournament's ``(sample, selected)`` pair is appended to it.
    """
    n = len(pop_fitness)
    n_t = tournament_size(mu, n)
    pool: list[int] = []
    while len(pool) < n_parents:
        sample = [int(i) for i in rng.choice(n, size=n_t, replace=False)]
        chosen = non_dominated(sample, pop_fitness)
        if trace is not None:
            trace.append((sample, chosen))
        pool.extend(chosen)
    return pool[:n_parents]


def scalar_tournament_select(pop_fitness, mu: float, n_parents: int, rng) -> list[int]:
    """Classic tournament on mean fitness; one winner per tournament."""
    n = len(pop_fitness)
    n_t = tournament_size(mu, n)
    pool = []
    for _ in range(n_parents):
        sample = rng.choice(n, size=n_t, replace=False)
        pool.append(int(min(sample, key=lambda i: (-pop_fitness[i].mean, i))))
    return pool


# ---------------------------------------------------------------------------
# variation

def _is_valid(t: ProgramTree, depth_min: int, depth_max: int) -> bool:
    return validate_tree(t, depth_min, depth_max).ok


def crossover(a: ProgramTree, b: ProgramTree, rng, depth_max: int = DEPTH_MAX,
              depth_min: int = DEPTH_MIN) -> ProgramTree:
    """Swap a same-typed subtree of ``b`` into ``a`` (one child)."""
    nodes_a = [(p, n) for p, n in iter_nodes(a.root) if p]
    # the input leaf has no alternative of its type, so swapping it is a no-op
    funcs = [(p, n) for p, n in nodes_a if not n.is_terminal and n.op != "InputSeries"]
    terms = [(p, n) for p, n in nodes_a if n.is_terminal]
    nodes_b = [n for p, n in iter_nodes(b.root) if p]
    for _ in range(MAX_RETRIES):
        group = funcs if (rng.random() < 0.9 and funcs) or not terms else terms
        path, target = group[int(rng.integers(len(group)))]
        if target.is_terminal:
            donors = [n for n in nodes_b if n.op == target.op and n != target]
        else:
            donors = [n for n in nodes_b if not n.is_terminal and n.type_tag == target.type_tag and n != target]
        if not donors:
            continue
        donor = donors[int(rng.integers(len(donors)))]
        if not target.is_terminal and donor.op not in slot_context(a, path).slot:
            continue
        child = ProgramTree(replace_at(a.root, path, donor), a.series_length)
        if _is_valid(child, depth_min, depth_max):
            return child
    return ProgramTree(a.root, a.series_length)


def _resample_terminal(t: ProgramTree, path: tuple, rng):
    node = node_at(t.root, path)
    parent_path = path[:-1]
    parent = node_at(t.root, parent_path)
    L = t.series_length
    g = grammar_for(L)
    op = node.op
    if op in ("TermTau", "TermLambda"):
        options = [r for r in RATIOS if r != node.value]
        return term(op, options[int(rng.integers(len(options)))])
    if op == "TermDivisor":
        n = infer(parent.children[0], L).length
        req = slot_context(t, parent_path).req
        options = [d for d in g.feasible_divisors(n, req) if d != node.value] or list(DIVISORS)
        return term(op, options[int(rng.integers(len(options)))])
    req = max(slot_context(t, parent_path).req, 1)
    seg_len, seg_start = parent.children[1].value, parent.children[2].value
    if op == "TermLenSeg":
        seg_len = int(rng.integers(req, L))
        seg_start = min(seg_start, L - seg_len + 1)
    else:
        seg_start = g.sample_start(rng, seg_len)
    # both terminals are rewritten so the joint constraint holds
    return Node(parent.op, (parent.children[0], term("TermLenSeg", seg_len), term("TermStartSeg", seg_start)))


def mutate(t: ProgramTree, rng, depth_max: int = DEPTH_MAX, depth_min: int = DEPTH_MIN) -> ProgramTree:
    """Subtree replacement or terminal perturbation, chosen with equal odds."""
    L = t.series_length
    g = grammar_for(L)
    nodes = list(iter_nodes(t.root))
    funcs = [p for p, n in nodes if not n.is_terminal]
    terms = [p for p, n in nodes if n.is_terminal]
    for _ in range(MAX_RETRIES):
        if rng.random() < 0.5 or not terms:
            path = funcs[int(rng.integers(len(funcs)))]
            ctx = slot_context(t, path)
            try:
                new = g.generate(rng, ctx.slot, ctx.req, depth_max - ctx.depth, "grow")
            except InfeasibleDepth:
                continue
            root = replace_at(t.root, path, new)
        else:
            path = terms[int(rng.integers(len(terms)))]
            new = _resample_terminal(t, path, rng)
            if new.op == "SegDect":
                root = replace_at(t.root, path[:-1], new)
            else:
                root = replace_at(t.root, path, new)
        child = ProgramTree(root, L)
        if _is_valid(child, depth_min, depth_max):
            return child
    return ProgramTree(t.root, L)


# ---------------------------------------------------------------------------
# evolutionary loop

@dataclass
class Individual:
    tree: ProgramTree
    key: str
    fitness: FitnessVector | None = None
    order: int = 0  # global insertion counter, used for tie-breaking

    @property
    def size(self) -> int:
        return self.tree.size

    def rank_key(self):
        return (-self.fitness.mean, self.size, self.order)


@dataclass
class EvolvedModel:
    tree: ProgramTree
    classifier: ExtraTreesModel
    fitness: FitnessVector
    history: list
    config: EvoConfig
    label_values: tuple
    failed_evaluations: int = 0
    best_generation: int = 0
    meta: dict = field(default_factory=dict)

    def features(self, X) -> np.ndarray:
        X = np.asarray(X.X if isinstance(X, Dataset) else X, dtype=np.float64)
        if self.config.znorm:
            X = znormalize(X)
        return transform_dataset(self.tree, X)

    def predict(self, X) -> np.ndarray:
        return self.classifier.predict(self.features(X))

    def to_document(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "series_length": self.tree.series_length,
            "tree": tree_to_dict(self.tree.root),
            "meta": {"created": TOOL_ID, "rendered": render_tree(self.tree), **self.meta},
            "label_values": list(self.label_values),
            "fitness": self.fitness.to_dict(),
            "best_generation": self.best_generation,
            "failed_evaluations": self.failed_evaluations,
            "config": self.config.to_dict(),
            "history": self.history,
            "classifier": self.classifier.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2) + "\n"

    @classmethod
    def from_document(cls, doc) -> "EvolvedModel":
        tree = tree_from_document(doc)
        try:
            return cls(
                tree=tree,
                classifier=ExtraTreesModel.from_dict(doc["classifier"]),
                fitness=FitnessVector.of(doc["fitness"]["per_fold"]),
                history=list(doc.get("history", [])),
                config=EvoConfig.from_dict(doc.get("config", {})),
                label_values=tuple(doc["label_values"]),
                failed_evaluations=int(doc.get("failed_evaluations", 0)),
                best_generation=int(doc.get("best_generation", 0)),
                meta={k: v for k, v in doc.get("meta", {}).items() if k not in ("created", "rendered")},
            )
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise MalformedModel(f"incomplete model document: {exc}") from None


def znormalize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=1, keepdims=True)
    sd = X.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in history:
        w.writerow([row[c] for c in LOG_COLUMNS])
    return buf.getvalue()


def initial_population(cfg: EvoConfig, L: int, rng) -> list[ProgramTree]:
    """Ramped half-and-half over ``depth_min..depth_max``."""
    depths = list(range(cfg.depth_min, cfg.depth_max + 1))
    out = []
    for i in range(cfg.population_size):
        depth = depths[(i // 2) % len(depths)]
        method = "grow" if i % 2 == 0 else "full"
        for _ in range(100):
            t = generate_tree(rng, method, depth, L)
            if t.depth >= cfg.depth_min:
                break
        else:
            t = generate_tree(rng, "full", depth, L)
        out.append(t)
    return out


class _Evaluator:
    def __init__(self, d: Dataset, plan: FoldPlan, cfg: EvoConfig, threads: int):
        self.X, self.y, self.plan, self.cfg = d.X, d.y, plan, cfg
        self.n_classes = d.n_classes
        self.cache: dict[str, FitnessVector] = {}
        self.failures = 0
        self.pool = None
        if threads > 1:
            self.pool = ProcessPoolExecutor(
                max_workers=threads,
                initializer=_worker_init,
                initargs=(self.X, self.y, plan, cfg.fitness_trees, cfg.seed, self.n_classes),
            )

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def evaluate(self, population: list[Individual]) -> int:
        """Assign fitness to every individual; returns the number of cache hits."""
        hits = 0
        todo: dict[str, ProgramTree] = {}
        for ind in population:
            if ind.key in self.cache:
                hits += 1
            elif ind.key not in todo:
                todo[ind.key] = ind.tree
        keys = list(todo)
        trees = [todo[k] for k in keys]
        if self.pool is not None and len(trees) > 1:
            results = list(self.pool.map(_worker_eval, trees, chunksize=max(1, len(trees) // 16)))
        else:
            results = [
                _safe_fitness(t, self.X, self.y, self.plan, self.cfg.fitness_trees, self.cfg.seed, self.n_classes)
                for t in trees
            ]
        for key, (fv, err) in zip(keys, results):
            if err is not None:
                self.failures += 1
                log.debug("evaluation failed: %s", err)
            self.cache[key] = fv
        for ind in population:
            ind.fitness = self.cache[ind.key]
        return hits


def evolve(d: Dataset, cfg: EvoConfig, threads: int = 1, progress=None, observer=None) -> EvolvedModel:
    """Run the generational loop and refit the best program of the run.

    ``progress`` receives each history row; ``observer`` receives the
    generation number and the evaluated population (a list of
    :class:`Individual`).
    """
    cfg.validate()
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    if d.series_length < 4:
        raise DataError(f"series length {d.series_length} < 4 admits no program")
    data = d.znormalized() if cfg.znorm else d
    L = data.series_length
    plan = stratified_kfold(data, cfg.folds, cfg.seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    n_elite, n_cx, n_mut = cfg.offspring_counts()
    counter = 0

    def make(tree):
        nonlocal counter
        counter += 1
        return Individual(tree, canonical_key(tree), order=counter)

    population = [make(t) for t in initial_population(cfg, L, rng)]
    evaluator = _Evaluator(data, plan, cfg, threads)
    history = []
    best: Individual | None = None
    best_gen = 0
    try:
        for gen in range(cfg.generations + 1):
            hits = evaluator.evaluate(population)
            ranked = sorted(population, key=Individual.rank_key)
            leader = ranked[0]
            if best is None or leader.rank_key()[:2] < best.rank_key()[:2]:
                best, best_gen = leader, gen
            history.append({
                "generation": gen,
                "best_mean_fitness": leader.fitness.mean,
                "mean_mean_fitness": math.fsum(i.fitness.mean for i in population) / len(population),
                "best_tree_size": leader.size,
                "evaluations_cached": hits,
            })
            if progress is not None:
                progress(history[-1])
            if observer is not None:
                observer(gen, list(population))
            if gen == cfg.generations:
                break

            fits = [i.fitness for i in population]
            n_parents = 2 * n_cx + n_mut
            if cfg.selection == "pareto":
                parents = pareto_tournament_select(fits, cfg.tournament_ratio, n_parents, rng)
            else:
                parents = scalar_tournament_select(fits, cfg.tournament_ratio, n_parents, rng)
            offspring = [make(ind.tree) for ind in ranked[:n_elite]]
            for i in range(n_cx):
                a, b = population[parents[2 * i]].tree, population[parents[2 * i + 1]].tree
                offspring.append(make(crossover(a, b, rng, cfg.depth_max, cfg.depth_min)))
            for i in range(n_mut):
                t = population[parents[2 * n_cx + i]].tree
                offspring.append(make(mutate(t, rng, cfg.depth_max, cfg.depth_min)))
            population = offspring
    finally:
        evaluator.close()

    F = transform_dataset(best.tree, data)
    final_seed = _fold_seed(cfg.seed, -1 & 0xFFFFFFFF, tree_digest(best.tree))
    clf = fit_extra_trees(F, data.y, cfg.final_trees, final_seed, data.n_classes)
    return EvolvedModel(
        tree=best.tree,
        classifier=clf,
        fitness=best.fitness,
        history=history,
        config=cfg,
        label_values=tuple(d.label_values),
        failed_evaluations=evaluator.failures,
        best_generation=best_gen,
        meta={"seed": cfg.seed, "dataset": d.name},
    )


def default_threads() -> int:
    return os.cpu_count() or 1
