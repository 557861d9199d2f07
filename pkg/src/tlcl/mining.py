"""Genetic mining of temporal-logic constraints from demonstrations.

A population of parametric formula skeletons is evolved against a
dataset of expert traces (which the constraint must strictly accept)
and negative traces (which it should reject).  Each skeleton's
thresholds are fitted by dual annealing over a padded data-driven box;
the annealer climbs a smoothed sigmoid surrogate because the exact
fitness is piecewise constant, but every reported fitness is the exact
set-separation value.  Selection is elitist with a node-count
regularizer, so simpler separating formulas win ties.

Randomness is reproducible: each individual's annealing stream is
derived from (seed, generation, slot), so per-individual fitting could
run concurrently without changing results.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from itertools import product as iproduct

import numpy as np
from scipy.optimize import dual_annealing
from scipy.special import expit

from . import formulas as fm
from .formulas import (
    Always,
    Ap,
    BINARY_OPS,
    Formula,
    Param,
    UNARY_OPS,
    canonical_key,
    collect_aps,
    depth,
    format_formula,
    instantiate,
    is_temporally_consistent,
    iter_nodes,
    node_count,
    replace_at,
    robustness_profile,
    simplify,
    subtree_at,
)


@dataclass(frozen=True)
class Dataset:
    """Expert and negative traces plus padded per-dim threshold bounds."""

    experts: tuple[np.ndarray, ...]
    negatives: tuple[np.ndarray, ...]
    bounds: np.ndarray  # (k, 2) padded [lo, hi] per dimension

    @staticmethod
    def build(experts, negatives) -> "Dataset":
        experts = tuple(np.asarray(t, dtype=float) for t in experts)
        negatives = tuple(np.asarray(t, dtype=float) for t in negatives)
        if not experts:
            raise ValueError("expert set must be non-empty")
        k = experts[0].shape[1]
        for t in (*experts, *negatives):
            if t.ndim != 2 or t.shape[1] != k:
                raise ValueError("all traces must share the same dimensionality")
        stacked = np.concatenate([*experts, *negatives], axis=0)
        lo = stacked.min(axis=0)
        hi = stacked.max(axis=0)
        # pad by 10% of the observed range; keep a non-degenerate box
        rng_ = np.maximum(hi - lo, 1e-6)
        bounds = np.stack([lo - 0.1 * rng_, hi + 0.1 * rng_], axis=1)
        return Dataset(experts, negatives, bounds)

    @property
    def k(self) -> int:
        return self.experts[0].shape[1]

    def _groups(self, traces) -> list[np.ndarray]:
        by_len: dict[int, list[np.ndarray]] = {}
        for t in traces:
            by_len.setdefault(t.shape[0], []).append(t)
        return [np.stack(g) for g in by_len.values()]


@dataclass
class Individual:
    skeleton: Formula
    theta: dict[str, float] | None = None
    fitness: float | None = None
    reg_fitness: float | None = None
    node_count: int = 0

    def __post_init__(self):
        self.node_count = node_count(self.skeleton)

    @property
    def formula(self) -> Formula:
        if self.theta is None:
            return self.skeleton
        return instantiate(self.skeleton, self.theta)


@dataclass
class MiningConfig:
    population: int = 64
    n_basis: int = 48      # basis trees kept after subsampling
    n_random: int = 16     # randomly grown trees
    n_parents: int = 16
    tournament: int = 3
    zeta: float = 0.01
    d_r: int = 3
    p_r: float = 0.1
    max_generations: int = 30
    max_mining_steps: int = 5
    seed: int = 0
    annealing_budget: int = 300
    selected_dims: tuple[int, ...] | None = None  # None: separability heuristic
    max_dims: int = 6

    def __post_init__(self):
        if self.population != self.n_basis + self.n_random:
            raise ValueError("population must equal n_basis + n_random")
        if self.n_parents > self.population:
            raise ValueError("n_parents cannot exceed population")
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")


# ---------------------------------------------------------------------------
# Tree construction


def basis_trees(k: int, selected_dims) -> list[Formula]:
    """All depth-2 parametric trees over the selected dimensions: three
    unary temporal forms per parametric AP plus until/release over every
    ordered AP pair."""
    dims = sorted(set(int(d) for d in selected_dims))
    if not dims:
        raise ValueError("selected_dims must be non-empty")
    if any(d < 0 or d >= k for d in dims):
        raise ValueError("selected_dims out of range")
    paps = [fm.Atom(Ap(d, s, Param("p0"))) for d in dims for s in (+1, -1)]
    out: list[Formula] = [op(ap) for ap in paps for op in UNARY_OPS]
    second = [fm.Atom(Ap(a.ap.dim, a.ap.sign, Param("p1"))) for a in paps]
    for op in (fm.Until, fm.Release):
        for a, b in iproduct(paps, second):
            out.append(op(a, b))
    return out


def uniquify_params(f: Formula) -> Formula:
    """Give every parametric atom occurrence its own parameter name.

    Crossover can merge trees whose parameters share names, which would
    silently tie thresholds together."""
    counter = [0]

    def walk(g: Formula) -> Formula:
        if isinstance(g, (fm.Atom, fm.NegAtom)):
            ap = g.ap
            if isinstance(ap.threshold, Param):
                name = f"p{counter[0]}"
                counter[0] += 1
                return type(g)(Ap(ap.dim, ap.sign, Param(name)))
            return g
        kids = [walk(c) for c in fm.children(g)]
        return fm.rebuild(g, kids)

    return walk(f)


def _dims_of(basis: list[Formula]) -> list[int]:
    dims = set()
    for f in basis:
        dims.update(ap.dim for ap in collect_aps(f))
    return sorted(dims)


def _fresh_pap(dims, rng: np.random.Generator, name: str) -> Formula:
    d = int(rng.choice(dims))
    s = int(rng.choice([-1, 1]))
    return fm.Atom(Ap(d, s, Param(name)))


def _inject(f: Formula, dims, rng: np.random.Generator) -> Formula:
    """Insert a random operator as parent of a uniformly random node;
    binary operators pair the node with a fresh parametric AP."""
    paths = [p for p, _ in iter_nodes(f)]
    path = paths[int(rng.integers(len(paths)))]
    node = subtree_at(f, path)
    ops = UNARY_OPS + BINARY_OPS
    op = ops[int(rng.integers(len(ops)))]
    if op in UNARY_OPS:
        new = op(node)
    else:
        fresh = _fresh_pap(dims, rng, "pn")
        new = op(node, fresh) if rng.random() < 0.5 else op(fresh, node)
    return replace_at(f, path, new)


def random_tree(basis: list[Formula], d_r: int, p_r: float,
                rng: np.random.Generator) -> Formula:
    """Grow a tree from a random basis element by repeated operator
    injection; stops early with probability p_r per round or once depth
    exceeds d_r (so one overshoot past d_r is possible)."""
    if not basis:
        raise ValueError("basis must be non-empty")
    dims = _dims_of(basis)
    for _ in range(64):
        tree = basis[int(rng.integers(len(basis)))]
        while True:
            if rng.random() < p_r:
                break
            tree = _inject(tree, dims, rng)
            if depth(tree) > d_r:
                break
        tree = simplify(tree)
        # reject instead of repairing: a wrap would break the depth bound
        if is_temporally_consistent(tree):
            return uniquify_params(tree)
    return uniquify_params(basis[int(rng.integers(len(basis)))])


# ---------------------------------------------------------------------------
# Fitness


def _rhos(g: Formula, data: Dataset, traces) -> np.ndarray:
    out = []
    for group in data._groups(traces):
        out.append(robustness_profile(g, group)[:, 0])
    return np.concatenate(out) if out else np.empty(0)


def fitness(f: Formula, theta, data: Dataset) -> float:
    """Fraction of negatives rejected, annihilated unless every expert
    is strictly accepted.  Empty negative set scores 0."""
    g = instantiate(f, theta) if theta else f
    aps = collect_aps(g)
    if aps and max(ap.dim for ap in aps) >= data.k:
        raise ValueError("formula references dimensions beyond the dataset")
    rho_e = _rhos(g, data, data.experts)
    if not np.all(rho_e > 0):
        return 0.0
    if not data.negatives:
        return 0.0
    rho_n = _rhos(g, data, data.negatives)
    return float(np.mean(rho_n < 0))


def optimize_params(skeleton: Formula, data: Dataset, budget: int,
                    seed: int = 0) -> tuple[dict[str, float], float]:
    """Fit thresholds by dual annealing on a sigmoid-smoothed surrogate;
    returns the best exact-fitness parameters seen."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    names = fm.collect_params(skeleton)
    if not names:
        return {}, fitness(skeleton, {}, data)

    dim_of = {}
    for ap in collect_aps(skeleton):
        if isinstance(ap.threshold, Param):
            dim_of[ap.threshold.name] = ap.dim
    bounds = [tuple(data.bounds[dim_of[n]]) for n in names]
    tau = 0.05 * float(np.mean(data.bounds[:, 1] - data.bounds[:, 0]))

    best = {"theta": None, "exact": -1.0, "sur": -np.inf}

    def objective(x: np.ndarray) -> float:
        theta = dict(zip(names, (float(v) for v in x)))
        g = instantiate(skeleton, theta)
        rho_e = _rhos(g, data, data.experts)
        rho_n = _rhos(g, data, data.negatives)
        sur_e = float(np.min(expit(rho_e / tau))) if rho_e.size else 0.0
        sur_n = float(np.mean(expit(-rho_n / tau))) if rho_n.size else 0.0
        sur = sur_e * sur_n
        exact = 0.0
        if rho_n.size and np.all(rho_e > 0):
            exact = float(np.mean(rho_n < 0))
        if exact > best["exact"] or (exact == best["exact"] and sur > best["sur"]):
            best.update(theta=theta, exact=exact, sur=sur)
        return -sur

    dual_annealing(
        objective,
        bounds=bounds,
        maxfun=budget,
        seed=np.random.default_rng(seed),
    )
    return best["theta"], best["exact"]


def regularized_fitness(population: list[Individual], zeta: float) -> list[Individual]:
    """Penalize node count scaled by the population's mean raw fitness."""
    if not population:
        raise ValueError("empty population")
    mean_f = float(np.mean([ind.fitness for ind in population]))
    for ind in population:
        ind.reg_fitness = ind.fitness - zeta * mean_f * (ind.node_count - 2) ** 2
    return population


def _rank_key(pop_index: dict, ind: Individual):
    # higher reg fitness, then fewer nodes, then earlier creation
    return (-ind.reg_fitness, ind.node_count, pop_index[id(ind)])


def _best_key(pop_index: dict, ind: Individual):
    # The mined constraint must separate, so exact fitness outranks the
    # complexity penalty; regularization only breaks ties among equals.
    return (-ind.fitness, -ind.reg_fitness, ind.node_count, pop_index[id(ind)])


def select_parents(population: list[Individual], n_parents: int,
                   tournament: int, rng: np.random.Generator) -> list[Individual]:
    """Top-n parent pool by regularized fitness (ties: fewer nodes, then
    insertion order); tournament draws happen against this pool."""
    if n_parents > len(population):
        raise ValueError("n_parents exceeds population")
    index = {id(ind): i for i, ind in enumerate(population)}
    ranked = sorted(population, key=lambda ind: _rank_key(index, ind))
    return ranked[:n_parents]


def _tourney(pool: list[Individual], tournament: int,
             rng: np.random.Generator) -> Individual:
    picks = [pool[int(rng.integers(len(pool)))] for _ in range(tournament)]
    index = {id(ind): i for i, ind in enumerate(pool)}
    return min(picks, key=lambda ind: _rank_key(index, ind))


# ---------------------------------------------------------------------------
# Variation operators


def crossover(fi: Formula, fj: Formula,
              rng: np.random.Generator) -> tuple[Formula, Formula]:
    """Swap uniformly random subtrees between the two parents."""
    paths_i = [p for p, _ in iter_nodes(fi)]
    paths_j = [p for p, _ in iter_nodes(fj)]
    pi = paths_i[int(rng.integers(len(paths_i)))]
    pj = paths_j[int(rng.integers(len(paths_j)))]
    si, sj = subtree_at(fi, pi), subtree_at(fj, pj)
    ci = simplify(replace_at(fi, pi, sj))
    cj = simplify(replace_at(fj, pj, si))
    return uniquify_params(ci), uniquify_params(cj)


def mutation_r(f: Formula, rng: np.random.Generator, dims=None) -> Formula:
    """Replace a random node with one of the same kind class, or delete
    a random branch (binary parents collapse to the sibling, unary
    ancestors above a deleted branch vanish with it)."""
    dims = dims or sorted({ap.dim for ap in collect_aps(f)}) or [0]
    nodes = list(iter_nodes(f))
    if len(nodes) > 1 and rng.random() < 0.5:
        # delete branch: drop a non-root subtree
        for path, _ in _shuffled(nodes[1:], rng):
            parent_path, g = path[:-1], None
            parent = subtree_at(f, parent_path)
            if isinstance(parent, BINARY_OPS):
                sibling = fm.children(parent)[1 - path[-1]]
                return uniquify_params(simplify(replace_at(f, parent_path, sibling)))
            # unary parent: deleting the child leaves nothing below the
            # operator, so the whole unary chain above goes too
            p = parent_path
            while p and isinstance(subtree_at(f, p[:-1]), UNARY_OPS):
                p = p[:-1]
            if not p:
                continue  # chain reaches the root: deletion would empty the tree
            grand_path = p[:-1]
            grand = subtree_at(f, grand_path)
            if isinstance(grand, BINARY_OPS):
                sibling = fm.children(grand)[1 - p[-1]]
                return uniquify_params(simplify(replace_at(f, grand_path, sibling)))
        # no deletable branch: fall through to replacement
    path, node = nodes[int(rng.integers(len(nodes)))]
    if isinstance(node, (fm.Atom, fm.NegAtom)):
        new = _fresh_pap(dims, rng, "pm")
    elif isinstance(node, UNARY_OPS):
        op = UNARY_OPS[int(rng.integers(len(UNARY_OPS)))]
        new = op(fm.children(node)[0])
    elif isinstance(node, BINARY_OPS):
        op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
        new = op(*fm.children(node))
    else:  # Top/Bottom: swap the truth constant
        new = fm.Bottom() if isinstance(node, fm.Top) else fm.Top()
    return uniquify_params(simplify(replace_at(f, path, new)))


def _shuffled(items, rng: np.random.Generator):
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def mutation_a(f: Formula, rng: np.random.Generator, dims=None) -> Formula:
    """Insert a random operator above a random node; binary insertions
    pair the node with a fresh parametric AP.  Grows the tree by exactly
    one node (unary) or two (binary)."""
    dims = dims or sorted({ap.dim for ap in collect_aps(f)}) or [0]
    return uniquify_params(_inject(f, dims, rng))


def _repair(f: Formula) -> Formula | None:
    """Wrap the first atom lacking a temporal ancestor; one attempt."""
    for path, node in iter_nodes(f):
        if isinstance(node, (fm.Atom, fm.NegAtom)):
            ancestors = [subtree_at(f, path[:i]) for i in range(len(path))]
            if not any(isinstance(a, fm.TEMPORAL_OPS) for a in ancestors):
                candidate = replace_at(f, path, Always(node))
                return candidate if is_temporally_consistent(candidate) else None
    return None


# ---------------------------------------------------------------------------
# Mining loop


def _select_dims(data: Dataset, max_dims: int) -> tuple[int, ...]:
    """Rank dimensions by the best single-threshold rule fitness each
    could support and keep the strongest.

    Temporal atoms bind trace extremes: an always on one dimension
    constrains the per-trace minimum or maximum, an eventually requires
    the extreme to cross the threshold.  For each dimension the score is
    the largest fraction of negatives rejectable by one such rule while
    keeping every expert strictly accepted, which is exactly the fitness
    ceiling of a one-atom basis formula on that dimension."""
    e_min = np.stack([t.min(axis=0) for t in data.experts])
    e_max = np.stack([t.max(axis=0) for t in data.experts])
    negs = data.negatives or data.experts
    n_min = np.stack([t.min(axis=0) for t in negs])
    n_max = np.stack([t.max(axis=0) for t in negs])
    # (always s>θ, eventually s<θ) pivot on minima; duals on maxima
    score = np.maximum.reduce([
        np.mean(n_min < e_min.min(axis=0), axis=0),   # G(s > θ)
        np.mean(n_min > e_min.max(axis=0), axis=0),   # F(s < θ)
        np.mean(n_max > e_max.max(axis=0), axis=0),   # G(s < θ)
        np.mean(n_max < e_max.min(axis=0), axis=0),   # F(s > θ)
    ])
    order = np.argsort(-score, kind="stable")
    keep = order[: min(max_dims, data.k)]
    return tuple(sorted(int(d) for d in keep))


def _seed_for(seed: int, generation: int, slot: int) -> int:
    return int(np.random.SeedSequence((seed, generation, slot)).generate_state(1)[0])


def initial_population(basis: list[Formula], cfg: MiningConfig, priors,
                       rng: np.random.Generator) -> list[Individual]:
    """Generation zero: subsampled basis, then priors, then random trees,
    deduplicated by canonical form throughout."""
    if len(basis) > cfg.n_basis:
        idx = rng.choice(len(basis), size=cfg.n_basis, replace=False)
        chosen = [basis[i] for i in sorted(idx)]
    else:
        chosen = list(basis)

    population: list[Individual] = []
    keys: set[str] = set()

    def admit(skel: Formula) -> bool:
        key = canonical_key(skel)
        if key in keys:
            return False
        keys.add(key)
        population.append(Individual(uniquify_params(skel)))
        return True

    for skel in chosen:
        admit(skel)
    n_random = cfg.population - len(population)
    for phi in priors[:n_random]:
        admit(phi)
    attempts = 0
    while len(population) < cfg.population and attempts < 200 * cfg.population:
        admit(random_tree(basis, cfg.d_r, cfg.p_r, rng))
        attempts += 1
    return population


def mine(data: Dataset, cfg: MiningConfig, priors=(), log_path=None) -> Individual:
    """Evolve a constraint for the dataset; returns the best individual
    (exact fitness first, regularization breaking ties toward simpler
    trees), stopping early on perfect separation."""
    dims = cfg.selected_dims or _select_dims(data, cfg.max_dims)
    basis = basis_trees(data.k, dims)
    rng = np.random.default_rng(_seed_for(cfg.seed, 0, 1 << 20))
    population = initial_population(basis, cfg, priors, rng)

    log_fh = open(log_path, "w") if log_path else None
    best: Individual | None = None
    try:
        for gen in range(cfg.max_generations):
            t0 = time.monotonic()
            for slot, ind in enumerate(population):
                if ind.fitness is not None and ind.fitness == 1.0:
                    continue
                # survivors get a fresh annealing restart each generation
                # and keep whichever parameters scored better
                theta, f = optimize_params(
                    ind.skeleton, data, cfg.annealing_budget,
                    seed=_seed_for(cfg.seed, gen, slot),
                )
                if ind.fitness is None or f > ind.fitness:
                    ind.theta, ind.fitness = theta, f
            regularized_fitness(population, cfg.zeta)
            index = {id(ind): i for i, ind in enumerate(population)}
            best = min(population, key=lambda ind: _best_key(index, ind))
            if log_fh:
                log_fh.write(json.dumps({
                    "generation": gen,
                    "best": format_formula(best.formula),
                    "fitness": best.fitness,
                    "reg_fitness": best.reg_fitness,
                    "nodes": best.node_count,
                    "wall_time": time.monotonic() - t0,
                }) + "\n")
                log_fh.flush()
            if best.fitness == 1.0 or gen == cfg.max_generations - 1:
                break

            gen_rng = np.random.default_rng(_seed_for(cfg.seed, gen, (1 << 20) + 1))
            pool = select_parents(population, min(cfg.n_parents, len(population)),
                                  cfg.tournament, gen_rng)
            next_pop = [best]
            next_keys = {canonical_key(best.skeleton)}
            stale = 0
            while len(next_pop) < cfg.population and stale < 200 * cfg.population:
                choice = int(gen_rng.integers(3))
                if choice == 0:
                    a = _tourney(pool, cfg.tournament, gen_rng)
                    b = _tourney(pool, cfg.tournament, gen_rng)
                    children = list(crossover(a.skeleton, b.skeleton, gen_rng))
                elif choice == 1:
                    children = [mutation_r(
                        _tourney(pool, cfg.tournament, gen_rng).skeleton,
                        gen_rng, dims)]
                else:
                    children = [mutation_a(
                        _tourney(pool, cfg.tournament, gen_rng).skeleton,
                        gen_rng, dims)]
                for child in children:
                    if len(next_pop) == cfg.population:
                        break
                    if not is_temporally_consistent(child):
                        child = _repair(child)
                        if child is None:
                            stale += 1
                            continue
                    key = canonical_key(child)
                    if key in next_keys:
                        stale += 1
                        continue
                    next_keys.add(key)
                    next_pop.append(Individual(child))
            while len(next_pop) < cfg.population:
                tree = random_tree(basis, cfg.d_r, cfg.p_r, gen_rng)
                key = canonical_key(tree)
                if key not in next_keys:
                    next_keys.add(key)
                    next_pop.append(Individual(tree))
            population = next_pop
    finally:
        if log_fh:
            log_fh.close()
    return best
