import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses        import dataclass, field, replace
from typing             import Dict, List, Optional, Sequence, Tuple

import numpy  as np
import pandas as pd
from tqdm import tqdm

from fogpipe.cluster    import ClusterSpec
from fogpipe.exceptions import GraphError, InfeasibleError, ScheduleError
from fogpipe.logger     import get_logger
from fogpipe.partition  import best_over_device_orders, dp_partition
from fogpipe.timing     import ExecutionOrder, Schedule, ScheduleEvaluation, evaluate_schedule
from fogpipe.workload   import (ModelGraph, WorkloadInstance, canonical_topo_order, is_topological,
                                priority_topo_order, random_topo_order, validate_graph)

logger = get_logger("nsga")

DEVICE_ORDER_MODES = ("fixed", "gene", "exhaustive")

# Largest cluster for which the automatic mode scans every device order
AUTO_EXHAUSTIVE_DEVICES = 6

# Sampled pairs before a swap mutation gives up
MUTATION_ATTEMPTS = 16

INFEASIBLE = (math.inf, math.inf)


########################################################################
#                             Domain types                             #
########################################################################

@dataclass(frozen=True)
class GaParams:
    """Parameters of the order search.

        Parameters
        ----------
        population_size : int, default=40
            N_pop, even and >= 2.

        generations : int, default=60
            N_gen, number of generations after the initial population.

        crossover_prob : float, default=0.9
            P_c.

        mutation_prob : float, default=0.2
            P_m, applied per individual.

        rng_seed : int, default=0
            Master seed; every random stream is derived from it.

        device_order_mode : string, optional
            ``fixed`` uses the cluster's pipeline sequence, ``exhaustive``
            scans every device order per individual, ``gene`` evolves the
            device order alongside the layer order. None picks exhaustive
            for up to 6 devices and gene otherwise.

        memory_check : boolean, default=True
            Prune stages exceeding device memory.

        debug_checks : boolean, default=False
            Verify every chromosome is topological each generation.
        """
    population_size  : int           = 40
    generations      : int           = 60
    crossover_prob   : float         = 0.9
    mutation_prob    : float         = 0.2
    rng_seed         : int           = 0
    device_order_mode: Optional[str] = None
    memory_check     : bool          = True
    debug_checks     : bool          = False

    def __post_init__(self):
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError(
                "population size must be even and >= 2, got {}".format(self.population_size)
            )
        if self.generations < 0:
            raise ValueError("generations must be >= 0, got {}".format(self.generations))
        for name in ("crossover_prob", "mutation_prob"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError("{} must be in [0, 1], got {}".format(name, value))
        if self.device_order_mode not in DEVICE_ORDER_MODES + (None, "auto"):
            raise ValueError("unknown device order mode '{}'".format(self.device_order_mode))

    def resolve_mode(self, cluster: ClusterSpec) -> str:
        if self.device_order_mode in (None, "auto"):
            return "exhaustive" if len(cluster.devices) <= AUTO_EXHAUSTIVE_DEVICES else "gene"
        return self.device_order_mode


@dataclass
class Individual:
    """One chromosome of the search and its decoded schedule."""
    order          : ExecutionOrder
    device_sequence: Optional[Tuple[int, ...]]    = None
    fitness        : Optional[Tuple[float, float]] = None
    rank           : Optional[int]                = None
    crowding       : float                        = 0.0
    schedule       : Optional[Schedule]           = None
    evaluation     : Optional[ScheduleEvaluation] = None
    used_sequence  : Optional[Tuple[int, ...]]    = None

    @property
    def chromosome(self):
        return self.order, self.device_sequence

    @property
    def t_overall(self) -> float:
        return self.fitness[0]

    @property
    def sigma(self) -> float:
        return self.fitness[1]

    def child(self, order, device_sequence=None) -> "Individual":
        """Unevaluated offspring carrying a new chromosome."""
        return Individual(tuple(order), None if device_sequence is None else tuple(device_sequence))


@dataclass
class GaResult:
    pareto_front: List[Individual]
    best        : Individual
    history     : pd.DataFrame = field(repr=False)

    @property
    def order(self) -> ExecutionOrder:
        return self.best.order

    @property
    def schedule(self) -> Schedule:
        return self.best.schedule

    @property
    def evaluation(self) -> ScheduleEvaluation:
        return self.best.evaluation

    def pareto_frame(self) -> pd.DataFrame:
        rows = sorted(
            (ind.t_overall, ind.sigma, " ".join(map(str, ind.order)))
            for ind in self.pareto_front
        )
        return pd.DataFrame(rows, columns=["t_overall", "sigma", "order"])


########################################################################
#                          NSGA-II machinery                           #
########################################################################

def dominates(a: Tuple[float, float], b: Tuple[float, float]) -> bool:
    """a is no worse than b in both objectives and better in one."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def fast_nondominated_sort(population: Sequence[Individual]) -> List[List[Individual]]:
    """Partition ``population`` into successive non-dominated fronts.

        Also stores each individual's front index in ``rank``.
        """
    n          = len(population)
    dominated  = [list() for _ in range(n)]
    counts     = [0] * n
    fronts     = [list()]

    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(population[p].fitness, population[q].fitness):
                dominated[p].append(q)
            elif dominates(population[q].fitness, population[p].fitness):
                counts[p] += 1
        if counts[p] == 0:
            population[p].rank = 0
            fronts[0].append(p)

    i = 0
    while fronts[i]:
        following = list()
        for p in fronts[i]:
            for q in dominated[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    population[q].rank = i + 1
                    following.append(q)
        i += 1
        fronts.append(following)
    fronts.pop()

    return [[population[p] for p in front] for front in fronts]


def crowding_distance(front: Sequence[Individual]) -> List[float]:
    """Normalised objective-space gap between each member's neighbours.

        Boundary members get ``inf``; an objective whose values are all equal
        contributes nothing. Also stores the result in ``crowding``.
        """
    size     = len(front)
    distance = [0.0] * size

    for m in range(2):
        ranked = sorted(range(size), key=lambda i: (front[i].fitness[m], i))
        distance[ranked[0]]  = math.inf
        distance[ranked[-1]] = math.inf

        low, high = front[ranked[0]].fitness[m], front[ranked[-1]].fitness[m]
        span      = high - low
        if span == 0 or not math.isfinite(span):
            continue
        for k in range(1, size - 1):
            above = front[ranked[k + 1]].fitness[m]
            below = front[ranked[k - 1]].fitness[m]
            distance[ranked[k]] += (above - below) / span

    for individual, value in zip(front, distance):
        individual.crowding = value
    return distance


def tournament_select(population: Sequence[Individual], rng: np.random.Generator) -> Individual:
    """Binary tournament on (rank, crowding), earlier index on full ties."""
    if len(population) == 1:
        return population[0]
    i, j = sorted(int(x) for x in rng.choice(len(population), size=2, replace=False))
    return population[_tournament_winner(population, i, j)]


def _tournament_winner(population, i, j) -> int:
    a, b = population[i], population[j]
    if a.rank != b.rank:
        return i if a.rank < b.rank else j
    if a.crowding != b.crowding:
        return i if a.crowding > b.crowding else j
    return min(i, j)


########################################################################
#                           Genetic operators                          #
########################################################################

def order_crossover(seq1: Sequence[int], seq2: Sequence[int], a: int, b: int) -> List[int]:
    """Keep ``seq1[a..b]`` in place and fill the rest in ``seq2``'s order."""
    segment = set(seq1[a:b + 1])
    filler  = iter(gene for gene in seq2 if gene not in segment)
    return [seq1[i] if a <= i <= b else next(filler) for i in range(len(seq1))]


def pmx_crossover(seq1: Sequence[int], seq2: Sequence[int], a: int, b: int) -> List[int]:
    """Partially mapped crossover of two permutations over ``[a, b]``."""
    n       = len(seq1)
    child   = [None] * n
    child[a:b + 1] = seq1[a:b + 1]
    segment = set(seq1[a:b + 1])

    for idx in range(a, b + 1):
        gene = seq2[idx]
        if gene in segment:
            continue
        pos = idx
        while a <= pos <= b:
            pos = seq2.index(seq1[pos])
        child[pos] = gene

    return [seq2[i] if gene is None else gene for i, gene in enumerate(child)]


def _segment(n: int, rng: np.random.Generator) -> Tuple[int, int]:
    a, b = (int(x) for x in rng.integers(n, size=2))
    return min(a, b), max(a, b)


def dag_crossover(p1: Individual, p2: Individual, graph: ModelGraph,
                  rng: np.random.Generator) -> Tuple[Individual, Individual]:
    """Order crossover followed by a topological repair.

        Each child keeps a random segment of one parent and takes the other
        layers in the other parent's relative order; the result is then
        re-sorted with Kahn's algorithm, preferring layers that come earlier
        in the unrepaired sequence.
        """
    a, b = _segment(len(p1.order), rng)
    o1   = priority_topo_order(graph, order_crossover(p1.order, p2.order, a, b))
    o2   = priority_topo_order(graph, order_crossover(p2.order, p1.order, a, b))

    s1 = s2 = None
    if p1.device_sequence is not None and p2.device_sequence is not None:
        a, b = _segment(len(p1.device_sequence), rng)
        s1   = pmx_crossover(p1.device_sequence, p2.device_sequence, a, b)
        s2   = pmx_crossover(p2.device_sequence, p1.device_sequence, a, b)

    return p1.child(o1, s1), p2.child(o2, s2)


def _swappable(graph: ModelGraph, order: Sequence[int], i: int, j: int) -> bool:
    """Swapping positions i < j keeps ``order`` topological."""
    u, v = order[i], order[j]
    if graph.reachable(u, v):
        return False
    descendants = graph.descendants
    return not any(
        w in descendants[u] or v in descendants[w] for w in order[i + 1:j]
    )


def swap_mutation(ind: Individual, graph: ModelGraph, mutation_prob: float,
                  rng: np.random.Generator) -> Individual:
    """Swap two mutually unreachable layers with probability ``mutation_prob``.

        Up to 16 position pairs are sampled; pairs whose swap would break the
        topological order are rejected. The device gene, if any, gets an
        unconstrained swap with the same probability.
        """
    order    = list(ind.order)
    sequence = None if ind.device_sequence is None else list(ind.device_sequence)
    changed  = False

    if len(order) >= 2 and rng.random() < mutation_prob:
        for _ in range(MUTATION_ATTEMPTS):
            i, j = sorted(int(x) for x in rng.choice(len(order), size=2, replace=False))
            if _swappable(graph, order, i, j):
                order[i], order[j] = order[j], order[i]
                changed = True
                break

    if sequence is not None and len(sequence) >= 2 and rng.random() < mutation_prob:
        i, j = (int(x) for x in rng.choice(len(sequence), size=2, replace=False))
        sequence[i], sequence[j] = sequence[j], sequence[i]
        changed = True

    if not changed:
        return ind
    return ind.child(order, sequence)


########################################################################
#                              Evaluation                              #
########################################################################

class ScheduleDecoder(object):
    """Decode a chromosome into its DP schedule and fitness."""

    def __init__(self, instance: WorkloadInstance, cluster: ClusterSpec, b_mu: int,
                 mode: str, memory_check: bool = True):
        self.instance     = instance
        self.cluster      = cluster
        self.b_mu         = b_mu
        self.mode         = mode
        self.memory_check = memory_check

    def __call__(self, chromosome):
        order, genes = chromosome
        try:
            if self.mode == "exhaustive":
                sequence, schedule, _ = best_over_device_orders(
                    self.instance, order, self.cluster, self.b_mu,
                    memory_check = self.memory_check,
                )
            else:
                sequence = genes if self.mode == "gene" else self.cluster.pipeline_sequence
                schedule, _ = dp_partition(
                    self.instance, order, sequence, self.b_mu, self.cluster,
                    memory_check = self.memory_check,
                )
        except InfeasibleError:
            return None, None, None

        evaluation = evaluate_schedule(self.instance, order, schedule, self.cluster)
        return schedule, evaluation, tuple(sequence)


_DECODER: Optional[ScheduleDecoder] = None


def _init_pool(decoder):
    global _DECODER
    _DECODER = decoder


def _decode_in_pool(chromosome):
    return _DECODER(chromosome)


class Evaluator(object):
    """Memoising, optionally process-parallel chromosome evaluation."""

    def __init__(self, decoder: ScheduleDecoder, jobs: int = 1):
        self.decoder = decoder
        self.cache   : Dict = dict()
        self.pool    = None
        if jobs > 1:
            self.pool = ProcessPoolExecutor(
                max_workers = jobs,
                initializer = _init_pool,
                initargs    = (decoder,),
            )

    def evaluate(self, individuals: Sequence[Individual]):
        pending = list(dict.fromkeys(
            ind.chromosome for ind in individuals if ind.chromosome not in self.cache
        ))
        if self.pool is None:
            results = map(self.decoder, pending)
        else:
            results = self.pool.map(_decode_in_pool, pending)
        self.cache.update(zip(pending, results))

        for ind in individuals:
            schedule, evaluation, sequence = self.cache[ind.chromosome]
            ind.schedule      = schedule
            ind.evaluation    = evaluation
            ind.used_sequence = sequence
            ind.fitness       = INFEASIBLE if evaluation is None else (evaluation.t_overall, evaluation.sigma)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


########################################################################
#                              Main loop                               #
########################################################################

def select_final(front: Sequence[Individual]) -> Individual:
    """Min t_overall, then min sigma, then lexicographically smallest order."""
    if not front:
        raise ScheduleError("cannot select from an empty Pareto front")
    return min(front, key=lambda ind: (ind.t_overall, ind.sigma, ind.order))


def _rank(population: Sequence[Individual]) -> List[List[Individual]]:
    fronts = fast_nondominated_sort(population)
    for front in fronts:
        crowding_distance(front)
    return fronts


def _truncate(merged: List[Individual], size: int) -> List[Individual]:
    """Keep ``size`` individuals by (rank, crowding); the incumbent always survives."""
    _rank(merged)
    incumbent = select_final(merged)
    ordered   = sorted(
        range(len(merged)),
        key = lambda i: (merged[i] is not incumbent, merged[i].rank, -merged[i].crowding, i),
    )
    return [merged[i] for i in ordered[:size]]


def run_ga_dphds(
        instance: WorkloadInstance,
        cluster : ClusterSpec,
        b_mu    : int,
        params  : GaParams = GaParams(),
        jobs    : int      = 1,
        progress: bool     = False,
    ) -> GaResult:
    """Search layer orders with NSGA-II, scheduling each one with the DP.

        Parameters
        ----------
        instance : WorkloadInstance
            Graph and profiles.

        cluster : ClusterSpec
            Devices, bandwidths and pipeline sequence.

        b_mu : int
            Micro-batch size.

        params : GaParams
            Search parameters.

        jobs : int, default=1
            Worker processes used to evaluate offspring.

        progress : boolean, default=False
            If True, show a progress bar over generations.

        Returns
        -------
        result : GaResult
            Final first front, best individual and per-generation history.
        """
    graph  = instance.graph
    report = validate_graph(graph)
    if not report.ok:
        raise GraphError("invalid graph: {}".format("; ".join(map(str, report.violations))))
    instance.check_cluster(cluster)

    mode      = params.resolve_mode(cluster)
    seed      = params.rng_seed
    canonical = canonical_topo_order(graph)
    devices   = sorted(cluster.device_ids)

    ########################################################################
    #                          Initial population                          #
    ########################################################################

    # device genes always permute every device, the pipeline sequence first
    head      = tuple(cluster.pipeline_sequence)
    seed_gene = head + tuple(d for d in devices if d not in head)

    population = [Individual(canonical, seed_gene if mode == "gene" else None)]
    for i in range(1, params.population_size):
        rng   = np.random.default_rng([seed, 0, i])
        order = random_topo_order(graph, rng)
        genes = tuple(int(d) for d in rng.permutation(devices)) if mode == "gene" else None
        population.append(Individual(order, genes))

    evaluator = Evaluator(ScheduleDecoder(instance, cluster, b_mu, mode, params.memory_check), jobs)
    history   = list()

    try:
        evaluator.evaluate(population)
        fronts = _rank(population)
        history.append(_history_row(0, population, fronts))

        ####################################################################
        #                             Generations                          #
        ####################################################################

        for generation in tqdm(range(1, params.generations + 1), desc="GA", disable=not progress):
            offspring = list()
            for pair in range(params.population_size // 2):
                rng    = np.random.default_rng([seed, generation, pair])
                p1, p2 = tournament_select(population, rng), tournament_select(population, rng)

                if rng.random() < params.crossover_prob:
                    c1, c2 = dag_crossover(p1, p2, graph, rng)
                else:
                    c1, c2 = replace(p1), replace(p2)

                offspring.append(swap_mutation(c1, graph, params.mutation_prob, rng))
                offspring.append(swap_mutation(c2, graph, params.mutation_prob, rng))

            # Copies may alias parents; evaluation only writes cached values
            offspring = [replace(child) for child in offspring]
            evaluator.evaluate(offspring)

            population = _truncate(population + offspring, params.population_size)
            fronts     = _rank(population)

            if params.debug_checks:
                bad = [ind.order for ind in population if not is_topological(graph, ind.order)]
                if bad:
                    raise GraphError("non-topological chromosome in generation {}: {}".format(generation, bad[0]))

            row = _history_row(generation, population, fronts)
            history.append(row)
            logger.debug(
                "Generation {gen}: best t_overall={best_t_overall:.6f}s sigma={best_sigma:.6f}s "
                "front0={front0_size}".format(**row)
            )
    finally:
        evaluator.close()

    best = select_final(fronts[0])
    if best.evaluation is None:
        raise InfeasibleError("no feasible schedule for any explored execution order")

    logger.info(
        "GA finished: t_overall={:.6f}s sigma={:.6f}s over {} devices ({} evaluations)"
        .format(best.t_overall, best.sigma, best.evaluation.devices_used, len(evaluator.cache))
    )

    return GaResult(
        pareto_front = list(fronts[0]),
        best         = best,
        history      = pd.DataFrame(history, columns=["gen", "best_t_overall", "best_sigma", "front0_size"]),
    )


def _history_row(generation, population, fronts):
    best = select_final(population)
    return {
        "gen"           : generation,
        "best_t_overall": best.t_overall,
        "best_sigma"    : best.sigma,
        "front0_size"   : len(fronts[0]),
    }
