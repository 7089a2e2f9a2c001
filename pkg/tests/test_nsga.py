import math
import unittest

import numpy as np

from fogpipe.cluster    import ClusterSpec
from fogpipe.exceptions import ScheduleError
from fogpipe.nsga       import (GaParams, Individual, crowding_distance, dag_crossover, dominates,
                                fast_nondominated_sort, order_crossover, pmx_crossover, run_ga_dphds,
                                select_final, swap_mutation, tournament_select)
from fogpipe.partition  import best_over_device_orders, dp_partition
from fogpipe.workload   import (canonical_topo_order, gen_multigran_dag, gen_random_dag, is_topological,
                                random_topo_order)
from tests.helpers      import MB, cluster, device, graph, instance


def scored(*fitnesses):
    return [Individual((i,), fitness=f) for i, f in enumerate(fitnesses)]


def lab_cluster():
    return cluster(device(0, 400 * MB), device(1, 150 * MB), device(2, 250 * MB), device(3, 300 * MB))


class TestNondominatedSort(unittest.TestCase):

    def test_dominates(self):
        self.assertTrue(dominates((1, 1), (2, 2)))
        self.assertTrue(dominates((1, 2), (1, 3)))
        self.assertFalse(dominates((1, 1), (1, 1)))
        self.assertFalse(dominates((1, 3), (3, 1)))

    def test_strict_domination(self):
        a, b   = scored((1, 1), (2, 2))
        fronts = fast_nondominated_sort([a, b])
        self.assertEqual(fronts, [[a], [b]])
        self.assertEqual((a.rank, b.rank), (0, 1))

    def test_incomparable(self):
        population = scored((1, 3), (3, 1))
        self.assertEqual(fast_nondominated_sort(population), [population])

    def test_equal_fitness(self):
        population = scored((1, 1), (1, 1))
        self.assertEqual(fast_nondominated_sort(population), [population])

    def test_every_individual_in_one_front(self):
        rng        = np.random.default_rng(0)
        population = scored(*(tuple(rng.integers(0, 5, size=2)) for _ in range(30)))
        fronts     = fast_nondominated_sort(population)
        members    = [ind for front in fronts for ind in front]
        self.assertEqual(sorted(id(i) for i in members), sorted(id(i) for i in population))
        for k, front in enumerate(fronts):
            for ind in front:
                self.assertEqual(ind.rank, k)
                for other in front:
                    self.assertFalse(dominates(other.fitness, ind.fitness))


class TestCrowdingDistance(unittest.TestCase):

    def test_three_point_front(self):
        self.assertEqual(crowding_distance(scored((1, 3), (2, 2), (3, 1))), [math.inf, 2.0, math.inf])

    def test_two_points(self):
        self.assertEqual(crowding_distance(scored((1, 3), (3, 1))), [math.inf, math.inf])

    def test_single_point(self):
        front = scored((1, 1))
        self.assertEqual(crowding_distance(front), [math.inf])
        self.assertEqual(front[0].crowding, math.inf)

    def test_flat_objective_contributes_nothing(self):
        distances = crowding_distance(scored((1, 5), (2, 5), (4, 5)))
        self.assertAlmostEqual(distances[1], (4 - 1) / (4 - 1))


class TestTournament(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_lower_rank_wins(self):
        a, b = scored((1, 1), (2, 2))
        a.rank, b.rank = 1, 0
        self.assertIs(tournament_select([a, b], self.rng), b)

    def test_larger_crowding_wins(self):
        a, b = scored((1, 1), (2, 2))
        a.rank = b.rank = 0
        a.crowding, b.crowding = 2.0, math.inf
        self.assertIs(tournament_select([a, b], self.rng), b)

    def test_full_tie_prefers_earlier_index(self):
        a, b = scored((1, 1), (1, 1))
        a.rank = b.rank = 0
        a.crowding = b.crowding = 1.0
        self.assertIs(tournament_select([a, b], self.rng), a)


class TestOperators(unittest.TestCase):

    def test_order_crossover(self):
        self.assertEqual(order_crossover([0, 1, 2, 3], [3, 2, 1, 0], 1, 2), [3, 1, 2, 0])

    def test_pmx_is_permutation(self):
        child = pmx_crossover([0, 1, 2, 3, 4], [4, 3, 2, 1, 0], 1, 3)
        self.assertEqual(child[1:4], [1, 2, 3])
        self.assertEqual(sorted(child), [0, 1, 2, 3, 4])

    def test_crossover_identical_parents(self):
        model  = graph(5, {(0, 2), (1, 3)})
        parent = Individual((1, 0, 3, 2, 4))
        for seed in range(10):
            c1, c2 = dag_crossover(parent, parent, model, np.random.default_rng(seed))
            self.assertEqual((c1.order, c2.order), (parent.order, parent.order))

    def test_crossover_on_chain(self):
        chain = graph(4, {(0, 1), (1, 2), (2, 3)})
        p     = Individual((0, 1, 2, 3))
        for seed in range(10):
            c1, c2 = dag_crossover(p, p.child((0, 1, 2, 3)), chain, np.random.default_rng(seed))
            self.assertEqual(c1.order, (0, 1, 2, 3))
            self.assertEqual(c2.order, (0, 1, 2, 3))

    def test_crossover_offspring_are_topological(self):
        workload = gen_random_dag(cluster(device(0)), n_layers=12, edge_density=0.25, seed=9)
        model    = workload.graph
        rng      = np.random.default_rng(1)
        for _ in range(50):
            p1 = Individual(random_topo_order(model, rng))
            p2 = Individual(random_topo_order(model, rng))
            for child in dag_crossover(p1, p2, model, rng):
                self.assertTrue(is_topological(model, child.order))

    def test_crossover_mixes_device_genes(self):
        model  = graph(3)
        p1     = Individual((0, 1, 2), (0, 1, 2, 3))
        p2     = Individual((2, 1, 0), (3, 2, 1, 0))
        c1, c2 = dag_crossover(p1, p2, model, np.random.default_rng(4))
        self.assertEqual(sorted(c1.device_sequence), [0, 1, 2, 3])
        self.assertEqual(sorted(c2.device_sequence), [0, 1, 2, 3])

    def test_mutation_on_chain(self):
        chain = graph(4, {(0, 1), (1, 2), (2, 3)})
        ind   = Individual((0, 1, 2, 3))
        for seed in range(10):
            self.assertIs(swap_mutation(ind, chain, 1.0, np.random.default_rng(seed)), ind)

    def test_mutation_swaps_independent_pair(self):
        ind    = Individual((0, 1))
        mutant = swap_mutation(ind, graph(2), 1.0, np.random.default_rng(0))
        self.assertEqual(mutant.order, (1, 0))
        self.assertIsNone(mutant.fitness)

    def test_mutation_probability_zero(self):
        ind = Individual((0, 1, 2))
        self.assertIs(swap_mutation(ind, graph(3), 0.0, np.random.default_rng(0)), ind)

    def test_mutation_keeps_order_topological(self):
        workload = gen_multigran_dag(cluster(device(0)), 2, 2, 2, seed=2)
        model    = workload.graph
        ind      = Individual(canonical_topo_order(model))
        rng      = np.random.default_rng(5)
        for _ in range(100):
            ind = swap_mutation(ind, model, 1.0, rng)
            self.assertTrue(is_topological(model, ind.order))


class TestSelectFinal(unittest.TestCase):

    def test_t_overall_first(self):
        front = scored((2.0, 0.1), (2.5, 0.0))
        self.assertIs(select_final(front), front[0])

    def test_sigma_breaks_tie(self):
        front = scored((2.0, 0.1), (2.0, 0.0))
        self.assertIs(select_final(front), front[1])

    def test_singleton(self):
        front = scored((3.0, 1.0))
        self.assertIs(select_final(front), front[0])

    def test_empty_front(self):
        with self.assertRaises(ScheduleError):
            select_final([])


class TestGaParams(unittest.TestCase):

    def test_rejects_odd_population(self):
        with self.assertRaises(ValueError):
            GaParams(population_size=5)

    def test_rejects_probability_out_of_range(self):
        with self.assertRaises(ValueError):
            GaParams(mutation_prob=1.5)

    def test_rejects_unknown_mode(self):
        with self.assertRaises(ValueError):
            GaParams(device_order_mode="sideways")

    def test_auto_mode(self):
        self.assertEqual(GaParams().resolve_mode(lab_cluster()), "exhaustive")
        seven = cluster(*(device(i) for i in range(7)))
        self.assertEqual(GaParams().resolve_mode(seven), "gene")


class TestRunGa(unittest.TestCase):

    def setUp(self):
        self.cluster  = lab_cluster()
        self.workload = gen_multigran_dag(self.cluster, 2, 2, 2, seed=11)
        self.params   = GaParams(population_size=8, generations=6, rng_seed=3,
                                 device_order_mode="fixed", debug_checks=True)

    def test_never_worse_than_canonical_order(self):
        canonical = canonical_topo_order(self.workload.graph)
        _, t_max  = dp_partition(self.workload, canonical, self.cluster.pipeline_sequence, 16, self.cluster)
        result    = run_ga_dphds(self.workload, self.cluster, 16, self.params)
        self.assertLessEqual(result.evaluation.t_overall, t_max)
        self.assertTrue(is_topological(self.workload.graph, result.order))

    def test_exhaustive_mode_beats_fixed_canonical(self):
        params    = GaParams(population_size=6, generations=3, rng_seed=1, device_order_mode="exhaustive")
        canonical = canonical_topo_order(self.workload.graph)
        _, _, t_max = best_over_device_orders(self.workload, canonical, self.cluster, 16)
        result    = run_ga_dphds(self.workload, self.cluster, 16, params)
        self.assertLessEqual(result.evaluation.t_overall, t_max)

    def test_gene_mode_carries_device_sequence(self):
        params = GaParams(population_size=6, generations=3, rng_seed=1, device_order_mode="gene")
        result = run_ga_dphds(self.workload, self.cluster, 16, params)
        self.assertEqual(sorted(result.best.device_sequence), sorted(self.cluster.device_ids))
        self.assertTrue(result.schedule.follows(result.best.used_sequence))

    def test_gene_mode_with_partial_pipeline_sequence(self):
        trio     = ClusterSpec(lab_cluster().devices[:3], pipeline_sequence=(2, 0))
        workload = gen_multigran_dag(trio, 2, 2, 1, seed=5)
        for seed in range(20):
            params = GaParams(population_size=8, generations=10, rng_seed=seed, device_order_mode="gene")
            result = run_ga_dphds(workload, trio, 16, params)
            for ind in result.pareto_front:
                self.assertEqual(sorted(ind.device_sequence), [0, 1, 2])

    def test_history_is_elitist(self):
        result = run_ga_dphds(self.workload, self.cluster, 16, self.params)
        best   = list(result.history["best_t_overall"])
        self.assertEqual(len(best), self.params.generations + 1)
        self.assertEqual(best, sorted(best, reverse=True))
        self.assertEqual(best[-1], result.evaluation.t_overall)

    def test_deterministic(self):
        first  = run_ga_dphds(self.workload, self.cluster, 16, self.params)
        second = run_ga_dphds(self.workload, self.cluster, 16, self.params)
        self.assertEqual(first.best.fitness, second.best.fitness)
        self.assertEqual(first.order, second.order)
        self.assertEqual(
            sorted(ind.fitness for ind in first.pareto_front),
            sorted(ind.fitness for ind in second.pareto_front),
        )

    def test_zero_generations(self):
        params = GaParams(population_size=6, generations=0, rng_seed=2, device_order_mode="fixed")
        result = run_ga_dphds(self.workload, self.cluster, 16, params)
        self.assertEqual(len(result.history), 1)
        self.assertEqual(result.history["best_t_overall"][0], result.evaluation.t_overall)

    def test_chain_has_single_order(self):
        chain    = graph(4, {(0, 1), (1, 2), (2, 3)}, outputs=[MB] * 4)
        workload = instance(chain, {d: [0.1, 0.2, 0.3, 0.4] for d in range(4)})
        result   = run_ga_dphds(workload, self.cluster, 1, self.params)
        _, t_max = dp_partition(workload, (0, 1, 2, 3), self.cluster.pipeline_sequence, 1, self.cluster)
        self.assertEqual(result.order, (0, 1, 2, 3))
        self.assertEqual(result.evaluation.t_overall, t_max)

    def test_pareto_frame(self):
        result = run_ga_dphds(self.workload, self.cluster, 16, self.params)
        frame  = result.pareto_frame()
        self.assertEqual(list(frame.columns), ["t_overall", "sigma", "order"])
        self.assertEqual(len(frame), len(result.pareto_front))


if __name__ == '__main__':
    unittest.main()
