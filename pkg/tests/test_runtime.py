import multiprocessing
import unittest

from fogpipe.exceptions      import PhaseError
from fogpipe.nsga            import GaParams
from fogpipe.runtime         import ManagerParams, manager_run, worker_run
from fogpipe.runtime.manager import parse_endpoint
from tests.helpers           import graph, instance

HOST = "127.0.0.1"


class WorkerPool(object):
    """Worker processes on free localhost ports."""

    def __init__(self, device_ids, physical=True):
        self.queue     = multiprocessing.Queue()
        self.processes = list()
        self.endpoints = list()
        for device_id in device_ids:
            process = multiprocessing.Process(
                target = worker_run,
                kwargs = dict(host=HOST, port=0, device_id=device_id, physical=physical,
                              ready_queue=self.queue),
                daemon = True,
            )
            process.start()
            self.processes.append(process)
            # each worker reports its port before the next one starts
            self.endpoints.append("{}:{}".format(HOST, self.queue.get(timeout=10)))

    def close(self):
        for process in self.processes:
            process.join(timeout=5)
            if process.is_alive():
                process.terminate()
                process.join()


def params(**kwargs):
    defaults = dict(
        b_mu         = 1,
        microbatches = 20,
        timeout_s    = 10.0,
        profile_reps = 5,
        ga_params    = GaParams(population_size=4, generations=2),
    )
    defaults.update(kwargs)
    return ManagerParams(**defaults)


class TestHarness(unittest.TestCase):

    def test_single_worker_throughput(self):
        workload = instance(graph(1), {0: [0.05]})
        pool     = WorkerPool([0])
        try:
            report = manager_run(pool.endpoints, workload, params())
        finally:
            pool.close()

        self.assertEqual(report.batches_received, 20)
        self.assertAlmostEqual(report.predicted_samples_per_s, 20.0, delta=20.0 * 0.2)
        self.assertAlmostEqual(report.measured_samples_per_s, 20.0, delta=20.0 * 0.35)
        for process in pool.processes:
            self.assertFalse(process.is_alive())

    def test_profiling_matches_emulated_costs(self):
        costs    = [0.02, 0.03, 0.04]
        workload = instance(graph(3, {(0, 1), (1, 2)}), {0: costs})
        pool     = WorkerPool([0])
        try:
            report = manager_run(pool.endpoints, workload, params(microbatches=4))
        finally:
            pool.close()

        for layer, cost in enumerate(costs):
            self.assertAlmostEqual(report.measured_profiles.get(layer, 0), cost, delta=cost * 0.2)

    def test_two_stage_pipeline_conserves_batches(self):
        chain    = graph(2, {(0, 1)}, outputs=[1e5, 1e5])
        workload = instance(chain, {0: [0.03, 0.03], 1: [0.03, 0.03]})
        pool     = WorkerPool([0, 1])
        try:
            report = manager_run(pool.endpoints, workload, params(b_mu=2, profile_reps=2))
        finally:
            pool.close()

        self.assertEqual(len(report.schedule.stages), 2)
        self.assertEqual(report.batches_sent, report.batches_received)
        self.assertEqual(sorted(report.worker_metrics), [0, 1])
        for metrics in report.worker_metrics.values():
            self.assertEqual(metrics.batches, 20)

    def test_three_workers_six_layers(self):
        costs    = [0.02, 0.08, 0.05, 0.03, 0.07, 0.04]
        chain    = graph(6, {(i, i + 1) for i in range(5)}, outputs=[1e5] * 6)
        workload = instance(chain, {d: costs for d in (0, 1, 2)})
        pool     = WorkerPool([0, 1, 2])
        try:
            report = manager_run(pool.endpoints, workload, params(profile_reps=2))
        finally:
            pool.close()

        self.assertEqual(sorted(report.worker_metrics), sorted(report.schedule.devices))
        self.assertEqual(report.batches_sent, report.batches_received)
        self.assertEqual(report.batches_received, 20)
        predicted = report.predicted_samples_per_s
        self.assertAlmostEqual(report.measured_samples_per_s, predicted, delta=predicted * 0.35)

    def test_logical_transfer(self):
        chain    = graph(2, {(0, 1)}, outputs=[1e6, 1e6])
        workload = instance(chain, {0: [0.01, 0.01], 1: [0.01, 0.01]})
        pool     = WorkerPool([0, 1], physical=False)
        try:
            report = manager_run(pool.endpoints, workload, params(physical=False, microbatches=8, profile_reps=1))
        finally:
            pool.close()

        self.assertEqual(report.batches_received, 8)
        self.assertEqual(report.to_dict()["batches_sent"], 8)

    def test_no_workers(self):
        workload = instance(graph(1), {0: [0.05]})
        with self.assertRaisesRegex(PhaseError, "no devices registered"):
            manager_run([], workload, params())

    def test_unreachable_worker(self):
        workload = instance(graph(1), {0: [0.05]})
        with self.assertRaises(PhaseError) as context:
            manager_run(["{}:1".format(HOST)], workload, params(timeout_s=1.0))
        self.assertEqual(context.exception.phase, "registration")

    def test_parse_endpoint(self):
        self.assertEqual(parse_endpoint("10.0.0.2:9000"), ("10.0.0.2", 9000))
        with self.assertRaises(ValueError):
            parse_endpoint("localhost")


if __name__ == '__main__':
    unittest.main()
