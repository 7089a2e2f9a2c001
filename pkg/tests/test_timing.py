import os
import tempfile
import unittest

from fogpipe.exceptions import ScheduleError
from fogpipe.timing     import (Schedule, Stage, evaluate_schedule, evaluation_frame, load_balance_sigma,
                                load_schedule, save_schedule, stage_comm_time, stage_compute_time)
from fogpipe.workload   import LayerNode, ProfileMatrix
from tests.helpers      import MB, device, three_layer_example


class TestStageCosts(unittest.TestCase):

    def setUp(self):
        self.profiles = ProfileMatrix({(1, 0): 0.2, (2, 0): 0.3, (3, 0): 0.25})

    def test_compute_sum(self):
        self.assertAlmostEqual(stage_compute_time([1, 2], 0, self.profiles), 0.5)

    def test_compute_empty_stage(self):
        self.assertEqual(stage_compute_time([], 0, self.profiles), 0.0)

    def test_compute_missing_profile(self):
        with self.assertRaises(ScheduleError):
            stage_compute_time([1], 9, self.profiles)

    def test_comm_of_cut_tensor(self):
        layer = LayerNode(0, "cut", output_bytes=3.6 * MB)
        self.assertAlmostEqual(stage_comm_time(layer, 16, device(0, 200 * MB), device(1, 200 * MB)), 0.288)

    def test_comm_same_device(self):
        layer = LayerNode(0, "cut", output_bytes=3.6 * MB)
        d     = device(0)
        self.assertEqual(stage_comm_time(layer, 16, d, d), 0.0)

    def test_comm_zero_bytes(self):
        self.assertEqual(stage_comm_time(LayerNode(0, "cut"), 16, device(0), device(1)), 0.0)

    def test_comm_pipeline_entry(self):
        self.assertEqual(stage_comm_time(None, 16, None, device(1)), 0.0)


class TestLoadBalance(unittest.TestCase):

    def test_two_values(self):
        self.assertAlmostEqual(load_balance_sigma([0.5, 0.25]), 0.125)

    def test_all_equal(self):
        self.assertEqual(load_balance_sigma([0.3, 0.3, 0.3]), 0.0)

    def test_single(self):
        self.assertEqual(load_balance_sigma([0.7]), 0.0)

    def test_empty(self):
        with self.assertRaises(ScheduleError):
            load_balance_sigma([])


class TestEvaluateSchedule(unittest.TestCase):

    def setUp(self):
        self.workload, self.cluster = three_layer_example()
        self.order    = (0, 1, 2)
        self.schedule = Schedule((Stage(0, 1, 0), Stage(2, 2, 1)), micro_batch=10)

    def test_two_stage_example(self):
        evaluation = evaluate_schedule(self.workload, self.order, self.schedule, self.cluster)
        self.assertEqual([t.t_exec for t in evaluation.per_stage], [0.5, 0.25])
        self.assertAlmostEqual(evaluation.per_stage[1].t_comm, 0.1)
        self.assertEqual(evaluation.t_overall, 0.5)
        self.assertAlmostEqual(evaluation.sigma, 0.125)
        self.assertAlmostEqual(evaluation.throughput_microbatches_per_s, 2.0)
        self.assertAlmostEqual(evaluation.throughput_samples_per_s, 20.0)
        self.assertEqual(evaluation.devices_used, 2)

    def test_single_stage(self):
        schedule   = Schedule((Stage(0, 2, 0),), micro_batch=10)
        evaluation = evaluate_schedule(self.workload, self.order, schedule, self.cluster)
        self.assertEqual(evaluation.per_stage[0].t_comm, 0.0)
        self.assertAlmostEqual(evaluation.t_overall, 1.5)
        self.assertEqual(evaluation.sigma, 0.0)

    def test_rejects_gap_between_stages(self):
        schedule = Schedule((Stage(0, 0, 0), Stage(2, 2, 1)))
        with self.assertRaisesRegex(ScheduleError, "contiguous"):
            evaluate_schedule(self.workload, self.order, schedule, self.cluster)

    def test_rejects_partial_cover(self):
        schedule = Schedule((Stage(0, 1, 0),))
        with self.assertRaisesRegex(ScheduleError, "cover"):
            evaluate_schedule(self.workload, self.order, schedule, self.cluster)

    def test_rejects_repeated_device(self):
        schedule = Schedule((Stage(0, 0, 0), Stage(1, 2, 0)))
        with self.assertRaisesRegex(ScheduleError, "more than one stage"):
            evaluate_schedule(self.workload, self.order, schedule, self.cluster)

    def test_rejects_non_topological_order(self):
        with self.assertRaises(ScheduleError):
            evaluate_schedule(self.workload, (1, 0, 2), self.schedule, self.cluster)

    def test_rejects_sequence_violation(self):
        with self.assertRaisesRegex(ScheduleError, "pipeline sequence"):
            evaluate_schedule(self.workload, self.order, self.schedule, self.cluster, sequence=(1, 0))

    def test_evaluation_frame(self):
        evaluation = evaluate_schedule(self.workload, self.order, self.schedule, self.cluster)
        frame      = evaluation_frame(evaluation)
        self.assertEqual(len(frame), 3)


class TestScheduleFile(unittest.TestCase):

    def test_save_and_load(self):
        order    = (2, 0, 1)
        schedule = Schedule((Stage(0, 1, 3), Stage(2, 2, 1)), micro_batch=16)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "schedule.json")
            save_schedule(order, schedule, 0.75, path)
            self.assertEqual(load_schedule(path), (order, schedule, 0.75))


if __name__ == '__main__':
    unittest.main()
