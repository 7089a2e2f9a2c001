import contextlib
import io
import json
import os
import tempfile
import unittest

import pandas as pd

from fogpipe.__main__ import main
from fogpipe.timing   import Schedule, Stage, save_schedule
from fogpipe.workload import load_workload, save_workload
from tests.helpers    import MB, graph, instance


def run(*argv):
    """Run the command line with stdout and stderr captured."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.cluster = self.write_json("pair.json", {
            "name"   : "pair",
            "devices": [
                {"id": 0, "name": "A", "mem_gb": 8, "bandwidth_gbps": 3.2},
                {"id": 1, "name": "B", "mem_gb": 8, "bandwidth_gbps": 1.6},
            ],
        })

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def write_json(self, name, data):
        with open(self.path(name), "w") as outfile:
            json.dump(data, outfile)
        return self.path(name)

    def gen_random(self, name="random.json", cluster=None, layers=6):
        code, _, _ = run("gen", "random", "--layers", str(layers), "--cluster", cluster or self.cluster,
                         "--seed", "2", "--out", self.path(name))
        self.assertEqual(code, 0)
        return self.path(name)

    def ga_args(self):
        return ["--population", "4", "--generations", "2", "--jobs", "1"]


class TestGen(CliTestCase):

    def test_multigran_defaults(self):
        code, out, _ = run("gen", "multigran", "--out", self.path("mg.json"))
        self.assertEqual(code, 0)
        self.assertIn("23 layers", out)
        workload = load_workload(self.path("mg.json"))
        self.assertEqual(len(workload.graph), 23)
        self.assertEqual(workload.device_ids, [0, 1, 2, 3, 4, 5])

    def test_random_single_layer(self):
        workload = load_workload(self.gen_random(layers=1))
        self.assertEqual(len(workload.graph), 1)
        self.assertEqual(workload.device_ids, [0, 1])

    def test_missing_out_is_usage_error(self):
        with self.assertRaises(SystemExit) as context:
            run("gen", "random")
        self.assertEqual(context.exception.code, 2)


class TestSchedule(CliTestCase):

    def test_same_seed_gives_identical_files(self):
        workload = self.gen_random()
        outputs  = list()
        for name in ("first.json", "second.json"):
            code, out, _ = run("schedule", "--workload", workload, "--cluster", self.cluster,
                               "--seed", "7", "--out", self.path(name), *self.ga_args())
            self.assertEqual(code, 0)
            self.assertIn("t_overall", out)
            with open(self.path(name), "rb") as infile:
                outputs.append(infile.read())
        self.assertEqual(outputs[0], outputs[1])

    def test_side_outputs(self):
        workload = self.gen_random()
        code, _, _ = run("schedule", "--workload", workload, "--cluster", self.cluster,
                         "--out", self.path("s.json"), "--log", self.path("log.csv"),
                         "--pareto", self.path("pareto.csv"), "--csv", self.path("stages.csv"),
                         *self.ga_args())
        self.assertEqual(code, 0)
        self.assertEqual(len(pd.read_csv(self.path("log.csv"))), 3)
        self.assertIn("sigma", pd.read_csv(self.path("pareto.csv")).columns)
        self.assertIn("t_exec", pd.read_csv(self.path("stages.csv")).columns)

    def test_chain_on_one_device(self):
        solo = self.write_json("solo.json", {"devices": [{"id": 0, "mem_gb": 8, "bandwidth_gbps": 1}]})
        workload = self.gen_random(cluster=solo)
        code, _, _ = run("schedule", "--workload", workload, "--cluster", solo,
                         "--out", self.path("s.json"), *self.ga_args())
        self.assertEqual(code, 0)
        with open(self.path("s.json")) as infile:
            self.assertEqual(len(json.load(infile)["stages"]), 1)

    def test_infeasible_exit_code(self):
        tiny = self.write_json("tiny.json", {"devices": [
            {"id": 0, "mem_gb": 1e-6, "bandwidth_gbps": 1},
            {"id": 1, "mem_gb": 1e-6, "bandwidth_gbps": 1},
        ]})
        workload = self.gen_random(cluster=tiny)
        code, _, err = run("schedule", "--workload", workload, "--cluster", tiny,
                           "--out", self.path("s.json"), *self.ga_args())
        self.assertEqual(code, 3)
        self.assertIn("infeasible", err)

    def test_missing_workload_is_io_error(self):
        code, _, _ = run("schedule", "--workload", self.path("absent.json"), "--cluster", self.cluster,
                         "--out", self.path("s.json"), *self.ga_args())
        self.assertEqual(code, 4)


class TestSimulateAndBench(CliTestCase):

    def test_simulate_without_jitter_matches_analytic(self):
        workload = self.gen_random()
        run("schedule", "--workload", workload, "--cluster", self.cluster, "--out", self.path("s.json"),
            *self.ga_args())
        code, _, _ = run("simulate", "--workload", workload, "--cluster", self.cluster,
                         "--schedule", self.path("s.json"), "--jitter", "0", "0",
                         "--out", self.path("sim.csv"), "--trace", self.path("trace.csv"))
        self.assertEqual(code, 0)
        row = pd.read_csv(self.path("sim.csv")).iloc[0]
        self.assertAlmostEqual(row["steady_interval_s"], row["t_overall_s"], delta=1e-9)
        self.assertEqual(list(pd.read_csv(self.path("trace.csv")).columns), ["resource", "batch", "start_s", "end_s"])

    def test_cluster_jitter_is_default(self):
        jittery = self.write_json("jittery.json", {
            "name"     : "jittery",
            "jitter_ms": [20, 20],
            "devices"  : [
                {"id": 0, "mem_gb": 8, "bandwidth_gbps": 0.8},
                {"id": 1, "mem_gb": 8, "bandwidth_gbps": 0.8},
            ],
        })
        workload = instance(graph(2, {(0, 1)}, outputs=[1 * MB, 1 * MB]), {0: [0.1, 0.1], 1: [0.1, 0.1]})
        save_workload(workload, self.path("chain.json"))
        save_schedule((0, 1), Schedule((Stage(0, 0, 0), Stage(1, 1, 1))), 0.1, self.path("split.json"))

        makespans = list()
        for extra in ([], ["--jitter", "0", "0"]):
            code, _, _ = run("simulate", "--workload", self.path("chain.json"), "--cluster", jittery,
                             "--schedule", self.path("split.json"), "--microbatches", "8",
                             "--out", self.path("sim.csv"), *extra)
            self.assertEqual(code, 0)
            makespans.append(pd.read_csv(self.path("sim.csv"))["makespan_s"].iloc[0])
        self.assertAlmostEqual(makespans[0] - makespans[1], 0.020, delta=1e-9)

    def test_bench_rows(self):
        workload = self.gen_random()
        code, _, _ = run("bench", "--workloads", workload, "--cluster", self.cluster, "--modes", "baseline",
                         "gadphds", "--reps", "3", "--microbatches", "4", "--out", self.path("bench.csv"),
                         *self.ga_args())
        self.assertEqual(code, 0)
        frame = pd.read_csv(self.path("bench.csv"))
        self.assertEqual(len(frame), 2 * (3 + 2))
        self.assertEqual(set(frame["cluster"]), {"pair"})

    def test_bench_single_device(self):
        workload = self.gen_random()
        code, _, _ = run("bench", "--workloads", workload, "--cluster", self.cluster, "--single-device",
                         "--out", self.path("single.csv"))
        self.assertEqual(code, 0)
        self.assertEqual(list(pd.read_csv(self.path("single.csv"))["name"]), ["A", "B"])


class TestBound(CliTestCase):

    def test_reference_gain(self):
        code, _, _ = run("bound", "--alpha", "3.24", "--beta", "1.33", "--delta", "0.01", "--mode", "paper-arith",
                         "--o-avg-mb", "1.11", "--b-good-mbps", "200", "--out", self.path("bound.json"))
        self.assertEqual(code, 0)
        with open(self.path("bound.json")) as infile:
            report = json.load(infile)
        self.assertAlmostEqual(report["gamma_lower"], 1.54, delta=0.01)
        self.assertEqual(report["mode"], "paper_arith")

    def test_from_workload(self):
        workload = self.gen_random()
        code, out, _ = run("bound", "--workload", workload, "--cluster", self.cluster, "--delta", "0")
        self.assertEqual(code, 0)
        self.assertIn("gamma_lower", out)

    def test_missing_ratios(self):
        code, _, _ = run("bound", "--alpha", "2.0")
        self.assertEqual(code, 2)


class TestConfigOption(CliTestCase):

    def test_unreadable_config(self):
        code, _, _ = run("--config", self.path("absent.ini"), "bound", "--alpha", "1", "--beta", "1")
        self.assertEqual(code, 4)


if __name__ == '__main__':
    unittest.main()
