# Imports
import argformat
import argparse
import json
import os
import sys

import pandas as pd
from importlib import resources

# fogpipe imports
from fogpipe.bench      import BENCH_MODES, bandwidth_sweep, bench_suite, single_device_table
from fogpipe.bounds     import (BoundInputs, bound_inputs_from, residual_imbalance,
                                throughput_gain_bound)
from fogpipe.cluster    import (MEMBERSHIPS_FIXTURE, fixture_path, load_cluster,
                                load_cluster_memberships, testbed_cluster)
from fogpipe.config     import load_config
from fogpipe.exceptions import FogpipeError
from fogpipe.logger     import get_logger
from fogpipe.nsga       import DEVICE_ORDER_MODES, GaParams, run_ga_dphds
from fogpipe.simulator  import simulate
from fogpipe.timing     import evaluate_schedule, evaluation_frame, load_schedule, save_schedule
from fogpipe.workload   import CostRanges, gen_multigran_dag, gen_random_dag, load_workload, save_workload

logger = get_logger("cli")

# Exit code for unreadable or unwritable files
EXIT_IO = 4


########################################################################
#                               Helpers                                #
########################################################################

def _cluster(args):
    return load_cluster(args.cluster) if args.cluster else testbed_cluster()


def _instance(args, cluster):
    return load_workload(args.workload).restrict(cluster)


def _ga_params(args, config):
    ga = config.ga
    mode = args.device_order or ga.device_order_mode
    return GaParams(
        population_size   = args.population     or ga.population,
        generations       = ga.generations      if args.generations    is None else args.generations,
        crossover_prob    = ga.crossover_prob   if args.crossover_prob is None else args.crossover_prob,
        mutation_prob     = ga.mutation_prob    if args.mutation_prob  is None else args.mutation_prob,
        rng_seed          = args.seed,
        device_order_mode = None if mode == "auto" else mode,
        memory_check      = config.pipeline.memory_check and not args.no_memory_check,
    )


def _jitter(values, cluster, default):
    """Jitter range from the flag, else the cluster file, else the INI default."""
    if values is None:
        values = cluster.jitter_ms if cluster.jitter_ms is not None else default
    lo, hi = values
    return None if lo == hi == 0 else (lo, hi)


def _jobs(args):
    return args.jobs or os.cpu_count() or 1


def _write_json(data, path):
    with open(path, "w") as outfile:
        json.dump(data, outfile, indent=2)
        outfile.write("\n")


########################################################################
#                             Subcommands                              #
########################################################################

def cmd_gen(args, config):
    cluster = _cluster(args)
    ranges  = CostRanges(proc_seconds=tuple(args.proc_range)) if args.proc_range else CostRanges()

    if args.kind == "multigran":
        instance = gen_multigran_dag(
            cluster,
            n_temporal_branches = args.temporal_branches,
            n_spatial_levels    = args.spatial_levels,
            n_st_blocks         = args.st_blocks,
            expand_st           = args.expand_st,
            cost_ranges         = ranges,
            seed                = args.seed,
        )
    else:
        instance = gen_random_dag(
            cluster,
            n_layers     = args.layers,
            edge_density = args.density,
            cost_ranges  = ranges,
            seed         = args.seed,
        )

    save_workload(instance, args.out)
    print("Wrote {} layers, {} edges to {}".format(
        len(instance.graph), len(instance.graph.edges), args.out))
    return 0


def cmd_schedule(args, config):
    cluster  = _cluster(args)
    instance = _instance(args, cluster)
    b_mu     = args.b_mu or config.pipeline.b_mu

    result = run_ga_dphds(instance, cluster, b_mu, _ga_params(args, config),
                          jobs=_jobs(args), progress=args.progress)
    evaluation = result.evaluation

    save_schedule(result.order, result.schedule, evaluation.t_overall, args.out)
    if args.log:
        result.history.to_csv(args.log, index=False)
    if args.pareto:
        result.pareto_frame().to_csv(args.pareto, index=False)
    if args.csv:
        evaluation_frame(evaluation).to_csv(args.csv, index=False)

    print("t_overall = {:.6f} s".format(evaluation.t_overall))
    print("sigma     = {:.6f} s".format(evaluation.sigma))
    print("predicted = {:.3f} samples/s on {} devices".format(
        evaluation.throughput_samples_per_s, evaluation.devices_used))
    return 0


def cmd_simulate(args, config):
    cluster  = _cluster(args)
    instance = _instance(args, cluster)
    order, schedule, _ = load_schedule(args.schedule)

    evaluation = evaluate_schedule(instance, order, schedule, cluster)
    report     = simulate(
        instance, order, schedule, cluster,
        n_microbatches = args.microbatches or config.pipeline.microbatches,
        jitter         = _jitter(args.jitter, cluster, config.pipeline.jitter_ms),
        seed           = args.seed,
        record_trace   = args.trace is not None,
    )

    if args.out:
        pd.DataFrame([{
            "t_overall_s"         : evaluation.t_overall,
            "steady_interval_s"   : report.steady_interval,
            "makespan_s"          : report.makespan,
            "throughput_samples_s": report.throughput_samples_per_s,
        }]).to_csv(args.out, index=False)
    if args.trace:
        pd.DataFrame(
            [(e.resource, e.batch, e.start, e.end) for e in report.trace],
            columns=["resource", "batch", "start_s", "end_s"],
        ).to_csv(args.trace, index=False)

    print("steady_interval = {:.6f} s (analytic t_overall {:.6f} s)".format(
        report.steady_interval, evaluation.t_overall))
    print("makespan        = {:.6f} s".format(report.makespan))
    print("throughput      = {:.3f} samples/s".format(report.throughput_samples_per_s))
    return 0


def cmd_bound(args, config):
    defaults = config.bound
    b_mu     = args.b_mu or defaults.b_mu
    delta    = defaults.delta_s if args.delta is None else args.delta

    if args.workload:
        cluster  = _cluster(args)
        instance = _instance(args, cluster)
        if args.schedule and args.delta is None:
            order, schedule, _ = load_schedule(args.schedule)
            delta = residual_imbalance(evaluate_schedule(instance, order, schedule, cluster))
        inputs = bound_inputs_from(instance, cluster, b_mu, delta)
    else:
        if args.alpha is None or args.beta is None:
            raise ValueError("give --alpha and --beta, or --workload to derive them")
        inputs = BoundInputs.from_ratios(
            alpha       = args.alpha,
            beta        = args.beta,
            delta_s     = delta,
            o_avg_bytes = (args.o_avg_mb    or defaults.o_avg_mb)    * 1e6,
            b_good_bps  = (args.b_good_mbps or defaults.b_good_mbps) * 1e6,
            b_mu        = b_mu,
        )

    report = throughput_gain_bound(inputs, args.mode.replace("-", "_")).to_dict()
    if args.out:
        _write_json(report, args.out)
    print(json.dumps(report, indent=2))
    return 0


def cmd_bench(args, config):
    cluster  = _cluster(args)
    b_mu     = args.b_mu or config.pipeline.b_mu

    if args.single_device:
        instance = load_workload(args.workloads[0]).restrict(cluster)
        frame    = single_device_table(instance, cluster, b_mu)
    else:
        if args.memberships:
            clusters = load_cluster_memberships(args.memberships, cluster)
        elif args.cluster:
            clusters = {cluster.name: cluster}
        else:
            with resources.as_file(fixture_path(MEMBERSHIPS_FIXTURE)) as path:
                clusters = load_cluster_memberships(path, cluster)

        instances = {os.path.splitext(os.path.basename(p))[0]: load_workload(p) for p in args.workloads}
        params    = _ga_params(args, config)

        if args.sweep:
            instance = next(iter(instances.values()))
            frame = bandwidth_sweep(instance, clusters, args.sweep, b_mu, params,
                                    jobs=_jobs(args), progress=args.progress)
        else:
            frame = bench_suite(
                instances, clusters,
                modes          = args.modes,
                reps           = args.reps or config.bench.reps,
                seed           = args.seed,
                b_mu           = b_mu,
                n_microbatches = args.microbatches or config.pipeline.microbatches,
                jitter         = _jitter(args.jitter, cluster, config.bench.jitter_ms),
                ga_params      = params,
                jobs           = _jobs(args),
                progress       = args.progress,
            )

    frame.to_csv(args.out, index=False)
    print("Wrote {} rows to {}".format(len(frame), args.out))
    return 0


def cmd_worker(args, config):
    from fogpipe.runtime.worker import worker_run
    worker_run(
        host         = args.host,
        port         = args.port,
        device_id    = args.device_id,
        name         = args.name,
        physical     = (args.transfer or config.runtime.transfer) == "physical",
        metrics_port = args.metrics_port,
    )
    return 0


def cmd_manager(args, config):
    from prometheus_client import start_http_server
    from fogpipe.runtime.manager import ManagerParams, manager_run

    runtime  = config.runtime
    instance = load_workload(args.workload)
    cluster  = load_cluster(args.cluster) if args.cluster else None
    params   = ManagerParams(
        b_mu                    = args.b_mu or 1,
        microbatches            = args.microbatches or runtime.microbatches,
        timeout_s               = args.timeout or runtime.timeout_s,
        profile_reps            = args.profile_reps or runtime.profile_reps,
        declared_bandwidth_gbps = args.declared_bandwidth or runtime.declared_bandwidth_gbps,
        physical                = (args.transfer or runtime.transfer) == "physical",
        ga_params               = _ga_params(args, config),
    )

    if args.metrics_port is not None:
        start_http_server(args.metrics_port)

    report = manager_run(args.workers, instance, params, cluster)
    if args.out:
        _write_json(report.to_dict(), args.out)
    print("predicted = {:.3f} samples/s".format(report.predicted_samples_per_s))
    print("measured  = {:.3f} samples/s (ratio {:.3f})".format(report.measured_samples_per_s, report.ratio))
    print("batches   = {}/{}".format(report.batches_received, report.batches_sent))
    return 0


########################################################################
#                           Parse arguments                            #
########################################################################

def _add_ga_arguments(parser):
    group = parser.add_argument_group("GA parameters")
    group.add_argument('--population'     , type=int  , help="population size N_pop (even)")
    group.add_argument('--generations'    , type=int  , help="number of generations N_gen")
    group.add_argument('--crossover-prob' , type=float, help="crossover probability P_c")
    group.add_argument('--mutation-prob'  , type=float, help="mutation probability P_m")
    group.add_argument('--device-order'   , choices=("auto",) + DEVICE_ORDER_MODES, help="device order handling")
    group.add_argument('--no-memory-check', action='store_true', help="do not prune stages exceeding device memory")
    group.add_argument('--jobs'           , type=int  , help="evaluation processes (default: all cores)")
    group.add_argument('--progress'       , action='store_true', help="show progress bars")


def build_parser():
    parser = argparse.ArgumentParser(
        prog            = "fogpipe",
        description     = "Pipeline-parallel inference scheduling over heterogeneous fog devices",
        formatter_class = argformat.StructuredFormatter,
    )
    parser.add_argument('-v', '--verbose', action='store_true', help="log at DEBUG level")
    parser.add_argument('--config', help="INI file overriding the packaged defaults")

    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help):
        sub = commands.add_parser(name, help=help, formatter_class=argformat.StructuredFormatter)
        sub.set_defaults(handler=handler)
        sub.add_argument('--seed', type=int, default=0, help="master random seed")
        return sub

    # gen
    gen = command("gen", cmd_gen, "generate a synthetic workload file")
    gen.add_argument('kind', choices=("multigran", "random"), help="workload template")
    gen.add_argument('--out'    , required=True, help="workload JSON to write")
    gen.add_argument('--cluster', help="cluster JSON the profiles cover (default: bundled testbed)")
    group = gen.add_argument_group("Template parameters")
    group.add_argument('--temporal-branches', type=int  , default=3  , help="multigran temporal branches")
    group.add_argument('--spatial-levels'   , type=int  , default=3  , help="multigran spatial levels")
    group.add_argument('--st-blocks'        , type=int  , default=2  , help="multigran S-T blocks per chain")
    group.add_argument('--expand-st'        , action='store_true'    , help="expand each S-T block into 3 layers")
    group.add_argument('--layers'           , type=int  , default=8  , help="random DAG layer count")
    group.add_argument('--density'          , type=float, default=0.3, help="random DAG edge probability")
    group.add_argument('--proc-range'       , type=float, nargs=2, metavar=("LO", "HI"),
                       help="per-layer processing time range in seconds")

    # schedule
    schedule = command("schedule", cmd_schedule, "search an execution order and schedule")
    schedule.add_argument('--workload', required=True, help="workload JSON")
    schedule.add_argument('--cluster' , help="cluster JSON (default: bundled testbed)")
    schedule.add_argument('--out'     , required=True, help="schedule JSON to write")
    schedule.add_argument('--log'     , help="generations CSV to write")
    schedule.add_argument('--pareto'  , help="Pareto front CSV to write")
    schedule.add_argument('--csv'     , help="per-stage evaluation CSV to write")
    schedule.add_argument('--b-mu'    , type=int, help="micro-batch size")
    _add_ga_arguments(schedule)

    # simulate
    sim = command("simulate", cmd_simulate, "simulate a schedule with the event loop")
    sim.add_argument('--workload'    , required=True, help="workload JSON")
    sim.add_argument('--cluster'     , help="cluster JSON (default: bundled testbed)")
    sim.add_argument('--schedule'    , required=True, help="schedule JSON")
    sim.add_argument('--microbatches', type=int, help="micro-batches to simulate")
    sim.add_argument('--jitter'      , type=float, nargs=2, metavar=("LO", "HI"), help="link jitter in ms, 0 0 disables")
    sim.add_argument('--out'         , help="summary CSV to write")
    sim.add_argument('--trace'       , help="event trace CSV to write")

    # bound
    bound = command("bound", cmd_bound, "throughput gain lower bound")
    bound.add_argument('--mode'       , choices=("theorem", "paper-arith"), default="theorem", help="epsilon normalisation")
    bound.add_argument('--alpha'      , type=float, help="tensor imbalance ratio")
    bound.add_argument('--beta'       , type=float, help="bandwidth asymmetry ratio")
    bound.add_argument('--delta'      , type=float, help="residual imbalance in seconds")
    bound.add_argument('--o-avg-mb'   , type=float, help="average output tensor in MB")
    bound.add_argument('--b-good-mbps', type=float, help="good link floor in MB/s")
    bound.add_argument('--b-mu'       , type=int  , help="micro-batch size")
    bound.add_argument('--workload'   , help="derive alpha and beta from a workload JSON")
    bound.add_argument('--cluster'    , help="cluster JSON (default: bundled testbed)")
    bound.add_argument('--schedule'   , help="estimate delta from a schedule JSON")
    bound.add_argument('--out'        , help="report JSON to write")

    # bench
    bench = command("bench", cmd_bench, "benchmark scheduler variants in simulation")
    bench.add_argument('--workloads'    , nargs='+', required=True, help="workload JSON files")
    bench.add_argument('--cluster'      , help="cluster JSON (default: bundled testbed)")
    bench.add_argument('--memberships'  , help="named sub-cluster JSON (default: bundled memberships)")
    bench.add_argument('--modes'        , nargs='+', choices=BENCH_MODES, default=list(BENCH_MODES), help="scheduler variants")
    bench.add_argument('--reps'         , type=int, help="repetitions per cell")
    bench.add_argument('--b-mu'         , type=int, help="micro-batch size")
    bench.add_argument('--microbatches' , type=int, help="micro-batches per simulation")
    bench.add_argument('--jitter'       , type=float, nargs=2, metavar=("LO", "HI"), help="link jitter in ms, 0 0 disables")
    bench.add_argument('--sweep'        , type=float, nargs='+', metavar="SCALE", help="bandwidth scale factors to sweep")
    bench.add_argument('--single-device', action='store_true', help="single-device throughput table")
    bench.add_argument('--out'          , required=True, help="CSV to write")
    _add_ga_arguments(bench)

    # worker
    worker = command("worker", cmd_worker, "run a harness worker")
    worker.add_argument('--host'        , default="127.0.0.1", help="listen host")
    worker.add_argument('--port'        , type=int, required=True, help="listen port")
    worker.add_argument('--device-id'   , type=int, required=True, help="device id to register")
    worker.add_argument('--name'        , help="device name to register")
    worker.add_argument('--transfer'    , choices=("physical", "logical"), help="tensor transfer mode")
    worker.add_argument('--metrics-port', type=int, help="expose Prometheus metrics on this port")

    # manager
    manager = command("manager", cmd_manager, "run the harness manager")
    manager.add_argument('--workers'           , nargs='+', required=True, help="worker endpoints host:port")
    manager.add_argument('--workload'          , required=True, help="workload JSON with emulated costs")
    manager.add_argument('--cluster'           , help="cluster JSON for memory and bandwidth")
    manager.add_argument('--b-mu'              , type=int  , help="micro-batch size")
    manager.add_argument('--microbatches'      , type=int  , help="micro-batches to stream")
    manager.add_argument('--timeout'           , type=float, help="per-phase worker timeout in seconds")
    manager.add_argument('--profile-reps'      , type=int  , help="profiling repetitions per layer")
    manager.add_argument('--declared-bandwidth', type=float, help="assumed link bandwidth in Gbps")
    manager.add_argument('--transfer'          , choices=("physical", "logical"), help="tensor transfer mode")
    manager.add_argument('--metrics-port'      , type=int  , help="expose Prometheus metrics on this port")
    manager.add_argument('--out'               , help="report JSON to write")
    _add_ga_arguments(manager)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
        level  = "DEBUG" if args.verbose else os.getenv("FOGPIPE_LOG_LEVEL", config.log_level)
        get_logger(level=level)
        return args.handler(args, config)
    except FogpipeError as e:
        logger.error("{}: {}".format(type(e).__name__, e))
        if e.exit_code == 3:
            print("infeasible: {}".format(e), file=sys.stderr)
        return e.exit_code
    except (OSError, json.JSONDecodeError) as e:
        logger.error("I/O error: {}".format(e))
        return EXIT_IO
    except ValueError as e:
        logger.error("Invalid arguments: {}".format(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
