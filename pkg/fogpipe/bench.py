from dataclasses import replace
from typing      import Iterable, Mapping, Optional, Sequence, Tuple

import numpy  as np
import pandas as pd
from tqdm import tqdm

from fogpipe.cluster    import ClusterSpec, scale_bandwidth
from fogpipe.logger     import get_logger
from fogpipe.nsga       import GaParams, run_ga_dphds
from fogpipe.partition  import dp_partition
from fogpipe.simulator  import equal_partition_baseline, simulate, single_device_report
from fogpipe.timing     import ExecutionOrder, Schedule
from fogpipe.workload   import WorkloadInstance, canonical_topo_order, random_topo_order

logger = get_logger("bench")

BENCH_MODES = ("gadphds", "baseline", "no_order_opt")

# Offset between the seeds of consecutive repetitions
REP_SEED_STRIDE = 1000

BENCH_COLUMNS = [
    "cluster", "mode", "rep", "seed", "steady_interval_s", "makespan_s", "throughput_samples_s",
]
SWEEP_COLUMNS = ["cluster", "scale", "devices_used", "t_overall_s", "throughput_samples_s"]


def _schedule_variant(mode, instance, cluster, b_mu, ga_params, rep_seed, jobs) -> Tuple[ExecutionOrder, Schedule]:
    """Order and schedule produced by one scheduler variant."""
    if mode == "gadphds":
        result = run_ga_dphds(instance, cluster, b_mu, ga_params, jobs=jobs)
        return result.order, result.schedule

    if mode == "baseline":
        order = canonical_topo_order(instance.graph)
        return order, equal_partition_baseline(order, cluster.pipeline_sequence, b_mu)

    if mode == "no_order_opt":
        order = random_topo_order(instance.graph, np.random.default_rng([rep_seed, 1]))
        schedule, _ = dp_partition(
            instance, order, cluster.pipeline_sequence, b_mu, cluster,
            memory_check = ga_params.memory_check,
        )
        return order, schedule

    raise ValueError("unknown bench mode '{}'".format(mode))


def bench_suite(
        instances     : Mapping[str, WorkloadInstance],
        clusters      : Mapping[str, ClusterSpec],
        modes         : Sequence[str]                       = BENCH_MODES,
        reps          : int                                 = 10,
        seed          : int                                 = 0,
        b_mu          : int                                 = 16,
        n_microbatches: int                                 = 32,
        jitter        : Optional[Tuple[float, float]]       = (10.0, 30.0),
        ga_params     : Optional[GaParams]                  = None,
        jobs          : int                                 = 1,
        progress      : bool                                = False,
    ) -> pd.DataFrame:
    """Simulated throughput of each scheduler variant on each cluster.

        Parameters
        ----------
        instances : dict
            Workload name -> WorkloadInstance. Profiles must cover every
            device of every cluster; they are restricted per cluster.

        clusters : dict
            Cluster name -> ClusterSpec.

        modes : list of string, default=("gadphds", "baseline", "no_order_opt")
            Scheduler variants to run.

        reps : int, default=10
            Simulated repetitions per (cluster, mode) cell.

        seed : int, default=0
            Master seed. Repetition ``r`` uses ``seed + 1000 * r`` for its
            jitter, its random order and its GA run. The baseline is
            deterministic and is scheduled once per cell.

        b_mu, n_microbatches : int
            Micro-batch size and number of simulated micro-batches.

        jitter : (float, float), optional
            Link jitter range in milliseconds.

        ga_params : GaParams, optional
            Search parameters for the gadphds mode.

        jobs : int, default=1
            GA evaluation processes.

        progress : boolean, default=False
            If True, show a progress bar over cells.

        Returns
        -------
        rows : pd.DataFrame
            One row per repetition followed by ``mean`` and ``std`` rows per
            cell. An ``instance`` column leads when several workloads are
            benchmarked.
        """
    for mode in modes:
        if mode not in BENCH_MODES:
            raise ValueError("unknown bench mode '{}'".format(mode))
    if reps < 1:
        raise ValueError("reps must be >= 1, got {}".format(reps))

    ga_params = ga_params or GaParams()
    cells     = [(i, c, m) for i in instances for c in clusters for m in modes]
    rows      = list()

    for instance_name, cluster_name, mode in tqdm(cells, desc="bench", disable=not progress):
        cluster  = clusters[cluster_name]
        instance = instances[instance_name].restrict(cluster)

        cell, cached = list(), None
        for rep in range(reps):
            rep_seed = seed + REP_SEED_STRIDE * rep
            if cached is None or mode != "baseline":
                params = replace(ga_params, rng_seed=rep_seed)
                cached = _schedule_variant(mode, instance, cluster, b_mu, params, rep_seed, jobs)
            order, schedule = cached

            report = simulate(instance, order, schedule, cluster, n_microbatches, jitter=jitter, seed=rep_seed)
            cell.append({
                "instance"            : instance_name,
                "cluster"             : cluster_name,
                "mode"                : mode,
                "rep"                 : rep,
                "seed"                : rep_seed,
                "steady_interval_s"   : report.steady_interval,
                "makespan_s"          : report.makespan,
                "throughput_samples_s": report.throughput_samples_per_s,
            })

        rows.extend(cell)
        rows.extend(_summary_rows(cell))
        logger.debug(
            "{}/{}/{}: mean throughput {:.3f} samples/s".format(
                instance_name, cluster_name, mode, rows[-2]["throughput_samples_s"])
        )

    columns = BENCH_COLUMNS if len(instances) == 1 else ["instance"] + BENCH_COLUMNS
    return pd.DataFrame(rows, columns=columns)


def _summary_rows(cell):
    frame   = pd.DataFrame(cell)
    metrics = ["steady_interval_s", "makespan_s", "throughput_samples_s"]
    head    = {key: cell[0][key] for key in ("instance", "cluster", "mode")}
    return [
        dict(head, rep="mean", seed="", **frame[metrics].mean().to_dict()),
        dict(head, rep="std" , seed="", **frame[metrics].std(ddof=0).to_dict()),
    ]


def bandwidth_sweep(
        instance : WorkloadInstance,
        clusters : Mapping[str, ClusterSpec],
        scales   : Iterable[float],
        b_mu     : int                = 16,
        ga_params: Optional[GaParams] = None,
        jobs     : int                = 1,
        progress : bool               = False,
    ) -> pd.DataFrame:
    """Schedule every cluster with all link bandwidths scaled.

        Returns one row per (cluster, scale) with the number of devices the
        returned schedule uses and its analytic throughput.
        """
    ga_params = ga_params or GaParams()
    cells     = [(name, float(scale)) for name in clusters for scale in scales]
    rows      = list()

    for name, scale in tqdm(cells, desc="sweep", disable=not progress):
        cluster = scale_bandwidth(clusters[name], scale)
        result  = run_ga_dphds(instance.restrict(cluster), cluster, b_mu, ga_params, jobs=jobs)
        rows.append({
            "cluster"             : name,
            "scale"               : scale,
            "devices_used"        : result.evaluation.devices_used,
            "t_overall_s"         : result.evaluation.t_overall,
            "throughput_samples_s": result.evaluation.throughput_samples_per_s,
        })

    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def single_device_table(instance: WorkloadInstance, cluster: ClusterSpec, b_mu: int) -> pd.DataFrame:
    """Throughput of the whole model on each device alone."""
    order = canonical_topo_order(instance.graph)
    rows  = [
        {
            "device"              : device.device_id,
            "name"                : device.name,
            "throughput_samples_s": single_device_report(instance, order, device.device_id, b_mu),
        } for device in cluster.devices
    ]
    return pd.DataFrame(rows, columns=["device", "name", "throughput_samples_s"])
