"""Discrete-event simulation of pipelined micro-batch execution.

Every stage device and every inter-stage link is a unary FIFO resource. A
micro-batch visits them in pipeline order: device 0, link 0->1, device 1,
link 1->2, and so on. Device service time is the stage's compute time, link
service time its receive-side communication time plus, optionally, one
uniform jitter sample per transfer.
"""
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing      import Dict, Optional, Sequence, Tuple

import numpy as np

from fogpipe.cluster    import ClusterSpec
from fogpipe.exceptions import ScheduleError
from fogpipe.logger     import get_logger
from fogpipe.timing     import ExecutionOrder, Schedule, Stage, evaluate_schedule, stage_compute_time
from fogpipe.workload   import WorkloadInstance

logger = get_logger("simulator")


@dataclass(frozen=True)
class TraceEvent:
    resource: str
    batch   : int
    start   : float
    end     : float


@dataclass(frozen=True)
class SimReport:
    """Outcome of one simulated pipeline run."""
    makespan                : float
    steady_interval         : float
    throughput_samples_per_s: float
    per_resource_busy       : Dict[str, float]
    n_microbatches          : int
    micro_batch             : int
    trace                   : Optional[Tuple[TraceEvent, ...]] = field(default=None, repr=False)


def _resources(instance, order, schedule, cluster):
    """Names and base service times of the pipeline resources in visiting order."""
    evaluation = evaluate_schedule(instance, order, schedule, cluster)

    names, service, links = list(), list(), list()
    for k, timing in enumerate(evaluation.per_stage):
        if k > 0:
            links.append(len(names))
            names.append("link:{}->{}".format(evaluation.per_stage[k - 1].device_id, timing.device_id))
            service.append(timing.t_comm)
        names.append("device:{}".format(timing.device_id))
        service.append(timing.t_comp)
    return names, service, links


def simulate(
        instance      : WorkloadInstance,
        order         : ExecutionOrder,
        schedule      : Schedule,
        cluster       : ClusterSpec,
        n_microbatches: int,
        jitter        : Optional[Sequence[float]] = None,
        seed          : int                       = 0,
        record_trace  : bool                      = False,
    ) -> SimReport:
    """Simulate ``n_microbatches`` flowing through ``schedule``.

        Parameters
        ----------
        instance : WorkloadInstance
            Graph and profiles.

        order : tuple of int
            Execution order the schedule is cut along.

        schedule : Schedule
            Stages to simulate.

        cluster : ClusterSpec
            Devices and bandwidths.

        n_microbatches : int
            Number of micro-batches injected at time 0, at least 2.

        jitter : (float, float), optional
            Range in milliseconds of the uniform delay added to every
            link transfer. None or (0, 0) disables jitter.

        seed : int, default=0
            Seed of the jitter stream.

        record_trace : boolean, default=False
            If True, keep every (resource, batch, start, end) interval.

        Returns
        -------
        report : SimReport
        """
    if n_microbatches < 2:
        raise ScheduleError("n_microbatches must be >= 2, got {}".format(n_microbatches))

    names, service, links = _resources(instance, order, schedule, cluster)
    n_resources = len(names)

    # One jitter sample per (link, batch), drawn up front so results do not
    # depend on event processing order
    delay = np.zeros((n_resources, n_microbatches))
    if jitter is not None and links:
        lo, hi = jitter
        if not 0 <= lo <= hi:
            raise ScheduleError("invalid jitter range [{}, {}]".format(lo, hi))
        rng = np.random.default_rng(seed)
        delay[links] = rng.uniform(lo, hi, size=(len(links), n_microbatches)) / 1000.0

    queues  = [deque() for _ in range(n_resources)]
    busy    = [False] * n_resources
    busy_s  = [0.0]   * n_resources
    events  = list()
    trace   = list()
    counter = 0
    departures = list()

    def start(resource, now):
        nonlocal counter
        if busy[resource] or not queues[resource]:
            return
        batch = queues[resource].popleft()
        duration = service[resource] + delay[resource, batch]
        busy[resource]    = True
        busy_s[resource] += duration
        heapq.heappush(events, (now + duration, counter, resource, batch))
        counter += 1
        if record_trace:
            trace.append(TraceEvent(names[resource], batch, now, now + duration))

    queues[0].extend(range(n_microbatches))
    start(0, 0.0)

    while events:
        now, _, resource, batch = heapq.heappop(events)
        busy[resource] = False
        if resource + 1 < n_resources:
            queues[resource + 1].append(batch)
            start(resource + 1, now)
        else:
            departures.append(now)
        start(resource, now)

    makespan = departures[-1]
    interval = departures[-1] - departures[-2]
    report   = SimReport(
        makespan                 = makespan,
        steady_interval          = interval,
        throughput_samples_per_s = schedule.micro_batch / interval if interval > 0 else math.inf,
        per_resource_busy        = dict(zip(names, busy_s)),
        n_microbatches           = n_microbatches,
        micro_batch              = schedule.micro_batch,
        trace                    = tuple(trace) if record_trace else None,
    )

    logger.debug(
        "Simulated {} micro-batches over {} stages: makespan={:.6f}s interval={:.6f}s"
        .format(n_microbatches, len(schedule.stages), makespan, interval)
    )
    return report


def closed_form(instance, order, schedule, cluster, n_microbatches) -> Tuple[float, float]:
    """Jitter-free (makespan, steady interval) of a tandem pipeline."""
    _, service, _ = _resources(instance, order, schedule, cluster)
    interval = max(service)
    return math.fsum(service) + (n_microbatches - 1) * interval, interval


########################################################################
#                              Baselines                               #
########################################################################

def equal_partition_baseline(order: ExecutionOrder, device_sequence: Sequence[int], b_mu: int = 1) -> Schedule:
    """Split ``order`` into near-equal contiguous stages along ``device_sequence``.

        Earlier stages take the larger share; with fewer layers than devices
        the trailing devices stay unused.
        """
    n_layers = len(order)
    if n_layers < 1:
        raise ScheduleError("cannot partition an empty execution order")
    if not device_sequence:
        raise ScheduleError("cannot partition over an empty device sequence")

    n_stages    = min(n_layers, len(device_sequence))
    size, extra = divmod(n_layers, n_stages)

    stages, start = list(), 0
    for k in range(n_stages):
        length = size + (1 if k < extra else 0)
        stages.append(Stage(start, start + length - 1, device_sequence[k]))
        start += length
    return Schedule(tuple(stages), b_mu)


def single_device_report(instance: WorkloadInstance, order: ExecutionOrder, device_id: int, b_mu: int) -> float:
    """Samples/s of the whole order on one device."""
    cycle = stage_compute_time(order, device_id, instance.profiles)
    if cycle <= 0:
        raise ScheduleError("non-positive cycle time on device {}".format(device_id))
    return b_mu / cycle
