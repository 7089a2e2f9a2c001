import asyncio
import math
from dataclasses import dataclass, field
from typing      import Dict, List, Optional, Sequence

from prometheus_client import Counter, Gauge

from fogpipe.cluster          import BYTES_PER_GBPS, ClusterSpec, DeviceSpec
from fogpipe.exceptions       import PhaseError, ScheduleError
from fogpipe.logger           import get_logger
from fogpipe.nsga             import GaParams, run_ga_dphds
from fogpipe.runtime.protocol import (MessageType, MetricsReport, StageAssignment, decode_assign,
                                      decode_metrics, decode_profile_response, decode_register,
                                      encode_assign, encode_done, encode_profile_request, encode_tensor,
                                      expect, layer_list, read_message, write_message)
from fogpipe.timing           import ExecutionOrder, Schedule, ScheduleEvaluation
from fogpipe.workload         import ProfileMatrix, WorkloadInstance

logger = get_logger("runtime.manager")

# =====================
# Prometheus Metrics
# =====================
runs_counter     = Counter("fogpipe_harness_runs_total", "Completed harness runs")
predicted_gauge  = Gauge("fogpipe_predicted_samples_per_second", "Analytic throughput of the last run")
measured_gauge   = Gauge("fogpipe_measured_samples_per_second", "Measured throughput of the last run")


@dataclass(frozen=True)
class ManagerParams:
    """Knobs of one harness run.

        Parameters
        ----------
        b_mu : int, default=1
            Micro-batch size.

        microbatches : int, default=20
            TENSOR frames streamed into the head stage.

        timeout_s : float, default=10.0
            Per-phase wait for any single worker.

        profile_reps : int, default=5
            Repetitions per layer in the profiling phase.

        declared_bandwidth_gbps : float, default=10.0
            Link bandwidth assumed for every device when no cluster is given.

        physical : boolean, default=True
            Send zero-filled tensor payloads rather than sizes only.

        ga_params : GaParams
            Search parameters of the scheduling phase.
        """
    b_mu                   : int      = 1
    microbatches           : int      = 20
    timeout_s              : float    = 10.0
    profile_reps           : int      = 5
    declared_bandwidth_gbps: float    = 10.0
    physical               : bool     = True
    ga_params              : GaParams = field(default_factory=GaParams)


@dataclass
class WorkerHandle:
    endpoint : str
    device_id: int
    name     : str
    reader   : asyncio.StreamReader = field(repr=False)
    writer   : asyncio.StreamWriter = field(repr=False)


@dataclass(frozen=True)
class HarnessReport:
    order                  : ExecutionOrder
    schedule               : Schedule
    evaluation             : ScheduleEvaluation
    measured_profiles      : ProfileMatrix
    worker_metrics         : Dict[int, MetricsReport]
    batches_sent           : int
    batches_received       : int
    predicted_samples_per_s: float
    measured_samples_per_s : float

    @property
    def ratio(self) -> float:
        """Measured over predicted throughput."""
        if self.predicted_samples_per_s in (0, math.inf):
            return math.nan
        return self.measured_samples_per_s / self.predicted_samples_per_s

    def to_dict(self) -> dict:
        return {
            "order"                  : list(self.order),
            "stages"                 : [
                {"device": stage.device_id, "layers": list(stage.layers(self.order))}
                for stage in self.schedule.stages
            ],
            "batches_sent"           : self.batches_sent,
            "batches_received"       : self.batches_received,
            "predicted_samples_per_s": self.predicted_samples_per_s,
            "measured_samples_per_s" : self.measured_samples_per_s,
            "ratio"                  : self.ratio,
        }


def parse_endpoint(endpoint: str):
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError("endpoint must be host:port, got '{}'".format(endpoint))
    return host, int(port)


class Manager(object):
    """Drives workers through registration, profiling, scheduling and runtime."""

    def __init__(self, endpoints: Sequence[str], instance: WorkloadInstance,
                 params: ManagerParams = ManagerParams(), cluster: Optional[ClusterSpec] = None):
        self.endpoints = list(endpoints)
        self.instance  = instance
        self.params    = params
        self.cluster   = cluster
        self.handles   : List[WorkerHandle] = list()

    async def _wait(self, phase, handle_or_endpoint, awaitable, timeout=None):
        worker = getattr(handle_or_endpoint, "endpoint", handle_or_endpoint)
        try:
            return await asyncio.wait_for(awaitable, timeout or self.params.timeout_s)
        except asyncio.TimeoutError:
            raise PhaseError(phase, "timed out", worker=worker) from None
        except (OSError, EOFError) as e:
            raise PhaseError(phase, str(e), worker=worker) from None

    async def run(self) -> HarnessReport:
        try:
            await self.register()
            measured = await self.profile()
            cluster  = self.build_cluster()
            result   = self.schedule(measured, cluster)
            return await self.execute(measured, result)
        finally:
            await self.shutdown()

    # =====================
    # Registration
    # =====================
    async def register(self):
        if not self.endpoints:
            raise PhaseError("registration", "no devices registered")

        async def connect(endpoint):
            host, port = parse_endpoint(endpoint)
            reader, writer = await asyncio.open_connection(host, port)
            device_id, name = decode_register(expect(await read_message(reader), MessageType.REGISTER))
            return WorkerHandle(endpoint, device_id, name, reader, writer)

        for endpoint in self.endpoints:
            self.handles.append(await self._wait("registration", endpoint, connect(endpoint)))

        ids = [handle.device_id for handle in self.handles]
        if len(set(ids)) != len(ids):
            raise PhaseError("registration", "duplicate device ids {}".format(ids))
        logger.info("Registration phase: {} devices {}".format(len(ids), ids))

    # =====================
    # Profiling
    # =====================
    def _emulated(self, device_id, layer_ids):
        try:
            return [self.instance.profiles.get(layer, device_id) for layer in layer_ids]
        except ScheduleError as e:
            raise PhaseError("profiling", str(e), worker=device_id) from None

    async def profile(self) -> WorkloadInstance:
        layer_ids = [layer.layer_id for layer in self.instance.graph.layers]

        async def measure(handle):
            request = encode_profile_request(
                self.params.profile_reps, layer_list(layer_ids, self._emulated(handle.device_id, layer_ids))
            )
            await write_message(handle.writer, request)
            reply = expect(await read_message(handle.reader), MessageType.PROFILE_RESP)
            return decode_profile_response(reply)

        def timeout(handle):
            return self.params.timeout_s + self.params.profile_reps * sum(self._emulated(handle.device_id, layer_ids))

        replies = await asyncio.gather(*(
            self._wait("profiling", handle, measure(handle), timeout(handle)) for handle in self.handles
        ))

        seconds = dict()
        for handle, means in zip(self.handles, replies):
            for layer_id, mean_ns in means:
                seconds[layer_id, handle.device_id] = mean_ns / 1e9
        measured = WorkloadInstance(self.instance.graph, ProfileMatrix(seconds), cluster_ref="harness")
        logger.info("Profiling phase: {} layers on {} devices".format(len(layer_ids), len(self.handles)))
        return measured

    # =====================
    # Scheduling
    # =====================
    def build_cluster(self) -> ClusterSpec:
        ids = [handle.device_id for handle in self.handles]
        if self.cluster is not None:
            return self.cluster.subset(ids, name=self.cluster.name)

        bandwidth = self.params.declared_bandwidth_gbps * BYTES_PER_GBPS
        devices   = tuple(
            DeviceSpec(handle.device_id, handle.name, math.inf, bandwidth, bandwidth)
            for handle in self.handles
        )
        return ClusterSpec(devices, name="harness")

    def schedule(self, measured: WorkloadInstance, cluster: ClusterSpec):
        result = run_ga_dphds(measured, cluster, self.params.b_mu, self.params.ga_params)
        logger.info("Scheduling phase: {} stages on devices {}, predicted {:.3f} samples/s".format(
            len(result.schedule.stages), list(result.schedule.devices),
            result.evaluation.throughput_samples_per_s))
        return result

    # =====================
    # Runtime
    # =====================
    async def execute(self, measured: WorkloadInstance, result) -> HarnessReport:
        params   = self.params
        graph    = self.instance.graph
        order    = result.order
        stages   = result.schedule.stages
        by_id    = {handle.device_id: handle for handle in self.handles}
        workers  = [by_id[stage.device_id] for stage in stages]

        for k, (stage, handle) in enumerate(zip(stages, workers)):
            layers     = stage.layers(order)
            assignment = StageAssignment(
                layers     = tuple(layer_list(layers, self._emulated(stage.device_id, layers))),
                b_mu       = params.b_mu,
                cut_bytes  = int(graph.layer(layers[-1]).output_bytes),
                downstream = workers[k + 1].endpoint if k + 1 < len(workers) else None,
            )
            await write_message(handle.writer, encode_assign(assignment))

        async def acknowledge(handle):
            reply = expect(await read_message(handle.reader), MessageType.ASSIGN)
            if decode_assign(reply) is not None:
                raise PhaseError("runtime", "ASSIGN acknowledgement carries a payload", worker=handle.endpoint)

        await asyncio.gather(*(self._wait("runtime", handle, acknowledge(handle)) for handle in workers))

        head        = workers[0]
        input_bytes = int(graph.layer(order[0]).input_bytes * params.b_mu)

        async def stream():
            host, port     = parse_endpoint(head.endpoint)
            reader, writer = await asyncio.open_connection(host, port)
            expect(await read_message(reader), MessageType.REGISTER)
            for batch in range(params.microbatches):
                await write_message(writer, encode_tensor(batch, input_bytes, params.physical))
            await write_message(writer, encode_done())
            writer.close()

        await self._wait("runtime", head, stream())

        expected = params.microbatches * result.evaluation.t_overall * 2

        async def collect(handle):
            return decode_metrics(expect(await read_message(handle.reader), MessageType.METRICS))

        reports = await asyncio.gather(*(
            self._wait("runtime", handle, collect(handle), params.timeout_s + expected) for handle in workers
        ))
        metrics = {handle.device_id: report for handle, report in zip(workers, reports)}

        sink     = reports[-1]
        measured_rate = 0.0
        if sink.batches >= 2 and sink.wall_ns > 0:
            measured_rate = (sink.batches - 1) * params.b_mu / (sink.wall_ns / 1e9)

        report = HarnessReport(
            order                   = order,
            schedule                = result.schedule,
            evaluation              = result.evaluation,
            measured_profiles       = measured.profiles,
            worker_metrics          = metrics,
            batches_sent            = params.microbatches,
            batches_received        = sink.batches,
            predicted_samples_per_s = result.evaluation.throughput_samples_per_s,
            measured_samples_per_s  = measured_rate,
        )

        runs_counter.inc()
        predicted_gauge.set(report.predicted_samples_per_s)
        measured_gauge.set(report.measured_samples_per_s)
        logger.info("Runtime phase: predicted {:.3f} samples/s, measured {:.3f} samples/s (ratio {:.3f}), "
                    "{}/{} batches".format(report.predicted_samples_per_s, report.measured_samples_per_s,
                                           report.ratio, report.batches_received, report.batches_sent))
        return report

    async def shutdown(self):
        for handle in self.handles:
            try:
                await write_message(handle.writer, encode_done())
            except (OSError, RuntimeError):
                pass
            handle.writer.close()


def manager_run(endpoints: Sequence[str], instance: WorkloadInstance,
                params: ManagerParams = ManagerParams(), cluster: Optional[ClusterSpec] = None) -> HarnessReport:
    """Run the four harness phases against the workers at ``endpoints``.

        Parameters
        ----------
        endpoints : list of string
            ``host:port`` of every worker.

        instance : WorkloadInstance
            Graph plus the emulated per-layer cost of each worker's device.

        params : ManagerParams
            Run parameters.

        cluster : ClusterSpec, optional
            Memory and bandwidth of the registered devices. If None, every
            device gets unbounded memory and the declared bandwidth.

        Returns
        -------
        report : HarnessReport
            Predicted and measured throughput side by side.
        """
    return asyncio.run(Manager(endpoints, instance, params, cluster).run())
