import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses        import dataclass, field
from typing             import Optional

from prometheus_client import Counter, start_http_server

from fogpipe.exceptions       import ProtocolError
from fogpipe.logger           import get_logger
from fogpipe.runtime.protocol import (MessageType, MetricsReport, StageAssignment, decode_assign,
                                      decode_profile_request, decode_tensor, encode_assign, encode_done,
                                      encode_metrics, encode_profile_response, encode_register,
                                      encode_tensor, expect, read_message, write_message)

logger = get_logger("runtime.worker")

# =====================
# Prometheus Metrics
# =====================
batches_counter = Counter("fogpipe_worker_batches_total", "Micro-batches processed", ["device"])
busy_counter    = Counter("fogpipe_worker_busy_seconds_total", "Seconds spent in emulated compute", ["device"])

# End-of-stream marker on the internal queues
_END = None


class SpinEmulator(object):
    """Calibrated busy-wait standing in for layer compute."""

    def __init__(self):
        self.overhead_ns = 0

    def calibrate(self, samples: int = 1000) -> int:
        """Measure the cost of one clock read and subtract it from every wait."""
        start = time.perf_counter_ns()
        for _ in range(samples):
            time.perf_counter_ns()
        self.overhead_ns = (time.perf_counter_ns() - start) // samples
        logger.debug("Spin calibration: {} ns per clock read".format(self.overhead_ns))
        return self.overhead_ns

    def run(self, duration_ns: int) -> int:
        """Spin for ``duration_ns`` and return the measured nanoseconds."""
        start    = time.perf_counter_ns()
        deadline = start + max(duration_ns - self.overhead_ns, 0)
        while time.perf_counter_ns() < deadline:
            pass
        return time.perf_counter_ns() - start


@dataclass
class WorkerState:
    device_id : int
    name      : str
    assignment: Optional[StageAssignment] = None
    batches   : int                       = 0
    busy_ns   : int                       = 0
    first_ns  : Optional[int]             = None
    last_ns   : int                       = 0
    control   : Optional[asyncio.StreamWriter] = field(default=None, repr=False)

    def reset(self, assignment):
        self.assignment = assignment
        self.batches    = 0
        self.busy_ns    = 0
        self.first_ns   = None
        self.last_ns    = 0

    def metrics(self) -> MetricsReport:
        wall = 0 if self.first_ns is None else self.last_ns - self.first_ns
        return MetricsReport(self.batches, self.busy_ns, wall)


class Worker(object):
    """A fog node serving one pipeline stage.

        Parameters
        ----------
        device_id : int
            Id sent in every REGISTER frame.

        name : string
            Human readable label.

        host, port : string, int
            Listening endpoint; port 0 picks a free port.

        physical : boolean, default=True
            Send zero-filled tensor payloads instead of only their sizes.
        """

    def __init__(self, device_id: int, name: str, host: str = "127.0.0.1", port: int = 0,
                 physical: bool = True):
        self.state    = WorkerState(device_id, name)
        self.host     = host
        self.port     = port
        self.physical = physical
        self.emulator = SpinEmulator()
        self.executor = ThreadPoolExecutor(max_workers=1)
        self.stopped  = None
        self.inbound  = None
        self.pipeline = None
        self.downstream: Optional[asyncio.StreamWriter] = None

    @property
    def label(self):
        return str(self.state.device_id)

    async def serve(self, on_ready=None):
        """Serve connections until the manager sends DONE on a control connection."""
        self.emulator.calibrate()
        self.stopped = asyncio.Event()
        server = await asyncio.start_server(self.handle_connection, self.host, self.port)
        self.port = server.sockets[0].getsockname()[1]
        logger.info("Worker {} ({}) listening on {}:{}".format(
            self.state.device_id, self.state.name, self.host, self.port))
        if on_ready is not None:
            on_ready(self.port)

        async with server:
            await self.stopped.wait()
        await self._close_downstream()
        self.executor.shutdown(wait=False)
        logger.info("Worker {} stopped".format(self.state.device_id))

    async def _compute(self, duration_ns):
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self.executor, self.emulator.run, duration_ns)

    # =====================
    # Connection handling
    # =====================
    async def handle_connection(self, reader, writer):
        peer    = writer.get_extra_info("peername")
        is_data = False
        try:
            await write_message(writer, encode_register(self.state.device_id, self.state.name))
            while True:
                message = await read_message(reader)
                if message is None:
                    break

                if message.type == MessageType.PROFILE_REQ:
                    await self.on_profile(message, writer)
                elif message.type == MessageType.ASSIGN:
                    await self.on_assign(message, writer)
                elif message.type == MessageType.TENSOR:
                    if self.inbound is None:
                        raise ProtocolError("TENSOR received before any ASSIGN")
                    is_data = True
                    batch, _ = decode_tensor(message)
                    await self.inbound.put(batch)
                elif message.type == MessageType.DONE:
                    if is_data:
                        await self.inbound.put(_END)
                    else:
                        self.stopped.set()
                    break
                else:
                    raise ProtocolError("unexpected {} frame at a worker".format(message.type.name))
        except ProtocolError as e:
            logger.error("Protocol fault from {}: {}".format(peer, e))
        except ConnectionError as e:
            logger.error("Connection to {} lost: {}".format(peer, e))
        finally:
            writer.close()

    async def on_profile(self, message, writer):
        reps, layers = decode_profile_request(message)
        reps  = max(reps, 1)
        means = list()
        for layer_id, duration_ns in layers:
            total = 0
            for _ in range(reps):
                total += await self._compute(duration_ns)
            means.append((layer_id, total // reps))
        await write_message(writer, encode_profile_response(means))
        logger.debug("Profiled {} layers x {} reps".format(len(layers), reps))

    async def on_assign(self, message, writer):
        assignment = decode_assign(message)
        if assignment is None:
            raise ProtocolError("empty ASSIGN sent to a worker")

        await self._close_downstream()
        if self.pipeline is not None:
            self.pipeline.cancel()

        if assignment.downstream:
            host, port = assignment.downstream.rsplit(":", 1)
            down_reader, self.downstream = await asyncio.open_connection(host, int(port))
            expect(await read_message(down_reader), MessageType.REGISTER)

        self.state.reset(assignment)
        self.state.control = writer
        self.inbound  = asyncio.Queue(maxsize=1)
        self.pipeline = asyncio.ensure_future(self._run_stage())

        await write_message(writer, encode_assign(None))
        logger.info("Worker {} assigned {} layers, downstream {}".format(
            self.state.device_id, len(assignment.layers), assignment.downstream or "none (sink)"))

    # =====================
    # Stage pipeline
    # =====================
    async def _run_stage(self):
        """Compute received batches while the sender forwards finished ones."""
        outbound = asyncio.Queue(maxsize=1)
        sender   = asyncio.ensure_future(self._send(outbound))
        state    = self.state

        while True:
            batch = await self.inbound.get()
            if batch is _END:
                break
            elapsed = await self._compute(state.assignment.compute_ns)

            now = time.perf_counter_ns()
            if state.first_ns is None:
                state.first_ns = now
            state.last_ns  = now
            state.batches += 1
            state.busy_ns += elapsed
            batches_counter.labels(self.label).inc()
            busy_counter.labels(self.label).inc(elapsed / 1e9)

            await outbound.put(batch)

        await outbound.put(_END)
        await sender

    async def _send(self, outbound):
        assignment = self.state.assignment
        size       = assignment.cut_bytes * assignment.b_mu
        while True:
            batch = await outbound.get()
            if batch is _END:
                break
            if self.downstream is not None:
                await write_message(self.downstream, encode_tensor(batch, size, self.physical))

        if self.downstream is not None:
            await write_message(self.downstream, encode_done())
        await write_message(self.state.control, encode_metrics(self.state.metrics()))
        logger.info("Worker {} finished: {} batches, busy {:.3f}s".format(
            self.state.device_id, self.state.batches, self.state.busy_ns / 1e9))

    async def _close_downstream(self):
        if self.downstream is not None:
            self.downstream.close()
            self.downstream = None


def worker_run(host: str, port: int, device_id: int, name: Optional[str] = None,
               physical: bool = True, metrics_port: Optional[int] = None, ready_queue=None):
    """Run a worker until shut down by its manager.

        ``ready_queue``, if given, receives the bound port once listening.
        """
    if metrics_port is not None:
        start_http_server(metrics_port)

    worker   = Worker(device_id, name or "device-{}".format(device_id), host, port, physical)
    on_ready = None if ready_queue is None else ready_queue.put
    asyncio.run(worker.serve(on_ready))
