import json
import math
from dataclasses import dataclass
from typing      import List, Optional, Sequence, Tuple

import numpy  as np
import pandas as pd

from fogpipe.cluster    import ClusterSpec, DeviceSpec, link_bandwidth
from fogpipe.exceptions import ScheduleError
from fogpipe.workload   import LayerNode, ProfileMatrix, WorkloadInstance, is_topological

# A topological permutation of layer ids
ExecutionOrder = Tuple[int, ...]


########################################################################
#                             Domain types                             #
########################################################################

@dataclass(frozen=True)
class Stage:
    """Contiguous run ``order[start_idx..end_idx]`` (inclusive) on one device."""
    start_idx: int
    end_idx  : int
    device_id: int

    def layers(self, order: Sequence[int]) -> Tuple[int, ...]:
        return tuple(order[self.start_idx:self.end_idx + 1])

    def __len__(self):
        return self.end_idx - self.start_idx + 1


@dataclass(frozen=True)
class Schedule:
    """Stage-to-device assignment along an execution order.

        Parameters
        ----------
        stages : tuple of Stage
            Stages in pipeline order.

        micro_batch : int
            Micro-batch size B_mu.
        """
    stages     : Tuple[Stage, ...]
    micro_batch: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def devices(self) -> Tuple[int, ...]:
        return tuple(stage.device_id for stage in self.stages)

    def follows(self, sequence: Sequence[int]) -> bool:
        """True if the stage devices appear in ``sequence`` order."""
        position = {device: i for i, device in enumerate(sequence)}
        if any(device not in position for device in self.devices):
            return False
        indices = [position[device] for device in self.devices]
        return all(a < b for a, b in zip(indices, indices[1:]))

    def violations(self, n_layers: int) -> List[str]:
        """Names of the Schedule invariants this schedule violates."""
        problems = list()
        if self.micro_batch < 1:
            problems.append("micro_batch must be >= 1")
        if not self.stages:
            problems.append("schedule has no stages")
            return problems

        expected = 0
        for stage in self.stages:
            if stage.start_idx != expected or stage.end_idx < stage.start_idx:
                problems.append(
                    "stage ranges must be contiguous and non-empty (stage {}..{})"
                    .format(stage.start_idx, stage.end_idx)
                )
                break
            expected = stage.end_idx + 1
        else:
            if expected != n_layers:
                problems.append(
                    "stages cover [0, {}) but the order has {} layers".format(expected, n_layers)
                )

        if len(set(self.devices)) != len(self.devices):
            problems.append("device used by more than one stage: {}".format(list(self.devices)))
        return problems


@dataclass(frozen=True)
class StageTiming:
    device_id: int
    t_comp   : float
    t_comm   : float
    t_exec   : float


@dataclass(frozen=True)
class ScheduleEvaluation:
    """Analytic cost of a schedule."""
    per_stage                    : Tuple[StageTiming, ...]
    t_overall                    : float
    sigma                        : float
    throughput_microbatches_per_s: float
    throughput_samples_per_s     : float
    micro_batch                  : int

    @property
    def devices_used(self) -> int:
        return len(self.per_stage)


########################################################################
#                              Cost model                              #
########################################################################

def stage_compute_time(layers: Sequence[int], device_id: int, profiles: ProfileMatrix) -> float:
    """Sum of the processing times of ``layers`` on ``device_id``."""
    total = 0.0
    for layer in layers:
        total += profiles.get(layer, device_id)
    return total


def stage_comm_time(
        prev_last_layer: Optional[LayerNode],
        b_mu           : int,
        sender         : Optional[DeviceSpec],
        receiver       : DeviceSpec,
    ) -> float:
    """Time to receive the cut tensor feeding a stage.

        Returns 0 for the pipeline entry (no upstream layer or sender) and when
        sender and receiver are the same device.
        """
    if prev_last_layer is None or sender is None:
        return 0.0
    if sender.device_id == receiver.device_id:
        return 0.0
    return prev_last_layer.output_bytes * b_mu / link_bandwidth(sender, receiver)


def load_balance_sigma(exec_times: Sequence[float]) -> float:
    """Population standard deviation of per-device execution times."""
    if len(exec_times) == 0:
        raise ScheduleError("load balance of an empty device set is undefined")
    return float(np.std(np.asarray(exec_times, dtype=float)))


def evaluate_schedule(
        instance: WorkloadInstance,
        order   : ExecutionOrder,
        schedule: Schedule,
        cluster : ClusterSpec,
        sequence: Optional[Sequence[int]] = None,
    ) -> ScheduleEvaluation:
    """Evaluate ``schedule`` along ``order`` on ``cluster``.

        Parameters
        ----------
        instance : WorkloadInstance
            Graph and profiles.

        order : tuple of int
            Topological execution order.

        schedule : Schedule
            Stages over ``order``.

        cluster : ClusterSpec
            Devices and bandwidths.

        sequence : list of int, optional
            If given, stage devices must follow this pipeline sequence.

        Returns
        -------
        evaluation : ScheduleEvaluation
        """
    graph = instance.graph
    if not is_topological(graph, order):
        raise ScheduleError("execution order is not a topological order of the graph")

    problems = schedule.violations(len(order))
    if sequence is not None and not schedule.follows(sequence):
        problems.append(
            "stage devices {} do not follow pipeline sequence {}"
            .format(list(schedule.devices), list(sequence))
        )
    if problems:
        raise ScheduleError("invalid schedule: {}".format("; ".join(problems)))

    per_stage = list()
    previous  = None
    for stage in schedule.stages:
        device = cluster.device(stage.device_id)
        t_comp = stage_compute_time(stage.layers(order), stage.device_id, instance.profiles)

        if previous is None:
            t_comm = 0.0
        else:
            t_comm = stage_comm_time(
                graph.layer(order[previous.end_idx]),
                schedule.micro_batch,
                cluster.device(previous.device_id),
                device,
            )

        per_stage.append(StageTiming(stage.device_id, t_comp, t_comm, max(t_comp, t_comm)))
        previous = stage

    t_overall = max(timing.t_exec for timing in per_stage)
    rate      = 1.0 / t_overall if t_overall > 0 else math.inf

    return ScheduleEvaluation(
        per_stage                     = tuple(per_stage),
        t_overall                     = t_overall,
        sigma                         = load_balance_sigma([timing.t_exec for timing in per_stage]),
        throughput_microbatches_per_s = rate,
        throughput_samples_per_s      = schedule.micro_batch * rate,
        micro_batch                   = schedule.micro_batch,
    )


########################################################################
#                                 I/O                                  #
########################################################################

def evaluation_frame(evaluation: ScheduleEvaluation) -> pd.DataFrame:
    """Per-stage rows followed by a summary row, ready for ``to_csv``."""
    rows = [
        {
            "stage_idx": k,
            "device"   : timing.device_id,
            "t_comp"   : timing.t_comp,
            "t_comm"   : timing.t_comm,
            "t_exec"   : timing.t_exec,
        } for k, timing in enumerate(evaluation.per_stage)
    ]
    rows.append({
        "stage_idx"           : "summary",
        "t_overall"           : evaluation.t_overall,
        "sigma"               : evaluation.sigma,
        "throughput_mb_s"     : evaluation.throughput_microbatches_per_s,
        "throughput_samples_s": evaluation.throughput_samples_per_s,
    })
    columns = [
        "stage_idx", "device", "t_comp", "t_comm", "t_exec",
        "t_overall", "sigma", "throughput_mb_s", "throughput_samples_s",
    ]
    return pd.DataFrame(rows, columns=columns)


def schedule_to_dict(order: ExecutionOrder, schedule: Schedule, t_max: float) -> dict:
    return {
        "order"  : list(order),
        "stages" : [
            {"device": stage.device_id, "layers": list(stage.layers(order))}
            for stage in schedule.stages
        ],
        "b_mu"   : schedule.micro_batch,
        "t_max_s": t_max,
    }


def schedule_from_dict(data: dict) -> Tuple[ExecutionOrder, Schedule, float]:
    try:
        order  = tuple(int(layer) for layer in data["order"])
        stages = list()
        start  = 0
        for entry in data["stages"]:
            layers = [int(layer) for layer in entry["layers"]]
            if tuple(layers) != order[start:start + len(layers)]:
                raise ScheduleError(
                    "stage layers {} are not a contiguous run of the order".format(layers)
                )
            stages.append(Stage(start, start + len(layers) - 1, int(entry["device"])))
            start += len(layers)
        schedule = Schedule(tuple(stages), int(data["b_mu"]))
        t_max    = float(data["t_max_s"])
    except (KeyError, TypeError, ValueError) as e:
        raise ScheduleError("malformed schedule file: {}".format(e)) from None
    return order, schedule, t_max


def save_schedule(order: ExecutionOrder, schedule: Schedule, t_max: float, path):
    with open(path, "w") as outfile:
        json.dump(schedule_to_dict(order, schedule, t_max), outfile, indent=2)
        outfile.write("\n")


def load_schedule(path) -> Tuple[ExecutionOrder, Schedule, float]:
    with open(path) as infile:
        return schedule_from_dict(json.load(infile))
