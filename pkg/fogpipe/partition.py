"""Min-max contiguous stage partitioning.

Given a fixed execution order and a device pipeline sequence, the dynamic
program fills ``t[i][j]``: the smallest achievable bottleneck when the first
``i`` layers of the order are split over the first ``j`` devices of the
sequence, every one of those devices holding at least one layer::

    t[i][j] = min_{k < i} max(t[k][j-1], T_stage(k..i-1, D_j))

where ``T_stage`` is the larger of the stage's summed processing time on
``D_j`` and the time to receive the output of layer ``k-1`` from ``D_{j-1}``.
The answer is the minimum of ``t[L][j]`` over all ``j``, so pipelines may use
fewer devices than the sequence provides.
"""
import itertools
import math
from dataclasses import dataclass
from typing      import Dict, Optional, Sequence, Tuple

import numpy as np

from fogpipe.cluster    import ClusterSpec, MAX_EXHAUSTIVE_DEVICES, link_bandwidth
from fogpipe.exceptions import ClusterError, InfeasibleError, ScheduleError
from fogpipe.logger     import get_logger
from fogpipe.timing     import ExecutionOrder, Schedule, Stage, stage_comm_time, stage_compute_time
from fogpipe.workload   import WorkloadInstance

logger = get_logger("partition")

# Cost guard of the brute-force oracle
BRUTE_FORCE_MAX_LAYERS  = 12
BRUTE_FORCE_MAX_DEVICES = 4


@dataclass(frozen=True)
class DpTable:
    """Filled DP table.

        Parameters
        ----------
        t : np.ndarray of shape=(L+1, M+1)
            ``t[i, j]`` best bottleneck of the first i layers on the first j
            devices, ``inf`` where infeasible.

        split : np.ndarray of shape=(L+1, M+1)
            Backpointer ``k`` achieving ``t[i, j]``.

        sequence : tuple of int
            Device sequence the columns refer to.
        """
    t       : np.ndarray
    split   : np.ndarray
    sequence: Tuple[int, ...]

    def best(self) -> Tuple[int, float]:
        """Smallest device count j and its value ``min_j t[L, j]``."""
        finals = self.t[-1, 1:]
        j      = int(np.argmin(finals))
        return j + 1, float(finals[j])


class StageCostModel(object):
    """Stage costs of one (instance, order, B_mu, cluster) combination.

        Precomputes, for every device, the matrix of stage compute times
        ``comp[k, i]`` (layers ``k..i-1`` of the order) with infeasible or
        empty stages set to ``inf``. Sums are accumulated left to right, the
        same way ``stage_compute_time`` adds them, so DP values match a
        re-evaluation of the backtracked schedule bit for bit.
        """

    def __init__(self, instance: WorkloadInstance, order: ExecutionOrder,
                 cluster: ClusterSpec, b_mu: int, memory_check: bool = True):
        if len(order) == 0:
            raise ScheduleError("cannot partition an empty execution order")
        if b_mu < 1:
            raise ScheduleError("micro-batch size must be >= 1, got {}".format(b_mu))

        self.instance     = instance
        self.order        = tuple(order)
        self.cluster      = cluster
        self.b_mu         = b_mu
        self.memory_check = memory_check
        self.n_layers     = len(order)

        graph = instance.graph
        # Output bytes of the layer preceding each cut position k (k >= 1)
        self.cut_bytes = np.zeros(self.n_layers + 1)
        for k in range(1, self.n_layers + 1):
            self.cut_bytes[k] = graph.layer(self.order[k - 1]).output_bytes

        self._memory = self._prefix_matrix(
            np.asarray([graph.layer(layer).mem_bytes for layer in self.order])
        )
        self._comp  : Dict[int, np.ndarray]                          = dict()
        self._stage : Dict[Tuple[Optional[int], int], np.ndarray]    = dict()

    def _prefix_matrix(self, values: np.ndarray) -> np.ndarray:
        """``m[k, i] = values[k] + ... + values[i-1]`` for i > k, else inf."""
        n      = self.n_layers
        matrix = np.full((n + 1, n + 1), np.inf)
        for k in range(n):
            matrix[k, k + 1:] = np.cumsum(values[k:])
        return matrix

    def compute(self, device_id: int) -> np.ndarray:
        if device_id not in self._comp:
            device = self.cluster.device(device_id)
            comp   = self._prefix_matrix(self.instance.profiles.vector(self.order, device_id))
            if self.memory_check:
                comp[self._memory > device.mem_capacity_bytes] = np.inf
            self._comp[device_id] = comp
        return self._comp[device_id]

    def stage(self, prev_device: Optional[int], device_id: int) -> np.ndarray:
        """``T_stage[k, i]`` for a stage on ``device_id`` fed by ``prev_device``."""
        key = (prev_device, device_id)
        if key not in self._stage:
            comp = self.compute(device_id)
            if prev_device is None or prev_device == device_id:
                comm = np.zeros(self.n_layers + 1)
            else:
                bandwidth = link_bandwidth(
                    self.cluster.device(prev_device), self.cluster.device(device_id)
                )
                comm = self.cut_bytes * self.b_mu / bandwidth
            self._stage[key] = np.maximum(comp, comm[:, None])
        return self._stage[key]

    def column(self, t_prev: np.ndarray, prev_device: Optional[int], device_id: int):
        """One DP column: ``(t[:, j], split[:, j])`` from ``t[:, j-1]``."""
        candidates = np.maximum(t_prev[:, None], self.stage(prev_device, device_id))
        split      = np.argmin(candidates, axis=0)
        return candidates[split, np.arange(self.n_layers + 1)], split

    def first_column(self) -> np.ndarray:
        t0    = np.full(self.n_layers + 1, np.inf)
        t0[0] = 0.0
        return t0


def dp_table(model: StageCostModel, device_sequence: Sequence[int]) -> DpTable:
    """Fill the DP table of ``model`` over ``device_sequence``."""
    sequence = tuple(device_sequence)
    if not sequence:
        raise ScheduleError("device sequence must not be empty")
    if len(set(sequence)) != len(sequence):
        raise ScheduleError("device sequence {} repeats a device".format(list(sequence)))

    n     = model.n_layers
    t     = np.full((n + 1, len(sequence) + 1), np.inf)
    split = np.zeros((n + 1, len(sequence) + 1), dtype=int)
    t[:, 0] = model.first_column()

    prev = None
    for j, device in enumerate(sequence, start=1):
        t[:, j], split[:, j] = model.column(t[:, j - 1], prev, device)
        prev = device

    return DpTable(t, split, sequence)


def backtrack(table: DpTable, n_devices: int, b_mu: int) -> Schedule:
    """Recover the stages achieving ``table.t[L, n_devices]``."""
    stages = list()
    i      = table.t.shape[0] - 1
    for j in range(n_devices, 0, -1):
        k = int(table.split[i, j])
        stages.append(Stage(k, i - 1, table.sequence[j - 1]))
        i = k
    assert i == 0, "backtracking must end at the first layer"
    return Schedule(tuple(reversed(stages)), b_mu)


def dp_partition(
        instance       : WorkloadInstance,
        order          : ExecutionOrder,
        device_sequence: Sequence[int],
        b_mu           : int,
        cluster        : ClusterSpec,
        memory_check   : bool = True,
    ) -> Tuple[Schedule, float]:
    """Min-max optimal contiguous partition of ``order`` over a device prefix.

        Parameters
        ----------
        instance : WorkloadInstance
            Graph and profiles.

        order : tuple of int
            Topological execution order.

        device_sequence : list of int
            Pipeline sequence D_1..D_M; the schedule uses a prefix of it.

        b_mu : int
            Micro-batch size.

        cluster : ClusterSpec
            Device memory and bandwidths.

        memory_check : boolean, default=True
            If True, stages exceeding the device's memory cost ``inf``.

        Returns
        -------
        schedule : Schedule
            Backtracked optimal schedule (smallest split point on ties).

        t_max : float
            Its bottleneck stage time.
        """
    model = StageCostModel(instance, order, cluster, b_mu, memory_check)
    table = dp_table(model, device_sequence)
    n_devices, t_max = table.best()

    if math.isinf(t_max):
        raise InfeasibleError(
            "no feasible partition of {} layers over devices {}"
            .format(len(order), list(device_sequence))
        )
    return backtrack(table, n_devices, b_mu), t_max


def brute_force_partition(
        instance       : WorkloadInstance,
        order          : ExecutionOrder,
        device_sequence: Sequence[int],
        b_mu           : int,
        cluster        : ClusterSpec,
        memory_check   : bool = True,
    ) -> Tuple[Schedule, float]:
    """Enumerate every contiguous partition into 1..M stages (test oracle)."""
    n, m = len(order), len(device_sequence)
    if n == 0:
        raise ScheduleError("cannot partition an empty execution order")
    if n > BRUTE_FORCE_MAX_LAYERS or m > BRUTE_FORCE_MAX_DEVICES:
        raise ScheduleError(
            "brute force limited to {} layers and {} devices, got {} and {}"
            .format(BRUTE_FORCE_MAX_LAYERS, BRUTE_FORCE_MAX_DEVICES, n, m)
        )

    graph = instance.graph
    best  = (math.inf, None)

    for n_stages in range(1, min(n, m) + 1):
        for cuts in itertools.combinations(range(1, n), n_stages - 1):
            bounds = (0,) + cuts + (n,)
            cost   = 0.0
            for s in range(n_stages):
                layers = order[bounds[s]:bounds[s + 1]]
                device = cluster.device(device_sequence[s])
                if memory_check and sum(graph.layer(l).mem_bytes for l in layers) > device.mem_capacity_bytes:
                    cost = math.inf
                    break
                t_comp = stage_compute_time(layers, device.device_id, instance.profiles)
                t_comm = stage_comm_time(
                    graph.layer(order[bounds[s] - 1]) if s else None,
                    b_mu,
                    cluster.device(device_sequence[s - 1]) if s else None,
                    device,
                )
                cost = max(cost, t_comp, t_comm)
            if cost < best[0]:
                best = (cost, bounds)

    t_max, bounds = best
    if bounds is None:
        raise InfeasibleError("no feasible partition")

    stages = tuple(
        Stage(bounds[s], bounds[s + 1] - 1, device_sequence[s]) for s in range(len(bounds) - 1)
    )
    return Schedule(stages, b_mu), t_max


def best_over_device_orders(
        instance    : WorkloadInstance,
        order       : ExecutionOrder,
        cluster     : ClusterSpec,
        b_mu        : int,
        samples     : Optional[int] = None,
        seed        : int           = 0,
        memory_check: bool          = True,
    ) -> Tuple[Tuple[int, ...], Schedule, float]:
    """Best pipeline sequence for a fixed order.

        Parameters
        ----------
        samples : int, optional
            If None, scan every permutation of the cluster's devices (at most
            8 devices). Otherwise evaluate ``samples`` seeded random
            permutations.

        Returns
        -------
        sequence : tuple of int
            Argmin pipeline sequence, lexicographically smallest on ties.

        schedule : Schedule

        t_max : float
        """
    model   = StageCostModel(instance, order, cluster, b_mu, memory_check)
    devices = sorted(cluster.device_ids)

    if samples is None:
        if len(devices) > MAX_EXHAUSTIVE_DEVICES:
            raise ClusterError(
                "exhaustive device orders limited to {} devices; pass a sample count"
                .format(MAX_EXHAUSTIVE_DEVICES)
            )
        best_value, best_sequence = _scan_prefixes(model, devices)
    else:
        rng        = np.random.default_rng(seed)
        candidates = {tuple(int(d) for d in rng.permutation(devices)) for _ in range(samples)}
        best_value, best_sequence = math.inf, None
        for sequence in sorted(candidates):
            _, value = dp_table(model, sequence).best()
            if value < best_value or best_sequence is None:
                best_value, best_sequence = value, sequence

    if math.isinf(best_value):
        raise InfeasibleError("no feasible partition over any device order")

    table = dp_table(model, best_sequence)
    n_devices, t_max = table.best()
    return best_sequence, backtrack(table, n_devices, b_mu), t_max


def _scan_prefixes(model: StageCostModel, devices):
    """Depth-first scan of all permutations sharing DP columns by prefix.

        Visits permutations in lexicographic order and only replaces the
        incumbent on strict improvement.
        """
    best = [math.inf, None]
    last = model.n_layers

    def visit(prefix, column, along):
        remaining = [d for d in devices if d not in prefix]
        if not remaining:
            if along < best[0] or best[1] is None:
                best[0], best[1] = along, tuple(prefix)
            return
        prev = prefix[-1] if prefix else None
        for device in remaining:
            t_next, _ = model.column(column, prev, device)
            visit(prefix + [device], t_next, min(along, float(t_next[last])))

    visit([], model.first_column(), math.inf)
    return best[0], best[1]
