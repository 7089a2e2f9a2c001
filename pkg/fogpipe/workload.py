import json
from dataclasses import dataclass
from functools   import cached_property
from typing      import Dict, FrozenSet, List, Optional, Sequence, Tuple

import networkx as nx
import numpy    as np

from fogpipe.cluster    import ClusterSpec
from fogpipe.exceptions import GraphError, ScheduleError
from fogpipe.logger     import get_logger

logger = get_logger("workload")


########################################################################
#                             Domain types                             #
########################################################################

@dataclass(frozen=True)
class LayerNode:
    """A profiled inference layer.

        Parameters
        ----------
        layer_id : int
            0-based index, unique within a graph.

        name : string
            Label of the layer.

        mem_bytes : float
            Memory consumed by the layer.

        input_bytes : float
            Size of the layer's input tensor per sample.

        output_bytes : float
            Size of the layer's output tensor per sample.
        """
    layer_id    : int
    name        : str
    mem_bytes   : float = 0.0
    input_bytes : float = 0.0
    output_bytes: float = 0.0


@dataclass(frozen=True)
class ModelGraph:
    """The DAG of input-output dependencies between layers.

        A ModelGraph may be invalid (e.g. cyclic); use ``validate_graph`` to
        obtain the list of violations.
        """
    layers: Tuple[LayerNode, ...]
    edges : FrozenSet[Tuple[int, int]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "edges" , frozenset((int(u), int(v)) for u, v in self.edges))

    @cached_property
    def by_id(self) -> Dict[int, LayerNode]:
        return {layer.layer_id: layer for layer in self.layers}

    @cached_property
    def digraph(self) -> nx.DiGraph:
        """networkx view of the graph (dangling endpoints are added as nodes)."""
        graph = nx.DiGraph()
        graph.add_nodes_from(layer.layer_id for layer in self.layers)
        graph.add_edges_from(sorted(self.edges))
        return graph

    @cached_property
    def descendants(self) -> Dict[int, FrozenSet[int]]:
        """Layers reachable from each layer by a directed path."""
        return {
            node: frozenset(nx.descendants(self.digraph, node))
            for node in self.digraph.nodes
        }

    def reachable(self, u: int, v: int) -> bool:
        """True if there is a directed path between u and v, either way."""
        return v in self.descendants[u] or u in self.descendants[v]

    def layer(self, layer_id: int) -> LayerNode:
        try:
            return self.by_id[layer_id]
        except KeyError:
            raise GraphError("unknown layer {}".format(layer_id)) from None

    def __len__(self):
        return len(self.layers)


class ProfileMatrix(object):
    """Processing time of every layer on every device.

        Parameters
        ----------
        seconds : dict
            Mapping ``(layer_id, device_id) -> seconds``.
        """

    def __init__(self, seconds: Dict[Tuple[int, int], float]):
        self.seconds = {(int(l), int(d)): float(s) for (l, d), s in seconds.items()}

        negative = [key for key, value in self.seconds.items() if value < 0]
        if negative:
            raise ScheduleError("negative processing times for {}".format(negative))

    def get(self, layer_id: int, device_id: int) -> float:
        """Processing time of ``layer_id`` on ``device_id`` in seconds."""
        try:
            return self.seconds[layer_id, device_id]
        except KeyError:
            raise ScheduleError(
                "missing profile entry for layer {} on device {}".format(layer_id, device_id)
            ) from None

    def vector(self, order: Sequence[int], device_id: int) -> np.ndarray:
        """Processing times of ``order`` on ``device_id`` as an array."""
        return np.asarray([self.get(layer, device_id) for layer in order], dtype=float)

    @property
    def layers(self):
        return sorted({layer for layer, _ in self.seconds})

    @property
    def devices(self):
        return sorted({device for _, device in self.seconds})

    def covers(self, layer_ids, device_ids) -> bool:
        """True if exactly the pairs ``layer_ids x device_ids`` are profiled."""
        expected = {(l, d) for l in layer_ids for d in device_ids}
        return expected == set(self.seconds)

    def __eq__(self, other):
        return isinstance(other, ProfileMatrix) and self.seconds == other.seconds

    def __repr__(self):
        return "ProfileMatrix({} layers x {} devices)".format(len(self.layers), len(self.devices))


@dataclass(frozen=True)
class WorkloadInstance:
    """A layer graph together with its profiles on a cluster."""
    graph      : ModelGraph
    profiles   : ProfileMatrix
    cluster_ref: Optional[str] = None

    def __post_init__(self):
        if not self.profiles.covers(self.graph.by_id, self.profiles.devices):
            raise ScheduleError(
                "profiles do not cover every (layer, device) pair of the instance"
            )

    @property
    def device_ids(self) -> List[int]:
        return self.profiles.devices

    def restrict(self, cluster: ClusterSpec) -> "WorkloadInstance":
        """The same workload profiled only on ``cluster``'s devices."""
        missing = set(cluster.device_ids) - set(self.device_ids)
        if missing:
            raise ScheduleError("no profiles for devices {}".format(sorted(missing)))
        keep = set(cluster.device_ids)
        return WorkloadInstance(
            graph       = self.graph,
            profiles    = ProfileMatrix({
                key: value for key, value in self.profiles.seconds.items() if key[1] in keep
            }),
            cluster_ref = cluster.name,
        )

    def check_cluster(self, cluster: ClusterSpec):
        """Raise ScheduleError unless the profiles cover ``cluster`` exactly."""
        if set(self.device_ids) != set(cluster.device_ids):
            raise ScheduleError(
                "profiles cover devices {} but cluster has {}"
                .format(self.device_ids, sorted(cluster.device_ids))
            )


@dataclass(frozen=True)
class Violation:
    invariant: str
    ids      : Tuple[int, ...] = ()

    def __str__(self):
        return "{}: {}".format(self.invariant, list(self.ids))


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class CostRanges:
    """Uniform sampling bounds for synthetic layer profiles."""
    proc_seconds: Tuple[float, float] = (0.005, 0.05)
    mem_bytes   : Tuple[float, float] = (1e6, 5e7)
    output_bytes: Tuple[float, float] = (1e5, 4e6)
    input_bytes : Tuple[float, float] = (1e5, 4e6)


########################################################################
#                              Validation                              #
########################################################################

def validate_graph(graph: ModelGraph) -> ValidationReport:
    """Check every ModelGraph invariant.

        Returns
        -------
        report : ValidationReport
            ``report.ok`` is True iff no invariant is violated; otherwise
            ``report.violations`` names each failing invariant and the
            offending ids.
        """
    violations = list()

    ids = [layer.layer_id for layer in graph.layers]
    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        violations.append(Violation("duplicate layer id", tuple(duplicates)))

    negative = sorted(
        layer.layer_id for layer in graph.layers
        if min(layer.mem_bytes, layer.input_bytes, layer.output_bytes) < 0
    )
    if negative:
        violations.append(Violation("negative byte size", tuple(negative)))

    known    = set(ids)
    dangling = sorted({
        endpoint for edge in graph.edges for endpoint in edge if endpoint not in known
    })
    if dangling:
        violations.append(Violation("dangling endpoint", tuple(dangling)))

    selfs = sorted(u for u, v in graph.edges if u == v)
    if selfs:
        violations.append(Violation("self edge", tuple(selfs)))

    # Cycle detection over the well-formed part of the graph
    proper = nx.DiGraph()
    proper.add_nodes_from(known)
    proper.add_edges_from(
        (u, v) for u, v in graph.edges if u != v and u in known and v in known
    )
    try:
        cycle = nx.find_cycle(proper)
        violations.append(Violation("cycle", tuple(sorted({u for u, _ in cycle}))))
    except nx.NetworkXNoCycle:
        pass

    if not any(proper.in_degree(n) == 0 for n in proper.nodes):
        violations.append(Violation("no source node"))
    if not any(proper.out_degree(n) == 0 for n in proper.nodes):
        violations.append(Violation("no sink node"))

    return ValidationReport(tuple(violations))


########################################################################
#                          Topological orders                          #
########################################################################

def canonical_topo_order(graph: ModelGraph) -> Tuple[int, ...]:
    """Kahn's algorithm emitting the smallest ready layer id first."""
    try:
        return tuple(nx.lexicographical_topological_sort(graph.digraph))
    except nx.NetworkXUnfeasible:
        raise GraphError("not a DAG") from None


def priority_topo_order(graph: ModelGraph, sequence: Sequence[int]) -> Tuple[int, ...]:
    """Topological order staying as close as possible to ``sequence``.

        Kahn's algorithm where the ready layer with the earliest position in
        ``sequence`` is emitted first. A sequence that is already topological
        is returned unchanged.
        """
    position = {layer: i for i, layer in enumerate(sequence)}
    try:
        return tuple(nx.lexicographical_topological_sort(graph.digraph, key=position.__getitem__))
    except nx.NetworkXUnfeasible:
        raise GraphError("not a DAG") from None


def random_topo_order(graph: ModelGraph, rng: np.random.Generator) -> Tuple[int, ...]:
    """Topological order choosing uniformly among ready layers."""
    digraph   = graph.digraph
    in_degree = dict(digraph.in_degree())
    ready     = sorted(node for node, degree in in_degree.items() if degree == 0)
    order     = list()

    while ready:
        node = ready.pop(int(rng.integers(len(ready))))
        order.append(node)
        for succ in sorted(digraph.successors(node)):
            in_degree[succ] -= 1
            if in_degree[succ] == 0:
                ready.append(succ)

    if len(order) != digraph.number_of_nodes():
        raise GraphError("not a DAG")
    return tuple(order)


def is_topological(graph: ModelGraph, order: Sequence[int]) -> bool:
    """True if ``order`` is a permutation of the layers placing producers first."""
    if sorted(order) != sorted(graph.by_id):
        return False
    position = {layer: i for i, layer in enumerate(order)}
    return all(position[u] < position[v] for u, v in graph.edges)


########################################################################
#                              Generators                              #
########################################################################

def _sample_profiles(graph, cluster, cost_ranges, rng):
    """Sample per-(layer, device) processing times.

        Devices with a relative ``speed`` share one base cost per layer,
        scaled by 1/speed; otherwise every pair is drawn independently.
        """
    lo, hi  = cost_ranges.proc_seconds
    seconds = dict()
    speeds  = [device.speed for device in cluster.devices]

    if all(speed is not None for speed in speeds):
        base = rng.uniform(lo, hi, size=len(graph.layers))
        for layer, cost in zip(graph.layers, base):
            for device in cluster.devices:
                seconds[layer.layer_id, device.device_id] = float(cost / device.speed)
    else:
        draws = rng.uniform(lo, hi, size=(len(graph.layers), len(cluster.devices)))
        for i, layer in enumerate(graph.layers):
            for j, device in enumerate(cluster.devices):
                seconds[layer.layer_id, device.device_id] = float(draws[i, j])

    return ProfileMatrix(seconds)


def _sample_layers(names, edges, cost_ranges, rng):
    """Draw memory and output sizes; inputs are the sum of producer outputs."""
    n       = len(names)
    mem     = rng.uniform(*cost_ranges.mem_bytes   , size=n)
    output  = rng.uniform(*cost_ranges.output_bytes, size=n)
    inlet   = rng.uniform(*cost_ranges.input_bytes , size=n)

    inputs = np.zeros(n)
    has_pred = np.zeros(n, dtype=bool)
    for u, v in sorted(edges):
        inputs[v]   += output[u]
        has_pred[v]  = True
    inputs[~has_pred] = inlet[~has_pred]

    return tuple(
        LayerNode(
            layer_id     = i,
            name         = names[i],
            mem_bytes    = float(mem[i]),
            input_bytes  = float(inputs[i]),
            output_bytes = float(output[i]),
        ) for i in range(n)
    )


def multigran_counts(n_temporal_branches, n_spatial_levels, n_st_blocks, expand_st=False):
    """Closed-form (node count, edge count) of the multi-granular template."""
    per_block = 3 if expand_st else 1
    chains    = n_temporal_branches * n_spatial_levels
    nodes     = 1 + n_temporal_branches * (n_spatial_levels * n_st_blocks * per_block + 1) + 1
    edges     = chains * (n_st_blocks * per_block + 1) + n_temporal_branches
    return nodes, edges


def gen_multigran_dag(
        cluster            : ClusterSpec,
        n_temporal_branches: int        = 3,
        n_spatial_levels   : int        = 3,
        n_st_blocks        : int        = 2,
        expand_st          : bool       = False,
        cost_ranges        : CostRanges = CostRanges(),
        seed               : int        = 0,
    ) -> WorkloadInstance:
    """Synthetic layer DAG shaped like a multi-granular spatio-temporal GCN.

        One source fans out to every temporal branch. Each branch holds
        ``n_spatial_levels`` parallel chains of ``n_st_blocks`` S-T blocks
        that feed one fusion node; all fusion nodes feed a forecasting head.

        Parameters
        ----------
        cluster : ClusterSpec
            Devices the sampled profiles must cover.

        n_temporal_branches, n_spatial_levels, n_st_blocks : int
            Template shape, each >= 1.

        expand_st : boolean, default=False
            If True, each S-T block becomes a temporal-conv -> graph-conv ->
            temporal-attention chain.

        cost_ranges : CostRanges
            Uniform sampling bounds for times and byte sizes.

        seed : int
            Seed making the instance reproducible.

        Returns
        -------
        instance : WorkloadInstance
        """
    if min(n_temporal_branches, n_spatial_levels, n_st_blocks) < 1:
        raise GraphError("template counts must be >= 1")

    block_parts = ("tconv", "gconv", "tatt") if expand_st else ("st",)
    names       = ["input"]
    edges       = set()
    fusions     = list()

    for t in range(n_temporal_branches):
        tails = list()
        for s in range(n_spatial_levels):
            prev = 0
            for b in range(n_st_blocks):
                for part in block_parts:
                    names.append("t{}.s{}.b{}.{}".format(t, s, b, part))
                    node = len(names) - 1
                    edges.add((prev, node))
                    prev = node
            tails.append(prev)

        names.append("t{}.cgf".format(t))
        fusion = len(names) - 1
        edges.update((tail, fusion) for tail in tails)
        fusions.append(fusion)

    names.append("head")
    head = len(names) - 1
    edges.update((fusion, head) for fusion in fusions)

    rng    = np.random.default_rng(seed)
    layers = _sample_layers(names, edges, cost_ranges, rng)
    graph  = ModelGraph(layers, frozenset(edges))

    logger.debug("Generated multigran DAG with {} layers and {} edges".format(len(layers), len(edges)))

    return WorkloadInstance(
        graph       = graph,
        profiles    = _sample_profiles(graph, cluster, cost_ranges, rng),
        cluster_ref = cluster.name,
    )


def gen_random_dag(
        cluster     : ClusterSpec,
        n_layers    : int        = 8,
        edge_density: float      = 0.3,
        cost_ranges : CostRanges = CostRanges(),
        seed        : int        = 0,
    ) -> WorkloadInstance:
    """Random layered DAG: every forward pair of a hidden rank order is an
        edge with probability ``edge_density``; layer ids are shuffled so the
        canonical order is not simply the identity.
        """
    if not 0 <= edge_density <= 1:
        raise GraphError("edge_density must be in [0, 1], got {}".format(edge_density))
    if n_layers < 1:
        raise GraphError("n_layers must be >= 1")

    rng  = np.random.default_rng(seed)
    rank = rng.permutation(n_layers)

    edges = set()
    for i in range(n_layers):
        draws = rng.random(n_layers - i - 1)
        for offset, draw in enumerate(draws):
            if draw < edge_density:
                edges.add((int(rank[i]), int(rank[i + 1 + offset])))

    names  = ["layer{}".format(i) for i in range(n_layers)]
    layers = _sample_layers(names, edges, cost_ranges, rng)
    graph  = ModelGraph(layers, frozenset(edges))

    return WorkloadInstance(
        graph       = graph,
        profiles    = _sample_profiles(graph, cluster, cost_ranges, rng),
        cluster_ref = cluster.name,
    )


########################################################################
#                                 I/O                                  #
########################################################################

def workload_to_dict(instance: WorkloadInstance) -> dict:
    data = {
        "layers": [
            {
                "id"          : layer.layer_id,
                "name"        : layer.name,
                "mem_bytes"   : layer.mem_bytes,
                "input_bytes" : layer.input_bytes,
                "output_bytes": layer.output_bytes,
            } for layer in instance.graph.layers
        ],
        "edges"   : [list(edge) for edge in sorted(instance.graph.edges)],
        "profiles": [
            {"layer": layer, "device": device, "seconds": seconds}
            for (layer, device), seconds in sorted(instance.profiles.seconds.items())
        ],
    }
    if instance.cluster_ref is not None:
        data["cluster_ref"] = instance.cluster_ref
    return data


def workload_from_dict(data: dict) -> WorkloadInstance:
    try:
        layers = tuple(
            LayerNode(
                layer_id     = int(entry["id"]),
                name         = str(entry["name"]),
                mem_bytes    = float(entry["mem_bytes"]),
                input_bytes  = float(entry["input_bytes"]),
                output_bytes = float(entry["output_bytes"]),
            ) for entry in data["layers"]
        )
        edges    = frozenset((int(u), int(v)) for u, v in data["edges"])
        profiles = ProfileMatrix({
            (entry["layer"], entry["device"]): entry["seconds"] for entry in data["profiles"]
        })
    except (KeyError, TypeError, ValueError) as e:
        raise GraphError("malformed workload file: {}".format(e)) from None

    graph  = ModelGraph(layers, edges)
    report = validate_graph(graph)
    if not report.ok:
        raise GraphError(
            "invalid workload graph: {}".format("; ".join(str(v) for v in report.violations))
        )

    return WorkloadInstance(graph, profiles, cluster_ref=data.get("cluster_ref"))


def save_workload(instance: WorkloadInstance, path):
    """Write ``instance`` as a workload JSON file."""
    with open(path, "w") as outfile:
        json.dump(workload_to_dict(instance), outfile, indent=2)
        outfile.write("\n")


def load_workload(path) -> WorkloadInstance:
    """Read and validate a workload JSON file."""
    with open(path) as infile:
        return workload_from_dict(json.load(infile))
