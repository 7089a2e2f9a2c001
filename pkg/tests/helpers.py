"""Small hand-built instances shared by the test modules."""
from fogpipe.cluster  import ClusterSpec, DeviceSpec
from fogpipe.workload import LayerNode, ModelGraph, ProfileMatrix, WorkloadInstance

MB = 1e6


def device(device_id, bandwidth=100 * MB, mem=1e12, name=None):
    return DeviceSpec(device_id, name or "d{}".format(device_id), mem, bandwidth, bandwidth)


def cluster(*devices, name="test"):
    return ClusterSpec(tuple(devices), name=name)


def graph(n_layers, edges=(), outputs=None, mem=None):
    outputs = outputs or [0.0] * n_layers
    mem     = mem     or [0.0] * n_layers
    layers  = tuple(
        LayerNode(i, "l{}".format(i), mem_bytes=mem[i], input_bytes=1 * MB, output_bytes=outputs[i])
        for i in range(n_layers)
    )
    return ModelGraph(layers, frozenset(edges))


def instance(model, seconds):
    """``seconds`` maps device id -> per-layer processing times."""
    return WorkloadInstance(model, ProfileMatrix({
        (layer, device_id): cost
        for device_id, costs in seconds.items()
        for layer, cost in enumerate(costs)
    }))


def three_layer_example():
    """Chain l0 -> l1 -> l2 split {l0, l1}@A and {l2}@B over a 100 MB/s link."""
    model    = graph(3, edges={(0, 1), (1, 2)}, outputs=[0.5 * MB, 1 * MB, 0.2 * MB])
    workload = instance(model, {0: [0.2, 0.3, 1.0], 1: [1.0, 1.0, 0.25]})
    return workload, cluster(device(0, name="A"), device(1, name="B"))


def two_layer_example():
    """Two layers whose cut costs 0.5 s; d0 takes {1, 4} s, d1 {2, 2} s."""
    model    = graph(2, edges={(0, 1)}, outputs=[50 * MB, 1 * MB])
    workload = instance(model, {0: [1.0, 4.0], 1: [2.0, 2.0]})
    return workload, cluster(device(0), device(1))
