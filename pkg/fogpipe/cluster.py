import itertools
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib   import Path
from typing import Dict, Iterator, List, Optional, Tuple

from fogpipe.exceptions import ClusterError
from fogpipe.logger     import get_logger

logger = get_logger("cluster")

# Decimal units: 1 Gbps = 1.25e8 bytes/s, 1 GB = 1e9 bytes
BYTES_PER_GBPS = 1.25e8
BYTES_PER_GB   = 1e9

# Largest cluster for which every pipeline sequence is enumerated
MAX_EXHAUSTIVE_DEVICES = 8

# Bundled fixtures
TESTBED_FIXTURE     = "fog_testbed.json"
MEMBERSHIPS_FIXTURE = "testbed_clusters.json"


@dataclass(frozen=True)
class DeviceSpec:
    """A heterogeneous fog device.

        Parameters
        ----------
        device_id : int
            Identifier used in profiles and schedules.

        name : string
            Human readable label.

        mem_capacity_bytes : float
            Available memory in bytes.

        uplink_bps : float
            Up-link bandwidth in bytes/second.

        downlink_bps : float
            Down-link bandwidth in bytes/second.

        speed : float, optional
            Relative compute speed (fastest device = 1.0), used to scale
            synthetic profiles.

        cpu : string, optional
            CPU label, informative only.
        """
    device_id         : int
    name              : str
    mem_capacity_bytes: float
    uplink_bps        : float
    downlink_bps      : float
    speed             : Optional[float] = None
    cpu               : Optional[str]   = None

    def __post_init__(self):
        if self.uplink_bps <= 0 or self.downlink_bps <= 0:
            raise ClusterError(
                "Device {}: bandwidths must be positive".format(self.device_id)
            )
        if self.mem_capacity_bytes <= 0:
            raise ClusterError(
                "Device {}: memory capacity must be positive".format(self.device_id)
            )
        if self.speed is not None and self.speed <= 0:
            raise ClusterError(
                "Device {}: speed must be positive".format(self.device_id)
            )


@dataclass(frozen=True)
class ClusterSpec:
    """Heterogeneous device set with the pipeline sequence the DP consumes."""
    devices          : Tuple[DeviceSpec, ...]
    pipeline_sequence: Tuple[int, ...]                       = ()
    jitter_ms        : Optional[Tuple[float, float]]         = None
    name             : str                                   = "cluster"
    _index           : Dict[int, DeviceSpec] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.devices:
            raise ClusterError("no devices")

        index = {}
        for device in self.devices:
            if device.device_id in index:
                raise ClusterError("duplicate device id {}".format(device.device_id))
            index[device.device_id] = device
        object.__setattr__(self, "_index", index)

        if not self.pipeline_sequence:
            object.__setattr__(self, "pipeline_sequence", tuple(index))
        else:
            object.__setattr__(self, "pipeline_sequence", tuple(self.pipeline_sequence))

        sequence = self.pipeline_sequence
        if len(set(sequence)) != len(sequence) or not set(sequence) <= set(index):
            raise ClusterError(
                "pipeline_sequence {} is not a permutation of a subset of devices"
                .format(list(sequence))
            )

        if self.jitter_ms is not None:
            lo, hi = self.jitter_ms
            if not 0 <= lo <= hi:
                raise ClusterError("invalid jitter range [{}, {}]".format(lo, hi))
            object.__setattr__(self, "jitter_ms", (float(lo), float(hi)))

    ########################################################################
    #                               Lookups                                #
    ########################################################################

    def device(self, device_id: int) -> DeviceSpec:
        """Return the device with the given id."""
        try:
            return self._index[device_id]
        except KeyError:
            raise ClusterError("unknown device {}".format(device_id)) from None

    @property
    def device_ids(self) -> List[int]:
        return [device.device_id for device in self.devices]

    def subset(self, device_ids, name=None) -> "ClusterSpec":
        """Return a cluster restricted to ``device_ids`` (in that order)."""
        device_ids = list(device_ids)
        return ClusterSpec(
            devices           = tuple(self.device(i) for i in device_ids),
            pipeline_sequence = tuple(device_ids),
            jitter_ms         = self.jitter_ms,
            name              = name or self.name,
        )


########################################################################
#                              Operations                              #
########################################################################

def link_bandwidth(sender: DeviceSpec, receiver: DeviceSpec) -> float:
    """Usable bandwidth from ``sender`` to ``receiver`` in bytes/second.

        The link is bounded by the sender's up-link and the receiver's
        down-link. Callers must short-circuit a device talking to itself to
        zero communication instead of calling this function.
        """
    if sender.device_id == receiver.device_id:
        raise ClusterError(
            "link_bandwidth called for device {} with itself".format(sender.device_id)
        )
    return min(sender.uplink_bps, receiver.downlink_bps)


def scale_bandwidth(cluster: ClusterSpec, factor: float) -> ClusterSpec:
    """Return ``cluster`` with every up/down-link multiplied by ``factor``."""
    if not factor > 0:
        raise ClusterError("bandwidth scale factor must be positive, got {}".format(factor))

    devices = tuple(
        replace(
            device,
            uplink_bps   = device.uplink_bps   * factor,
            downlink_bps = device.downlink_bps * factor,
        ) for device in cluster.devices
    )
    return replace(cluster, devices=devices)


def device_orders(cluster: ClusterSpec) -> Iterator[Tuple[int, ...]]:
    """Yield every pipeline sequence over all devices, lexicographically."""
    if len(cluster.devices) > MAX_EXHAUSTIVE_DEVICES:
        raise ClusterError(
            "exhaustive device orders limited to {} devices, cluster has {}"
            .format(MAX_EXHAUSTIVE_DEVICES, len(cluster.devices))
        )
    return itertools.permutations(sorted(cluster.device_ids))


########################################################################
#                                 I/O                                  #
########################################################################

def _parse_device(entry) -> DeviceSpec:
    try:
        device_id = int(entry["id"])
        if "uplink_gbps" in entry or "downlink_gbps" in entry:
            uplink   = float(entry.get("uplink_gbps"  , entry.get("bandwidth_gbps")))
            downlink = float(entry.get("downlink_gbps", entry.get("bandwidth_gbps")))
        else:
            # A single value describes a symmetric link
            uplink = downlink = float(entry["bandwidth_gbps"])
        mem_gb = float(entry["mem_gb"])
    except (KeyError, TypeError, ValueError) as e:
        raise ClusterError("malformed device entry {}: {}".format(entry, e)) from None

    return DeviceSpec(
        device_id          = device_id,
        name               = str(entry.get("name", device_id)),
        mem_capacity_bytes = mem_gb   * BYTES_PER_GB,
        uplink_bps         = uplink   * BYTES_PER_GBPS,
        downlink_bps       = downlink * BYTES_PER_GBPS,
        cpu                = entry.get("cpu"),
        speed              = entry.get("speed"),
    )


def cluster_from_dict(data, name="cluster") -> ClusterSpec:
    """Build a ClusterSpec from the cluster file's JSON document."""
    entries = data.get("devices") or []
    if not entries:
        raise ClusterError("no devices")

    devices = [_parse_device(entry) for entry in entries]

    # Relative speed from reference single-device throughput, if present
    reference = [entry.get("single_device_samples_s") for entry in entries]
    if all(r is not None for r in reference):
        fastest = max(reference)
        devices = [
            replace(device, speed=device.speed or r / fastest)
            for device, r in zip(devices, reference)
        ]

    jitter = data.get("jitter_ms")
    if jitter is not None:
        if len(jitter) != 2:
            raise ClusterError("invalid jitter range {}".format(jitter))
        jitter = (float(jitter[0]), float(jitter[1]))

    return ClusterSpec(
        devices           = tuple(devices),
        pipeline_sequence = tuple(int(i) for i in data.get("pipeline_sequence", ())),
        jitter_ms         = jitter,
        name              = data.get("name", name),
    )


def load_cluster(path) -> ClusterSpec:
    """Load and validate a cluster file.

        Parameters
        ----------
        path : string or Path
            JSON file with ``devices`` (id, name, mem_gb, bandwidth_gbps),
            optional ``pipeline_sequence`` and optional ``jitter_ms``.

        Returns
        -------
        cluster : ClusterSpec
        """
    with open(path) as infile:
        data = json.load(infile)

    cluster = cluster_from_dict(data, name=Path(path).stem)
    logger.debug("Loaded cluster {} with {} devices".format(cluster.name, len(cluster.devices)))
    return cluster


def load_cluster_memberships(path, base: ClusterSpec) -> Dict[str, ClusterSpec]:
    """Load named sub-clusters of ``base``.

        The file maps cluster names to lists of device names or ids, e.g.
        ``{"clusters": {"One": ["A", "B", "C"], ...}}``.
        """
    with open(path) as infile:
        data = json.load(infile)

    by_name = {device.name: device.device_id for device in base.devices}

    result = {}
    for name, members in data["clusters"].items():
        ids = []
        for member in members:
            if isinstance(member, str) and member in by_name:
                ids.append(by_name[member])
            else:
                ids.append(base.device(int(member)).device_id)
        result[name] = base.subset(ids, name=name)
    return result


def fixture_path(name):
    """Return a path to one of the bundled fixture files."""
    return resources.files("fogpipe").joinpath("fixtures", name)


def testbed_cluster() -> ClusterSpec:
    """The six heterogeneous fog devices of the reference testbed."""
    with resources.as_file(fixture_path(TESTBED_FIXTURE)) as path:
        return load_cluster(path)


def testbed_clusters() -> Dict[str, ClusterSpec]:
    """The ten reference cluster memberships over the six devices."""
    base = testbed_cluster()
    with resources.as_file(fixture_path(MEMBERSHIPS_FIXTURE)) as path:
        return load_cluster_memberships(path, base)
