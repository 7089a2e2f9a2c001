from .cluster   import ClusterSpec, DeviceSpec, load_cluster, testbed_cluster, testbed_clusters
from .nsga      import GaParams, GaResult, run_ga_dphds
from .partition import best_over_device_orders, brute_force_partition, dp_partition
from .simulator import SimReport, equal_partition_baseline, simulate
from .timing    import Schedule, ScheduleEvaluation, Stage, evaluate_schedule
from .workload  import (LayerNode, ModelGraph, ProfileMatrix, WorkloadInstance, gen_multigran_dag,
                        gen_random_dag, load_workload)

__version__ = "0.1.0"
