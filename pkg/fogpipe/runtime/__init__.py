from .manager import HarnessReport, ManagerParams, manager_run
from .worker  import Worker, worker_run
