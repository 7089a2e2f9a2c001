import configparser
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Tuple

# Default configuration shipped with the package
DEFAULT_CONFIG = "fogpipe.ini"


@dataclass(frozen=True)
class GaDefaults:
    population       : int   = 40
    generations      : int   = 60
    crossover_prob   : float = 0.9
    mutation_prob    : float = 0.2
    device_order_mode: str   = "auto"


@dataclass(frozen=True)
class PipelineDefaults:
    b_mu        : int                 = 16
    microbatches: int                 = 32
    jitter_ms   : Tuple[float, float] = (10.0, 30.0)
    memory_check: bool                = True


@dataclass(frozen=True)
class BoundDefaults:
    delta_s    : float = 0.01
    o_avg_mb   : float = 1.11
    b_good_mbps: float = 200.0
    b_mu       : int   = 16


@dataclass(frozen=True)
class RuntimeDefaults:
    timeout_s              : float = 10.0
    transfer               : str   = "physical"
    declared_bandwidth_gbps: float = 10.0
    profile_reps           : int   = 5
    microbatches           : int   = 20


@dataclass(frozen=True)
class BenchDefaults:
    reps     : int                 = 10
    jitter_ms: Tuple[float, float] = (10.0, 30.0)


@dataclass(frozen=True)
class Config:
    ga       : GaDefaults       = field(default_factory=GaDefaults)
    pipeline : PipelineDefaults = field(default_factory=PipelineDefaults)
    bound    : BoundDefaults    = field(default_factory=BoundDefaults)
    runtime  : RuntimeDefaults  = field(default_factory=RuntimeDefaults)
    bench    : BenchDefaults    = field(default_factory=BenchDefaults)
    log_level: str              = "INFO"


def _range(text):
    lo, hi = (float(x) for x in text.split())
    return lo, hi


def load_config(path: Optional[str] = None) -> Config:
    """Load fogpipe defaults from an INI file.

        Parameters
        ----------
        path : string, optional
            INI file to read. If None, the ``FOGPIPE_CONFIG`` environment
            variable is consulted, then the packaged ``fogpipe.ini``.

        Returns
        -------
        config : Config
            Values read from file, falling back to built-in defaults for any
            missing key.
        """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))

    path = path or os.getenv("FOGPIPE_CONFIG")
    if path is None:
        parser.read_string(
            resources.files("fogpipe").joinpath(DEFAULT_CONFIG).read_text()
        )
    elif not parser.read(path):
        raise OSError("Could not read config file '{}'".format(path))

    ga = GaDefaults(
        population        = parser.getint  ("ga", "population"       , fallback=40),
        generations       = parser.getint  ("ga", "generations"      , fallback=60),
        crossover_prob    = parser.getfloat("ga", "crossover_prob"   , fallback=0.9),
        mutation_prob     = parser.getfloat("ga", "mutation_prob"    , fallback=0.2),
        device_order_mode = parser.get     ("ga", "device_order_mode", fallback="auto"),
    )
    pipeline = PipelineDefaults(
        b_mu         = parser.getint    ("pipeline", "b_mu"        , fallback=16),
        microbatches = parser.getint    ("pipeline", "microbatches", fallback=32),
        jitter_ms    = _range(parser.get("pipeline", "jitter_ms"   , fallback="10 30")),
        memory_check = parser.getboolean("pipeline", "memory_check", fallback=True),
    )
    bound = BoundDefaults(
        delta_s     = parser.getfloat("bound", "delta_s"    , fallback=0.01),
        o_avg_mb    = parser.getfloat("bound", "o_avg_mb"   , fallback=1.11),
        b_good_mbps = parser.getfloat("bound", "b_good_mbps", fallback=200.0),
        b_mu        = parser.getint  ("bound", "b_mu"       , fallback=16),
    )
    runtime = RuntimeDefaults(
        timeout_s               = parser.getfloat("runtime", "timeout_s"              , fallback=10.0),
        transfer                = parser.get     ("runtime", "transfer"               , fallback="physical"),
        declared_bandwidth_gbps = parser.getfloat("runtime", "declared_bandwidth_gbps", fallback=10.0),
        profile_reps            = parser.getint  ("runtime", "profile_reps"           , fallback=5),
        microbatches            = parser.getint  ("runtime", "microbatches"           , fallback=20),
    )
    bench = BenchDefaults(
        reps      = parser.getint    ("bench", "reps"     , fallback=10),
        jitter_ms = _range(parser.get("bench", "jitter_ms", fallback="10 30")),
    )

    return Config(
        ga        = ga,
        pipeline  = pipeline,
        bound     = bound,
        runtime   = runtime,
        bench     = bench,
        log_level = parser.get("logging", "level", fallback="INFO"),
    )
