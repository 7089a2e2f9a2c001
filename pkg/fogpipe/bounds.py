"""Communication-aware lower bound on the scheduler's throughput gain.

Against an equal partition that may cut at the largest output tensor over
the slowest link, a schedule that avoids both gains at least

    gamma >= alpha * beta / (1 + epsilon)

where ``alpha`` is the ratio of the largest to the average layer output,
``beta`` the ratio of a good link floor to the worst link, and ``epsilon``
the residual imbalance ``delta`` relative to the time of one average
transfer over a good link.
"""
import itertools
from dataclasses import asdict, dataclass
from typing      import Optional, Sequence, Tuple

import numpy as np

from fogpipe.cluster  import ClusterSpec, link_bandwidth
from fogpipe.timing   import ScheduleEvaluation
from fogpipe.workload import WorkloadInstance

# epsilon over a full micro-batch transfer, or over a single sample's
BOUND_MODES = ("theorem", "paper_arith")


@dataclass(frozen=True)
class BoundInputs:
    o_max_bytes: float
    o_avg_bytes: float
    b_good_bps : float
    b_bad_bps  : float
    delta_s    : float
    b_mu       : int = 1

    def __post_init__(self):
        if not self.o_max_bytes >= self.o_avg_bytes > 0:
            raise ValueError(
                "need o_max >= o_avg > 0, got o_max={} o_avg={}".format(self.o_max_bytes, self.o_avg_bytes)
            )
        if not self.b_good_bps >= self.b_bad_bps > 0:
            raise ValueError(
                "need b_good >= b_bad > 0, got b_good={} b_bad={}".format(self.b_good_bps, self.b_bad_bps)
            )
        if self.delta_s < 0:
            raise ValueError("delta must be >= 0, got {}".format(self.delta_s))
        if self.b_mu < 1:
            raise ValueError("b_mu must be >= 1, got {}".format(self.b_mu))

    @property
    def alpha(self) -> float:
        return self.o_max_bytes / self.o_avg_bytes

    @property
    def beta(self) -> float:
        return self.b_good_bps / self.b_bad_bps

    @classmethod
    def from_ratios(cls, alpha, beta, delta_s, o_avg_bytes, b_good_bps, b_mu=1) -> "BoundInputs":
        """Inputs reproducing the given ``alpha`` and ``beta``."""
        return cls(
            o_max_bytes = alpha * o_avg_bytes,
            o_avg_bytes = o_avg_bytes,
            b_good_bps  = b_good_bps,
            b_bad_bps   = b_good_bps / beta,
            delta_s     = delta_s,
            b_mu        = b_mu,
        )


@dataclass(frozen=True)
class BoundReport:
    alpha      : float
    beta       : float
    epsilon    : float
    gamma_lower: float
    mode       : str

    def to_dict(self) -> dict:
        return asdict(self)


def tensor_stats(instance: WorkloadInstance) -> Tuple[float, float, float]:
    """Largest and mean layer output in bytes, and their ratio alpha."""
    outputs = np.asarray([layer.output_bytes for layer in instance.graph.layers], dtype=float)
    if outputs.size == 0:
        raise ValueError("alpha undefined for an empty graph")

    o_max, o_avg = float(outputs.max()), float(outputs.mean())
    if o_avg == 0:
        raise ValueError("alpha undefined: every layer output is zero")
    return o_max, o_avg, o_max / o_avg


def throughput_gain_bound(inputs: BoundInputs, mode: str = "theorem") -> BoundReport:
    """Lower bound on the throughput gain over equal partitioning.

        Parameters
        ----------
        inputs : BoundInputs
            Tensor sizes, link floors, residual imbalance and micro-batch size.

        mode : string, default="theorem"
            ``theorem`` measures ``delta`` against one micro-batch transfer,
            ``delta / (b_mu * o_avg / b_good)``. ``paper_arith`` drops the
            micro-batch factor, ``delta / (o_avg / b_good)``. They agree when
            ``b_mu == 1``.

        Returns
        -------
        report : BoundReport
        """
    if mode not in BOUND_MODES:
        raise ValueError("unknown bound mode '{}', expected one of {}".format(mode, BOUND_MODES))

    transfer = inputs.o_avg_bytes / inputs.b_good_bps
    if mode == "theorem":
        transfer *= inputs.b_mu
    if transfer <= 0:
        raise ValueError("average transfer time must be positive")

    epsilon = inputs.delta_s / transfer
    return BoundReport(
        alpha       = inputs.alpha,
        beta        = inputs.beta,
        epsilon     = epsilon,
        gamma_lower = inputs.alpha * inputs.beta / (1.0 + epsilon),
        mode        = mode,
    )


def asymmetry_from_links(links: Sequence[float], good: Optional[float] = None,
                         bad: Optional[float] = None) -> Tuple[float, float, float]:
    """Good and bad link floors of a link set, and beta.

        ``bad`` defaults to the slowest link and ``good`` to the slowest link
        of the faster half.
        """
    ranked = sorted(float(link) for link in links)
    if not ranked:
        raise ValueError("no links to compare")

    b_bad  = ranked[0]                if bad  is None else float(bad)
    b_good = ranked[len(ranked) // 2] if good is None else float(good)
    if not b_good >= b_bad > 0:
        raise ValueError("need b_good >= b_bad > 0, got b_good={} b_bad={}".format(b_good, b_bad))
    return b_good, b_bad, b_good / b_bad


def bandwidth_asymmetry(cluster: ClusterSpec, good: Optional[float] = None,
                        bad: Optional[float] = None) -> Tuple[float, float, float]:
    """Apply ``asymmetry_from_links`` to every ordered device pair of ``cluster``."""
    if len(cluster.devices) < 2:
        raise ValueError("bandwidth asymmetry needs at least two devices")
    links = [link_bandwidth(a, b) for a, b in itertools.permutations(cluster.devices, 2)]
    return asymmetry_from_links(links, good, bad)


def empirical_gain(eval_opt: ScheduleEvaluation, eval_base: ScheduleEvaluation) -> float:
    """Baseline cycle time over optimised cycle time."""
    if eval_opt.t_overall <= 0 or eval_base.t_overall <= 0:
        raise ValueError("gain undefined for a zero cycle time")
    return eval_base.t_overall / eval_opt.t_overall


def residual_imbalance(evaluation: ScheduleEvaluation) -> float:
    """Bottleneck time above a perfectly balanced stage time."""
    return evaluation.t_overall - float(np.mean([timing.t_exec for timing in evaluation.per_stage]))


def bound_inputs_from(instance: WorkloadInstance, cluster: ClusterSpec, b_mu: int,
                      delta_s: float) -> BoundInputs:
    o_max, o_avg, _  = tensor_stats(instance)
    b_good, b_bad, _ = bandwidth_asymmetry(cluster)
    return BoundInputs(o_max, o_avg, b_good, b_bad, delta_s, b_mu)
