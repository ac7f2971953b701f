"""Pool admission rule for evaluated candidates."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

TAU_Q = 0.10
TAU_D = 0.70
EPS_Q = 1e-6


@dataclass(frozen=True)
class AdmissionDecision:
    admitted: bool
    branch: str  # "improvement" | "novelty" | "none"
    quality: float
    gain: float
    max_abs_pool_corr: float

    def to_dict(self) -> dict:
        return asdict(self)


def gain(q: float, q_parent: float, eps_q: float = EPS_Q) -> float:
    return (q - q_parent) / max(q_parent, eps_q)


def admit(q: float, q_parent: float, max_abs_pool_corr: float,
          tau_q: float = TAU_Q, tau_d: float = TAU_D) -> AdmissionDecision:
    """Admit on quality above ``tau_q`` plus either a gain over the parent
    or low correlation with the active pool (gain is checked first)."""
    corr = 0.0 if max_abs_pool_corr is None or math.isnan(max_abs_pool_corr) else max_abs_pool_corr
    g = gain(q, q_parent)
    if q > tau_q and g > 0:
        branch = "improvement"
    elif q > tau_q and corr < tau_d:
        branch = "novelty"
    else:
        branch = "none"
    return AdmissionDecision(branch != "none", branch, q, g, corr)
