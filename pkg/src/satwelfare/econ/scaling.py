"""Scaling proxy effects into welfare effects through the Engel slope."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .effects import Z95, EffectEstimate
from .engel import EngelFit


@dataclass(frozen=True)
class ScaledEffect:
    tau_w: float
    se: float
    ci95: tuple[float, float]
    tau_q: float
    se_tau_q: float
    beta: float
    se_beta: float
    proxy: str = ""
    welfare: str = ""


def scale_values(tau_q: float, se_tau_q: float, beta: float, se_beta: float,
                 proxy: str = "", welfare: str = "") -> ScaledEffect:
    """tau_W = tau_Q / beta with relative variances added.

    se(tau_W)^2 = se(tau_Q)^2 / beta^2 + tau_Q^2 se(beta)^2 / beta^4, which is
    the relative-error sum written out so that tau_Q = 0 gives
    se(tau_Q) / |beta| instead of 0/0.
    """
    if beta == 0.0:
        raise ZeroDivisionError("Engel slope is zero; the welfare effect is not identified")
    tau_w = tau_q / beta
    se = math.sqrt(se_tau_q ** 2 / beta ** 2 + tau_q ** 2 * se_beta ** 2 / beta ** 4)
    return ScaledEffect(tau_w, se, (tau_w - Z95 * se, tau_w + Z95 * se), tau_q, se_tau_q,
                        beta, se_beta, proxy, welfare)


def scale_effect(effect: EffectEstimate, engel: EngelFit) -> ScaledEffect:
    return scale_values(effect.coefficient, effect.se, engel.beta, engel.se_beta,
                        engel.proxy, engel.welfare)


@dataclass(frozen=True)
class DeltaCheck:
    se_tau_q: float
    se_tau_w: float
    rel_se_tau_q: float
    rel_se_tau_w: float
    implied_beta: float
    implied_rel_se_beta: float
    consistent: bool


def se_from_ci(ci: tuple[float, float], z: float = Z95) -> float:
    return (ci[1] - ci[0]) / (2.0 * z)


def check_delta_identity(tau_q: float, ci_q, tau_w: float, ci_w, z: float = Z95) -> DeltaCheck:
    """Back out the Engel slope and its relative error from reported estimates.

    Standard errors are recovered from symmetric CIs (half-width / z). The
    identity is consistent when the welfare CI is at least as wide, in
    relative terms, as the proxy CI.
    """
    se_q = se_from_ci(ci_q, z)
    se_w = se_from_ci(ci_w, z)
    rq = se_q / abs(tau_q)
    rw = se_w / abs(tau_w)
    gap = rw * rw - rq * rq
    return DeltaCheck(se_q, se_w, rq, rw, tau_q / tau_w, math.sqrt(gap) if gap >= 0 else math.nan,
                      gap >= 0)
