"""Disturbance-rejection envelopes for contracting systems and their empirical check."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sim import IntegratorConfig, integrate

VERIFY_TOL = 0.02
ZERO_FLOOR = 1e-9


class SmallGainViolated(ValueError):
    """A small-gain hypothesis fails; ``margin`` is how far the gain exceeds its limit."""

    def __init__(self, message: str, margin: float):
        super().__init__(message)
        self.margin = margin


@dataclass(frozen=True)
class BoundedDisturbance:
    d_sup: float

    def __post_init__(self):
        if self.d_sup < 0:
            raise ValueError("disturbance bound must be >= 0")


@dataclass(frozen=True)
class LGainDisturbance:
    """``|d(x, t)| <= K0 + Kx |x|`` around a nominal trajectory with ``|x0(t)| <= x00``."""

    K0: float
    Kx: float
    x00: float

    def __post_init__(self):
        if min(self.K0, self.Kx, self.x00) < 0:
            raise ValueError("K0, Kx and x00 must be >= 0")


@dataclass(frozen=True)
class BoundCurve:
    """``R(t) <= amplitude * exp(-rate t) + asymptote``."""

    amplitude: float
    rate: float
    asymptote: float
    valid: bool = True

    def __call__(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float)) + self.asymptote


def lemma1_bound(beta: float, chi: float, R0: float, d_sup: float) -> BoundCurve:
    """Deviation envelope under a bounded additive disturbance ``|d| <= d_sup``."""
    if beta <= 0 or chi < 1 or R0 < 0 or d_sup < 0:
        raise ValueError("need beta > 0, chi >= 1, R0 >= 0, d_sup >= 0")
    return BoundCurve(chi * R0, beta, d_sup * chi / beta)


def lemma2_bound(beta: float, chi: float, R0: float, K0: float, Kx: float, x00: float) -> BoundCurve:
    """Deviation envelope under a state-affine disturbance ``|d| <= K0 + Kx|x|``.

    Requires ``Kx < beta/chi``; otherwise :class:`SmallGainViolated`.
    """
    if beta <= 0 or chi < 1 or min(R0, K0, Kx, x00) < 0:
        raise ValueError("need beta > 0, chi >= 1 and nonnegative R0, K0, Kx, x00")
    rate = beta - chi * Kx
    if rate <= 0:
        raise SmallGainViolated(
            f"chi*Kx = {chi * Kx:.6g} >= beta = {beta:.6g}", margin=chi * Kx - beta
        )
    return BoundCurve(chi * R0, rate, chi * (K0 + Kx * x00) / rate)


@dataclass
class VerificationReport:
    status: str  # PASS, FAIL or INCONCLUSIVE
    max_ratio: float
    worst_time: float
    t: np.ndarray = field(repr=False)
    deviation: np.ndarray = field(repr=False)
    bound: np.ndarray = field(repr=False)
    exit_time: float | None = None
    tol: float = VERIFY_TOL

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "status": self.status,
            "max_ratio": self.max_ratio,
            "worst_time": self.worst_time,
            "exit_time": self.exit_time,
            "tol": self.tol,
            "points": len(self.t),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def verify_bound(
    nominal: Callable,
    disturbed: Callable,
    certificate,
    disturbance: BoundedDisturbance | LGainDisturbance,
    x0_nominal,
    x0_disturbed,
    horizon: float,
    config: IntegratorConfig | None = None,
    tol: float = VERIFY_TOL,
) -> VerificationReport:
    """Simulate both systems and compare ``|x - x0|`` with the matching envelope.

    PASS iff the deviation never exceeds ``(1 + tol)`` times the envelope on
    the output grid; where the envelope is zero the deviation must stay below
    ``ZERO_FLOOR``. INCONCLUSIVE if a trajectory leaves the certified domain.
    """
    base = config or IntegratorConfig(atol=1e-11, rtol=1e-10)
    cfg = IntegratorConfig(
        method=base.method, atol=base.atol, rtol=base.rtol, max_step=base.max_step,
        T=horizon, n_out=max(base.n_out, 201), dt=base.dt,
    )
    grid = np.linspace(0.0, horizon, cfg.n_out)
    a = integrate(nominal, x0_nominal, cfg, t_eval=grid)
    b = integrate(disturbed, x0_disturbed, cfg, t_eval=grid)
    n = min(len(a.t), len(b.t))
    t = a.t[:n]
    R = np.linalg.norm(b.y[:n] - a.y[:n], axis=1)
    R0 = float(R[0])
    if isinstance(disturbance, LGainDisturbance):
        curve = lemma2_bound(certificate.beta, certificate.chi, R0, disturbance.K0,
                             disturbance.Kx, disturbance.x00)
    else:
        curve = lemma1_bound(certificate.beta, certificate.chi, R0, disturbance.d_sup)
    bound = curve(t)

    exit_time = None
    for k in range(n):
        if not (certificate.contains(a.y[k]) and certificate.contains(b.y[k])):
            exit_time = float(t[k])
            break
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, R / bound, np.where(R <= ZERO_FLOOR, 0.0, np.inf))
    k = int(np.argmax(ratio))
    if exit_time is not None:
        status = "INCONCLUSIVE"
    else:
        status = "PASS" if ratio[k] <= 1 + tol else "FAIL"
    return VerificationReport(status, float(ratio[k]), float(t[k]), t, R, bound, exit_time, tol)
