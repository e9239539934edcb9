"""The two-floor building with a reversed air-conditioner.

Runs the regime experiments at eps/eps_c = 0.5, 2.5 and 5 from seeded random
room temperatures, and the tracking experiment that compares the barycentric
system with its reduced slow dynamics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynsys import building_barycentric, compile_system, to_barycentric
from .sim import (
    EnsembleResult,
    IntegratorConfig,
    compare_full_reduced,
    run_ensemble,
)
from .spreduce import (
    GainConstants,
    building_reference_constants,
    epsilon_critical,
    lemma3_bounds,
    reduced_sup,
    to_standard_form,
    transient_time,
)

FIGURES = {"fig1": 0.5, "fig2": 2.5, "fig3": 5.0}
IC_BOX = [(-5.0, 5.0)] * 4
DEFAULT_RUNS = 20
DEFAULT_SEED = 0
HORIZON = 500.0


@dataclass
class FigureResult:
    figure: str
    ratio: float
    epsilon: float
    epsilon_c: float
    ensemble: EnsembleResult
    regime: str
    xtilde_bounds: list = field(default_factory=list)  # (M_x_tilde, post-transient sup |x_tilde|) per run
    t_total: float | None = None

    @property
    def bound_holds(self) -> bool | None:
        if not self.xtilde_bounds:
            return None
        return all(obs <= m for m, obs in self.xtilde_bounds)

    def summary(self) -> dict:
        s = {
            "schema_version": 1,
            "figure": self.figure,
            "epsilon_over_epsilon_c": self.ratio,
            "epsilon": self.epsilon,
            "epsilon_c": self.epsilon_c,
            "regime": self.regime,
            "divergent": self.ensemble.n_divergent,
            "n_clusters": self.ensemble.n_clusters,
            "t_total": self.t_total,
            "xtilde_bound_holds": self.bound_holds,
            "xtilde_bounds": [{"m_xtilde": m, "observed": o} for m, o in self.xtilde_bounds],
        }
        s.update(self.ensemble.summary())
        return s


def classify(ens: EnsembleResult) -> str:
    if ens.n_clusters >= 2:
        return "multi-equilibria"
    if ens.n_divergent > 0:
        return "divergent"
    return "converged"


def reproduce_figure(
    figure: str,
    runs: int = DEFAULT_RUNS,
    seed: int = DEFAULT_SEED,
    horizon: float = HORIZON,
    constants: GainConstants | None = None,
    config: IntegratorConfig | None = None,
) -> FigureResult:
    """Seeded ensemble of the barycentric building at one of the figure ratios.

    Initial room temperatures are uniform in [-5, 5]^4 and mapped to
    ``(delta1, delta2, Delta)``. Below ``eps_c`` each run is also checked
    against the fast-error bound after the transient.
    """
    if figure not in FIGURES:
        raise KeyError(f"unknown figure {figure!r}; choose from {sorted(FIGURES)}")
    gc = constants or building_reference_constants()
    eps_c = epsilon_critical(gc)
    ratio = FIGURES[figure]
    eps = ratio * eps_c
    spec = building_barycentric(epsilon=eps)
    field_ = compile_system(spec)
    base = config or IntegratorConfig()
    cfg = IntegratorConfig(method=base.method, atol=base.atol, rtol=base.rtol,
                           max_step=base.max_step, T=horizon, n_out=max(base.n_out, 501))
    ens = run_ensemble(field_, IC_BOX, runs, seed, cfg, ic_map=to_barycentric)
    res = FigureResult(figure, ratio, eps, eps_c, ens, classify(ens))
    if eps < eps_c and eps < 1:
        ms = to_standard_form(spec)
        _, t_total = transient_time(gc.beta_f, gc.beta_g, eps)
        res.t_total = t_total
        for ic, tr in zip(ens.initial_conditions, ens.trajectories):
            xt0 = float(np.linalg.norm(ic[:2] - ms.x_bar(ic[2:])))
            m_bar = reduced_sup(ms, ic[2:], horizon=horizon)
            b = lemma3_bounds(gc.replace(m_bar=m_bar), eps, xt0)
            after = tr.t >= t_total
            obs = float(np.max(np.linalg.norm(tr.y[after, :2], axis=1))) if after.any() else 0.0
            res.xtilde_bounds.append((b.m_xtilde, obs))
    return res


@dataclass
class TrackingResult:
    epsilon: float
    t_total: float
    m_xtilde: float
    ytilde_asymptote: float
    sup_xtilde_after: float
    sup_ytilde_after: float
    sup_xtilde: float


def tracking_experiment(
    ratio: float,
    n_ics: int = 10,
    seed: int = 1,
    constants: GainConstants | None = None,
    tail: float = 0.25,
) -> list[TrackingResult]:
    """Full vs reduced barycentric building at ``eps = ratio * eps_c``.

    Each run starts the reduced system at ``y(0)`` and lasts
    ``(1 + tail) * t_total``.
    """
    from .sim import sample_box

    gc = constants or building_reference_constants()
    eps_c = epsilon_critical(gc)
    eps = ratio * eps_c
    spec = building_barycentric(epsilon=eps)
    ms = to_standard_form(spec)
    _, t_total = transient_time(gc.beta_f, gc.beta_g, eps)
    T = (1 + tail) * t_total
    cfg = IntegratorConfig(T=T, n_out=int(min(4001, max(801, math.ceil(T * 4)))))
    out = []
    for x in sample_box(IC_BOX, n_ics, seed):
        ic = to_barycentric(x)
        cmp = compare_full_reduced(ms, ic, cfg, t_after=t_total)
        xt0 = float(np.linalg.norm(ic[:2] - ms.x_bar(ic[2:])))
        m_bar = reduced_sup(ms, ic[2:], horizon=T)
        b = lemma3_bounds(gc.replace(m_bar=m_bar), eps, xt0)
        out.append(TrackingResult(eps, t_total, b.m_xtilde, b.ytilde_asymptote,
                                  cmp.sup_xtilde_after, cmp.sup_ytilde_after, cmp.sup_xtilde))
    return out
