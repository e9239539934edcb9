"""Sampled contraction certificates and the hierarchical (Schur complement) test.

A system ``dz/dt = F(t, z)`` contracts in the metric ``Theta`` at rate
``beta`` when the generalized Jacobian ``Theta_dot Theta^-1 + Theta J Theta^-1``
has symmetric part below ``-beta I``. The checks here evaluate that condition
on a finite sample of the domain; they are numerical evidence, not proofs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .dynsys import Metric, VectorField

NU_GRID = tuple(2.0 ** -i for i in range(21))
SCHEMA_VERSION = 1


class NotContracting(Exception):
    def __init__(self, point, lam_max: float, message: str | None = None):
        self.point = np.asarray(point, dtype=float)
        self.lam_max = float(lam_max)
        super().__init__(
            message
            or f"not contracting: max eigenvalue {self.lam_max:.6g} >= 0 at {self.point.tolist()}"
        )


@dataclass
class ContractionCertificate:
    beta: float
    chi: float
    domain: list[tuple[float, float]]
    worst_point: np.ndarray
    worst_eig: float
    samples: int
    variables: tuple[str, ...] = ()
    block: tuple[int, ...] | None = None
    t_range: tuple[float, float] = (0.0, 0.0)
    metric: str = "identity"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "contracting": True,
            "beta": self.beta,
            "chi": self.chi,
            "domain": {
                (self.variables[i] if i < len(self.variables) else str(i)): list(b)
                for i, b in enumerate(self.domain)
            },
            "block": None if self.block is None else [self.variables[i] for i in self.block]
            if self.variables else list(self.block),
            "t_range": list(self.t_range),
            "metric": self.metric,
            "samples": self.samples,
            "worst_point": [float(v) for v in self.worst_point],
            "worst_eigenvalue": self.worst_eig,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def contains(self, z) -> bool:
        z = np.asarray(z, dtype=float)
        return all(lo <= v <= hi for v, (lo, hi) in zip(z, self.domain))


def sample_domain(
    domain: Sequence[tuple[float, float]], n: int, seed: int = 0
) -> np.ndarray:
    """Stratified grid (endpoints included) together with scrambled Sobol points.

    Roughly half of ``n`` goes to each part.
    """
    d = len(domain)
    lo = np.array([b[0] for b in domain], dtype=float)
    hi = np.array([b[1] for b in domain], dtype=float)
    if d == 0:
        return np.zeros((1, 0))
    k = max(2, int(np.floor((n / 2) ** (1.0 / d))))
    axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    m = max(1, int(np.ceil(np.log2(max(2, n - len(grid))))))
    sob = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)
    return np.vstack([grid, lo + (hi - lo) * sob])


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def generalized_jacobian(
    field: VectorField,
    metric: Metric,
    Z: np.ndarray,
    t=0.0,
    block: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """``Theta_dot Theta^-1 + Theta J Theta^-1`` on the ``block`` rows/columns.

    Returns the generalized Jacobians (N, k, k) and the metric matrices.
    """
    J = field.batch_jacobian(t, Z)
    if block is not None:
        idx = np.asarray(block)
        J = J[:, :, idx] if J.shape[1] == len(idx) else J[:, idx][:, :, idx]
    theta = metric.theta_batch(t, Z)
    if metric.is_constant:
        inv = np.broadcast_to(np.linalg.inv(metric.constant), theta.shape)
        F = theta @ J @ inv
    else:
        inv = np.linalg.inv(theta)
        dZ = field.batch(t, Z) if field.dim == Z.shape[1] else _flow_for_metric(field, Z, t, block)
        F = metric.theta_dot_batch(t, Z, dZ) @ inv + theta @ J @ inv
    return F, theta


def _flow_for_metric(field, Z, t, block):
    # rows outside the block move with unknown exogenous signals; hold them fixed
    dZ = np.zeros_like(Z)
    dZ[:, list(block)] = field.batch(t, Z)
    return dZ


def _lam_max(F: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(_sym(F))[..., -1]


def certify(
    field: VectorField,
    metric: Metric | None = None,
    domain: Sequence[tuple[float, float]] | None = None,
    samples: int = 4096,
    block: Sequence[int] | None = None,
    t_range: tuple[float, float] = (0.0, 0.0),
    seed: int = 0,
    refine: bool = True,
) -> ContractionCertificate:
    """Contraction rate ``beta`` and condition number ``chi`` over a sampled domain.

    ``domain`` gives an interval for every variable of ``field``. With
    ``block`` only those rows/columns are tested and the remaining variables
    act as frozen exogenous inputs (partial contraction). The worst samples
    are polished with a bounded local search when ``refine`` is set. Raises
    :class:`NotContracting` carrying the offending point.
    """
    nvar = len(field.variables)
    if domain is None:
        raise ValueError("a domain is required")
    domain = [tuple(map(float, b)) for b in domain]
    if len(domain) != nvar:
        raise ValueError(f"domain has {len(domain)} intervals for {nvar} variables")
    k = len(block) if block is not None else field.dim
    metric = metric or Metric.identity(k)
    timed = t_range[1] > t_range[0]
    box = domain + ([tuple(t_range)] if timed else [])
    P = sample_domain(box, samples, seed)
    Z = P[:, :nvar]
    tt = P[:, nvar] if timed else t_range[0]

    F, theta = generalized_jacobian(field, metric, Z, tt, block)
    if F.shape[-1] != theta.shape[-1]:
        raise ValueError("metric dimension does not match the tested block")
    lam = _lam_max(F)
    conds = np.linalg.cond(theta) if not metric.is_constant else np.full(len(Z), metric.chi)
    if not np.all(np.isfinite(conds)):
        bad = int(np.argmax(~np.isfinite(conds)))
        raise np.linalg.LinAlgError(f"singular metric at {Z[bad].tolist()}")
    i = int(np.argmax(lam))
    worst, worst_lam = P[i].copy(), float(lam[i])

    if refine:
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])

        def objective(p):
            p = np.clip(p, lo, hi)
            ti = p[nvar] if timed else t_range[0]
            Fp, _ = generalized_jacobian(field, metric, p[None, :nvar], ti, block)
            return -float(_lam_max(Fp)[0])

        for j in np.argsort(lam)[-5:]:
            try:
                res = minimize(objective, P[j], method="L-BFGS-B", bounds=list(zip(lo, hi)))
            except (ArithmeticError, ValueError, np.linalg.LinAlgError):
                continue
            if -res.fun > worst_lam:
                worst, worst_lam = np.clip(res.x, lo, hi), float(-res.fun)

    if worst_lam >= 0:
        raise NotContracting(worst, worst_lam)
    return ContractionCertificate(
        beta=-worst_lam,
        chi=max(1.0, float(np.max(conds))),
        domain=domain,
        worst_point=worst,
        worst_eig=worst_lam,
        samples=len(P),
        variables=field.variables,
        block=None if block is None else tuple(block),
        t_range=tuple(t_range),
        metric="constant" if metric.is_constant else "state-dependent",
    )


def certify_partial(
    field: VectorField,
    metric: Metric | None,
    domain: Sequence[tuple[float, float]],
    block: Sequence[int],
    **kw,
) -> ContractionCertificate:
    """Contraction in the ``block`` variables uniformly over the others.

    The remaining variables (typically slow states) are frozen at each sample,
    so the certificate holds for any signal they may follow inside the domain.
    """
    return certify(field, metric, domain, block=block, **kw)


# ---------------------------------------------------------------------------
# hierarchical combination


@dataclass
class HierarchyCheck:
    passed: bool
    nu: float | None
    margin: float  # max eigenvalue of the Schur complement at the chosen (or smallest) nu
    b_bound: float
    fy_lower: float
    epsilon: float
    samples: int
    combined_lam_max: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "passed": self.passed,
            "nu": self.nu,
            "schur_margin": self.margin,
            "b_bound": self.b_bound,
            "fy_sym_lower_bound": self.fy_lower,
            "epsilon": self.epsilon,
            "samples": self.samples,
            "combined_max_eigenvalue": self.combined_lam_max,
        }


def check_hierarchy(
    Fx_sym: np.ndarray,
    Fy_sym: np.ndarray,
    B: np.ndarray,
    epsilon: float = 1.0,
    nus: Sequence[float] = NU_GRID,
) -> HierarchyCheck:
    """Schur-complement test for the metric ``diag(sqrt(eps) nu Theta_x, Theta_y)``.

    Inputs are stacks over samples: symmetric generalized Jacobians of the fast
    block (N, nx, nx) and slow block (N, ny, ny) and the coupling
    ``B = Theta_x d(f_tilde)/dy Theta_y^-1 / 2`` (N, nx, ny). The largest
    ``nu`` in ``nus`` for which ``Fx - nu^2 B Fy^-1 B^T < 0`` at every sample
    is returned.
    """
    Fx = np.atleast_3d(np.asarray(Fx_sym, dtype=float))
    Fy = np.atleast_3d(np.asarray(Fy_sym, dtype=float))
    B = np.atleast_3d(np.asarray(B, dtype=float))
    N = max(len(Fx), len(Fy), len(B))
    Fx, Fy, B = (np.broadcast_to(A, (N,) + A.shape[1:]) for A in (Fx, Fy, B))
    fy_eigs = np.linalg.eigvalsh(_sym(Fy))
    fy_top = float(fy_eigs[:, -1].max())
    b_bound = float(np.linalg.norm(B, ord=2, axis=(1, 2)).max()) if B.size else 0.0
    fy_lower = float(fy_eigs[:, 0].min())
    if fy_top >= 0:
        raise np.linalg.LinAlgError(
            f"slow block symmetric Jacobian is not negative definite (max eigenvalue {fy_top:.3g})"
        )
    term = B @ np.linalg.inv(Fy) @ np.swapaxes(B, 1, 2)
    margin = np.inf
    for nu in sorted(nus, reverse=True):
        margin = float(np.linalg.eigvalsh(_sym(Fx - nu**2 * term))[:, -1].max())
        if margin < 0:
            comb = _combined(Fx, Fy, B, epsilon, nu)
            return HierarchyCheck(True, float(nu), margin, b_bound, fy_lower, epsilon, N, comb)
    return HierarchyCheck(False, None, margin, b_bound, fy_lower, epsilon, N)


def _combined(Fx, Fy, B, eps, nu) -> float:
    """Max eigenvalue of the full symmetric generalized Jacobian in the combined metric."""
    top = np.concatenate([Fx, np.sqrt(eps) * nu * B], axis=2)
    bot = np.concatenate([np.sqrt(eps) * nu * np.swapaxes(B, 1, 2), eps * Fy], axis=2)
    return float(np.linalg.eigvalsh(np.concatenate([top, bot], axis=1))[:, -1].max())


def hierarchy_samples(system, domain, metric_x: Metric, metric_y: Metric, samples=1024, seed=0):
    """Sample ``(Fx_sym, Fy_sym, B)`` for a reduced modular system.

    ``domain`` covers ``(x_tilde, y)``; constant metrics are required.
    """
    if not (metric_x.is_constant and metric_y.is_constant):
        raise ValueError("hierarchy sampling supports constant metrics only")
    nf = system.n_fast
    P = sample_domain(domain, samples, seed)
    Tx, Ty = metric_x.constant, metric_y.constant
    Tx_inv, Ty_inv = np.linalg.inv(Tx), np.linalg.inv(Ty)
    Fx, Fy, B = [], [], []
    for p in P:
        xt, y = p[:nf], p[nf:]
        xb = system.x_bar(y, 0.0)
        J = system.fast_field.jacobian(0.0, np.concatenate([xb + xt, y]))
        Jx, Jy_raw = J[:, :nf], J[:, nf:]
        S = system.sensitivity(y, 0.0)[0]
        Jy = Jy_raw + Jx @ S  # d f_tilde / dy at fixed x_tilde
        Fx.append(_sym(Tx @ Jx @ Tx_inv))
        B.append(0.5 * Tx @ Jy @ Ty_inv)
        G = system.g_bar_field.jacobian(0.0, y)
        Fy.append(_sym(Ty @ G @ Ty_inv))
    return np.array(Fx), np.array(Fy), np.array(B)
