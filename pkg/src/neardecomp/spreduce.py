"""Reduction to standard singular-perturbation form and the associated bounds.

Starting from a fast/slow system

    x' = f(x, y, t) + eps * g_x(x, y, t)
    y' = eps * g_y(x, y, t)

the fast states are shifted onto the slow manifold ``f(x_bar(y, t), y, t) = 0``
and the perturbation terms are bounded by affine functions of the state. The
critical separation ``eps_c`` follows from those constants; below it the
fast error stays bounded and the slow states track the reduced dynamics
``y_bar' = eps * g_bar(y_bar)`` to O(eps).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .bounds import SmallGainViolated
from .contraction import certify, certify_partial, sample_domain
from .dynsys import Metric, ModularSystem, VectorField, compile_system
from .expr import ExprError, differentiate, inline
from .parser import SystemSpec
from .sim import IntegratorConfig, integrate

SCHEMA_VERSION = 1
NEWTON_TOL = 1e-10
NEWTON_MAXITER = 100
FIT_INFLATION = 1.01
FIT_SLACK = 1e-9
INPUT_FD_STEP = 1e-6
M_BAR_FACTOR = 1.05
REFINE_ROUNDS = 6
REFINE_STARTS = 8


class NoConvergence(RuntimeError):
    def __init__(self, message: str, best_residual: float, best_x=None):
        super().__init__(f"{message} (best residual {best_residual:.3g})")
        self.best_residual = best_residual
        self.best_x = best_x


class HypothesisFailure(ValueError):
    pass


# ---------------------------------------------------------------------------
# slow manifold


def newton_solve(F, J, x0, tol: float = NEWTON_TOL, maxiter: int = NEWTON_MAXITER) -> np.ndarray:
    """Damped Newton iteration for ``F(x) = 0``; halves the step while the residual grows."""
    x = np.array(x0, dtype=float)
    r = F(x)
    res = float(np.linalg.norm(r))
    best, best_res = x.copy(), res
    for _ in range(maxiter):
        if res <= tol:
            return x
        try:
            step = np.linalg.solve(J(x), -r)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian in Newton iteration", best_res, best) from None
        lam = 1.0
        for _ in range(40):
            xn = x + lam * step
            try:
                rn = F(xn)
                resn = float(np.linalg.norm(rn))
            except (ArithmeticError, ValueError):
                resn = math.inf
            if resn < res or resn <= tol:
                break
            lam *= 0.5
        else:
            raise NoConvergence("line search failed", best_res, best)
        x, r, res = xn, rn, resn
        if res < best_res:
            best, best_res = x.copy(), res
    if res <= tol:
        return x
    raise NoConvergence(f"no convergence after {maxiter} iterations", best_res, best)


def solve_slow_manifold(
    field: VectorField, y, x_init=None, t: float = 0.0, tol: float = NEWTON_TOL
) -> np.ndarray:
    """Root ``x_bar`` of the fast field with the slow states frozen at ``y``.

    ``field`` maps ``(x, y)`` (in that order) to the ``len(x)`` fast rows.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    nf = field.dim
    x0 = np.zeros(nf) if x_init is None else np.atleast_1d(np.asarray(x_init, dtype=float))

    def F(x):
        return field(t, np.concatenate([x, y]))

    def J(x):
        return field.jacobian(t, np.concatenate([x, y]))[:, :nf]

    return newton_solve(F, J, x0, tol)


class SlowManifold:
    """``x_bar(y, t)`` for the unperturbed fast rows of ``spec``, with sensitivities."""

    def __init__(self, spec: SystemSpec, tol: float = NEWTON_TOL):
        if not spec.fast:
            raise ValueError("system has no fast states")
        self.spec = spec
        self.tol = tol
        self.nf = len(spec.fast)
        self.field = compile_system(spec, **{spec.epsilon: 0.0}).rows(range(self.nf))
        self._last: np.ndarray | None = None
        self.timed = bool(spec.inputs)

    def __call__(self, y, t: float = 0.0, x_init=None) -> np.ndarray:
        guess = x_init if x_init is not None else self._last
        try:
            x = solve_slow_manifold(self.field, y, guess, t, self.tol)
        except NoConvergence:
            if guess is None:
                raise
            x = solve_slow_manifold(self.field, y, None, t, self.tol)
        self._last = x
        return x

    def residual(self, y, t: float = 0.0) -> float:
        x = self(y, t)
        return float(np.linalg.norm(self.field(t, np.concatenate([x, np.atleast_1d(y)]))))

    def sensitivity(self, y, t: float = 0.0, xbar=None) -> tuple[np.ndarray, np.ndarray]:
        """``(d x_bar/d y, d x_bar/d t)`` by the implicit function theorem.

        The time derivative covers dependence through input signals and uses a
        central difference of the fast field in ``t``.
        """
        y = np.atleast_1d(np.asarray(y, dtype=float))
        xb = self(y, t) if xbar is None else xbar
        z = np.concatenate([xb, y])
        J = self.field.jacobian(t, z)
        Jx, Jy = J[:, : self.nf], J[:, self.nf:]
        try:
            S = np.linalg.solve(Jx, -Jy)
        except np.linalg.LinAlgError:
            raise HypothesisFailure(
                "fast Jacobian is singular on the slow manifold; partial contraction fails"
            ) from None
        if self.timed:
            h = INPUT_FD_STEP
            ft = (self.field(t + h, z) - self.field(t - h, z)) / (2 * h)
            xt = np.linalg.solve(Jx, -ft)
        else:
            xt = np.zeros(self.nf)
        return S, xt


# ---------------------------------------------------------------------------
# standard form


def _eps_derivative(spec: SystemSpec, states: Sequence[str]) -> list:
    out = []
    for s in states:
        e = inline(spec.rhs[s], spec.funcs)
        out.append(differentiate(e, spec.epsilon))
    return out


def split_perturbation(spec: SystemSpec):
    """Compile ``f`` (fast rows at eps=0), ``g_x`` and ``g_y`` (eps-derivatives).

    Raises :class:`HypothesisFailure` unless the right-hand side is affine in
    eps and the slow rows vanish at eps = 0.
    """
    eps = spec.epsilon
    states = spec.states
    nf = len(spec.fast)
    params0 = {**spec.params, eps: 0.0}
    dfast = _eps_derivative(spec, spec.fast)
    dslow = _eps_derivative(spec, spec.slow)
    f0 = VectorField.from_exprs([spec.rhs[s] for s in spec.fast], states, spec.fast, params0,
                                spec.funcs, spec.inputs)
    gx = VectorField.from_exprs(dfast, states, spec.fast, spec.params, spec.funcs, spec.inputs)
    gy = VectorField.from_exprs(dslow, states, spec.slow, spec.params, spec.funcs, spec.inputs)
    slow0 = VectorField.from_exprs([spec.rhs[s] for s in spec.slow], states, spec.slow, params0,
                                   spec.funcs, spec.inputs)
    second = [differentiate(e, eps) for e in dfast + dslow]
    curv = VectorField.from_exprs(second, states, None, spec.params, spec.funcs, spec.inputs)
    Z = sample_domain(spec.box(), 256, seed=7)
    if np.max(np.abs(slow0.batch(0.0, Z))) > 1e-12:
        raise HypothesisFailure("slow equations do not vanish at eps = 0")
    if second and np.max(np.abs(curv.batch(0.0, Z))) > 1e-9:
        raise HypothesisFailure("right-hand side is not affine in the perturbation parameter")
    return f0, gx, gy


def to_standard_form(spec: SystemSpec, manifold: SlowManifold | None = None) -> ModularSystem:
    """Shift fast states onto the slow manifold and split off the perturbations.

    With ``x = x_bar(y, t) + x_tilde``:

        f_tilde(x_tilde, y, t) = f(x_bar + x_tilde, y, t)
        g_bar(y, t)            = g_y(x_bar, y, t)
        delta_g                = g_y(x_bar + x_tilde, y, t) - g_bar
        delta_f                = g_x - (d x_bar/d y)(g_bar + delta_g) - (d x_bar/d t)/eps

    so that ``x_tilde' = f_tilde + eps*delta_f`` and ``y' = eps*(g_bar + delta_g)``.
    """
    if not spec.fast or not spec.slow:
        raise ValueError("standard form needs both fast and slow states")
    manifold = manifold or SlowManifold(spec)
    f0, gx, gy = split_perturbation(spec)
    nf = len(spec.fast)
    eps = spec.eps

    def full_state(xt, y, t):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        xb = manifold(y, t)
        return xb, np.concatenate([xb + np.asarray(xt, dtype=float), y])

    def x_bar(y, t=0.0):
        return manifold(np.atleast_1d(y), t)

    def f_tilde(xt, y, t=0.0):
        _, z = full_state(xt, y, t)
        return f0(t, z)

    def g_bar(y, t=0.0):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        xb = manifold(y, t)
        return gy(t, np.concatenate([xb, y]))

    def delta_g(xt, y, t=0.0):
        xb, z = full_state(xt, y, t)
        return gy(t, z) - gy(t, np.concatenate([xb, np.atleast_1d(y)]))

    def delta_f(xt, y, t=0.0):
        xb, z = full_state(xt, y, t)
        S, xdot = manifold.sensitivity(np.atleast_1d(y), t, xb)
        out = gx(t, z) - S @ gy(t, z)
        if manifold.timed and eps > 0:
            out = out - xdot / eps
        return out

    def gbar_jac(t, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        xb = manifold(y, t)
        S, _ = manifold.sensitivity(y, t, xb)
        J = gy.jacobian(t, np.concatenate([xb, y]))
        return J[:, nf:] + J[:, :nf] @ S

    gbar_field = VectorField(spec.slow, spec.slow, lambda t, y: g_bar(y, t), gbar_jac)
    ms = ModularSystem(
        fast=spec.fast,
        slow=spec.slow,
        epsilon=eps,
        f_tilde=f_tilde,
        delta_f=delta_f,
        g_bar=g_bar,
        delta_g=delta_g,
        x_bar=x_bar,
        g_bar_field=gbar_field,
        fast_field=f0,
        spec=spec,
    )
    ms.sensitivity = manifold.sensitivity
    ms.manifold = manifold
    ms.g_x = gx
    ms.g_y = gy
    return ms


def reconstruction_error(ms: ModularSystem, Z: np.ndarray, t: float = 0.0) -> float:
    """Max deviation between the original right-hand side and the reassembled blocks.

    The fast rows are compared through the chain rule
    ``x' = x_tilde' + (d x_bar/d y) y' + d x_bar/d t``.
    """
    full = compile_system(ms.spec)
    nf, eps = ms.n_fast, ms.epsilon
    worst = 0.0
    for z in np.atleast_2d(Z):
        x, y = z[:nf], z[nf:]
        xb = ms.x_bar(y, t)
        xt = x - xb
        S, xdot = ms.sensitivity(y, t, xb)
        slow = eps * (ms.g_bar(y, t) + ms.delta_g(xt, y, t))
        fast = ms.f_tilde(xt, y, t) + eps * ms.delta_f(xt, y, t) + S @ slow
        if ms.manifold.timed and eps > 0:
            fast = fast + xdot
        ref = full(t, z)
        worst = max(worst, float(np.max(np.abs(np.concatenate([fast, slow]) - ref))))
    return worst


# ---------------------------------------------------------------------------
# gain constants


@dataclass
class GainConstants:
    d_f: float = 0.0
    a_fx: float = 0.0
    a_fy: float = 0.0
    d_g: float = 0.0
    a_gx: float = 0.0
    chi_f: float = 1.0
    beta_f: float = 1.0
    chi_g: float = 1.0
    beta_g: float = 1.0
    m_bar: float = 0.0
    delta_offset: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if self.beta_f <= 0 or self.beta_g <= 0:
            raise ValueError("contraction rates must be positive")
        if self.chi_f < 1 or self.chi_g < 1:
            raise ValueError("condition numbers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GainConstants":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown constants {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def replace(self, **kw) -> "GainConstants":
        return GainConstants(**{**self.to_dict(), **kw})


def building_reference_constants() -> GainConstants:
    """Hand-derived constants for the reversed air-conditioning building (constant metric).

    They fall short of |delta f| and |delta g| at some points of the box, e.g.
    ``|delta f|`` at ``d1 = d2 = 0, D = pi/2``; the fitted constants do not.
    """
    return GainConstants(
        d_f=0.75,
        a_fx=math.sqrt(2) / 4,
        a_fy=0.75,
        d_g=1.0,
        a_gx=math.sqrt(2) / 2,
        chi_f=1.0,
        beta_f=0.5,
        chi_g=1.0,
        beta_g=0.25,
    )


def fit_affine_bound(values: np.ndarray, regressors: np.ndarray, lam: float = 1.0) -> np.ndarray:
    """Smallest ``(d, a_1, ..)`` >= 0 with ``d + sum a_i r_i >= value`` at every sample.

    Minimizes ``d + lam * sum a_i`` by linear programming.
    """
    values = np.asarray(values, dtype=float)
    R = np.atleast_2d(np.asarray(regressors, dtype=float))
    if R.shape[0] != len(values):
        R = R.T
    k = R.shape[1]
    if np.all(values <= 0):
        return np.zeros(k + 1)
    c = np.concatenate([[1.0], np.full(k, lam)])
    A = -np.hstack([np.ones((len(values), 1)), R])
    res = linprog(c, A_ub=A, b_ub=-values, bounds=[(0, None)] * (k + 1), method="highs")
    if res.status != 0:
        raise HypothesisFailure(f"affine bound fit failed: {res.message}")
    return np.maximum(res.x, 0.0)


def _superlinear(values, R, lam) -> bool:
    """Fit on the inner half of the sample cloud and test the extrapolation."""
    scale = R.max(axis=0)
    inner = np.all(R <= 0.5 * scale + 1e-15, axis=1)
    if inner.sum() < 10 or not np.any(values > 0):
        return False
    c_in = fit_affine_bound(values[inner], R[inner], lam)
    pred = c_in[0] + R @ c_in[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pred > 0, values / pred, np.where(values > 1e-12, np.inf, 0.0))
    return bool(np.max(ratio) > 1.5)


@dataclass
class GainSamples:
    xt_norm: np.ndarray
    y_norm: np.ndarray
    df_norm: np.ndarray
    dg_norm: np.ndarray


def _norms_at(ms: ModularSystem, z, t: float = 0.0) -> np.ndarray:
    nf = ms.n_fast
    x, y = z[:nf], z[nf:]
    xt = x - ms.x_bar(y, t)
    return np.array([
        np.linalg.norm(xt),
        np.linalg.norm(y),
        np.linalg.norm(ms.delta_f(xt, y, t)),
        np.linalg.norm(ms.delta_g(xt, y, t)),
    ])


def sample_perturbations(ms: ModularSystem, domain, samples: int = 2048, seed: int = 0,
                         t: float = 0.0) -> GainSamples:
    """Norms of ``x_tilde``, ``y``, ``delta_f`` and ``delta_g`` over the domain.

    ``domain`` is a box over the original states ``(x, y)``.
    """
    Z = sample_domain(domain, samples, seed)
    out = np.array([_norms_at(ms, z, t) for z in Z])
    return GainSamples(*out.T)


def _fit_with_search(ms, Z, N, col, regs, domain, lam):
    """LP fit of column ``col`` of ``N`` against ``regs``, refined by local search.

    Each round maximizes the excess ``value - bound`` from the worst samples
    and adds any violating point before refitting.
    """
    lo = np.array([b[0] for b in domain])
    hi = np.array([b[1] for b in domain])
    Z, N = list(Z), list(N)
    for _ in range(REFINE_ROUNDS):
        A = np.array(N)
        coef = fit_affine_bound(A[:, col], A[:, regs], lam)
        excess = A[:, col] - coef[0] - A[:, regs] @ coef[1:]
        scale = max(1.0, float(A[:, col].max()))

        def objective(z):
            v = _norms_at(ms, np.clip(z, lo, hi))
            return -(v[col] - coef[0] - v[regs] @ coef[1:])

        found = False
        for j in np.argsort(excess)[-REFINE_STARTS:]:
            try:
                res = minimize(objective, Z[j], method="L-BFGS-B", bounds=list(zip(lo, hi)),
                               options={"maxiter": 60})
            except (ArithmeticError, ValueError, np.linalg.LinAlgError, ExprError, NoConvergence):
                continue
            if -res.fun > 1e-9 * scale:
                z = np.clip(res.x, lo, hi)
                Z.append(z)
                N.append(_norms_at(ms, z))
                found = True
        if not found:
            break
    A = np.array(N)
    return fit_affine_bound(A[:, col], A[:, regs], lam), A


def estimate_gain_constants(
    ms: ModularSystem,
    domain=None,
    samples: int = 2048,
    seed: int = 0,
    metric_x: Metric | None = None,
    metric_y: Metric | None = None,
    y0=None,
    horizon: float | None = None,
    lam: float = 1.0,
    cert_samples: int = 4096,
) -> GainConstants:
    """Fit the affine perturbation bounds and attach contraction constants.

    ``|delta_f| <= d_f + a_fx |x_tilde| + a_fy |y|`` and
    ``|delta_g| <= d_g + a_gx |x_tilde|`` are fitted by linear programming on
    samples of ``domain`` (defaults to the system's domain box). Local searches from
    the worst samples add violating points until the fit holds, then the
    constants are inflated by 1 % and re-checked. ``(beta_f, chi_f)`` certify the fast field at eps = 0
    uniformly in ``y``; ``(beta_g, chi_g)`` certify ``g_bar``. ``m_bar`` is
    1.05 times the largest ``|y_bar(t)|`` seen when the reduced system is run
    from ``y0`` (every corner of the slow box when ``y0`` is None).
    """
    spec = ms.spec
    domain = [tuple(b) for b in (domain or spec.box())]
    nf, ns = ms.n_fast, ms.n_slow
    Z = sample_domain(domain, samples, seed)
    N = np.array([_norms_at(ms, z) for z in Z])
    Rf0 = N[:, [0, 1]]
    if _superlinear(N[:, 2], Rf0, lam):
        raise HypothesisFailure("|delta_f| grows faster than affinely in |x_tilde|, |y|")
    if _superlinear(N[:, 3], N[:, [0]], lam):
        raise HypothesisFailure("|delta_g| grows faster than affinely in |x_tilde|")
    cf, Af = _fit_with_search(ms, Z, N, 2, [0, 1], domain, lam)
    cg, Ag = _fit_with_search(ms, Z, N, 3, [0], domain, lam)
    cf, cg = cf * FIT_INFLATION, cg * FIT_INFLATION
    if np.any(Af[:, 2] > cf[0] + Af[:, [0, 1]] @ cf[1:] + FIT_SLACK) or np.any(
        Ag[:, 3] > cg[0] + Ag[:, [0]] @ cg[1:] + FIT_SLACK
    ):
        raise HypothesisFailure("fitted bounds do not dominate the samples")

    fast_cert = certify_partial(ms.fast_field, metric_x, domain, list(range(nf)),
                                samples=cert_samples, seed=seed)
    slow_cert = certify(ms.g_bar_field, metric_y, domain[nf:], samples=cert_samples, seed=seed)
    m_bar = reduced_sup(ms, y0 if y0 is not None else _corners(domain[nf:]), horizon)
    return GainConstants(
        d_f=float(cf[0]), a_fx=float(cf[1]), a_fy=float(cf[2]),
        d_g=float(cg[0]), a_gx=float(cg[1]),
        chi_f=fast_cert.chi, beta_f=fast_cert.beta,
        chi_g=slow_cert.chi, beta_g=slow_cert.beta,
        m_bar=m_bar,
    )


def _corners(box) -> np.ndarray:
    grids = np.meshgrid(*[[lo, hi] for lo, hi in box], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def reduced_sup(ms: ModularSystem, y0, horizon: float | None = None,
                factor: float = M_BAR_FACTOR) -> float:
    """``factor`` times the sup of ``|y_bar(t)|`` over reduced runs from each row of ``y0``."""
    Y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    eps = ms.epsilon
    if eps == 0:
        return factor * float(np.max(np.linalg.norm(Y0, axis=1)))
    T = horizon or 10.0 / (eps * max(_rough_rate(ms, Y0[0]), 1e-3))
    cfg = IntegratorConfig(T=T, n_out=401)
    sup = 0.0
    for y in Y0:
        tr = integrate(lambda t, v: eps * ms.g_bar(v, t), y, cfg)
        sup = max(sup, float(np.max(np.linalg.norm(tr.y, axis=1))))
    return factor * sup


def _rough_rate(ms: ModularSystem, y) -> float:
    J = ms.g_bar_field.jacobian(0.0, y)
    return float(-np.max(np.linalg.eigvalsh(0.5 * (J + J.T))))


# ---------------------------------------------------------------------------
# critical separation and bounds


def small_gain_bracket(gc: GainConstants) -> float:
    return (gc.chi_f / gc.beta_f) * (gc.a_fx + (gc.chi_g / gc.beta_g) * gc.a_fy * gc.a_gx)


def epsilon_critical(gc: GainConstants) -> float:
    """Largest timescale ratio for which the fast error is guaranteed bounded."""
    b = small_gain_bracket(gc)
    return math.inf if b == 0 else 1.0 / b


@dataclass(frozen=True)
class Lemma3Bounds:
    m_xtilde: float
    ytilde_amplitude: float
    ytilde_rate: float
    ytilde_asymptote: float

    def ytilde(self, t):
        return self.ytilde_amplitude * np.exp(-self.ytilde_rate * np.asarray(t, dtype=float)) \
            + self.ytilde_asymptote


def lemma3_bounds(gc: GainConstants, eps: float, xt0_norm: float,
                  delta_offset: float | None = None) -> Lemma3Bounds:
    """Sup bound on ``|x_tilde|`` and the envelope of ``|y - y_bar|``.

    Valid only for ``eps < eps_c``; otherwise :class:`SmallGainViolated`.
    """
    if eps < 0 or xt0_norm < 0:
        raise ValueError("eps and |x_tilde(0)| must be >= 0")
    dlt = gc.delta_offset if delta_offset is None else delta_offset
    loop = eps * small_gain_bracket(gc)
    if loop >= 1:
        raise SmallGainViolated(
            f"eps = {eps:.6g} is not below eps_c = {epsilon_critical(gc):.6g}", margin=loop - 1
        )
    num = gc.chi_f * xt0_norm + (eps * gc.chi_f / gc.beta_f) * (
        gc.d_f + gc.a_fy * (gc.m_bar + gc.chi_g * (dlt + gc.d_g / gc.beta_g))
    )
    m = num / (1.0 - loop)
    return Lemma3Bounds(
        m_xtilde=m,
        ytilde_amplitude=gc.chi_g * dlt,
        ytilde_rate=eps * gc.beta_g,
        ytilde_asymptote=gc.chi_g * gc.a_gx * m / gc.beta_g,
    )


def transient_time(beta_f: float, beta_g: float, eps: float) -> tuple[float, float]:
    """Boundary-layer time ``log(1/eps)/beta_f`` and total transient time."""
    if not 0 < eps < 1:
        raise ValueError("transient times need 0 < eps < 1")
    if beta_f <= 0 or beta_g <= 0:
        raise ValueError("rates must be positive")
    L = math.log(1.0 / eps)
    return L / beta_f, (1.0 / beta_f + 1.0 / (eps * beta_g)) * L


@dataclass(frozen=True)
class CascadeEstimate:
    per_level: tuple[float, ...]
    product: float

    @property
    def timescale_ratio(self) -> float:
        """Fastest over slowest timescale."""
        return self.product


def cascade_epsilon(levels: Sequence[GainConstants | float]) -> CascadeEstimate:
    """Per-level ``eps_c`` and their product for a cascade of nested modules."""
    if not levels:
        raise ValueError("need at least one level")
    eps = tuple(
        float(lv) if isinstance(lv, (int, float)) else epsilon_critical(lv) for lv in levels
    )
    if any(e == 0 for e in eps):
        raise ValueError("a level has eps_c = 0")
    return CascadeEstimate(eps, math.prod(eps))


# ---------------------------------------------------------------------------
# report


@dataclass
class SPReport:
    epsilon: float
    epsilon_c: float
    constants: GainConstants
    margin: float
    valid: bool
    m_xtilde_bound: float | None = None
    ytilde_asymptote: float | None = None
    t_fast: float | None = None
    t_total: float | None = None
    xtilde0: float = 0.0
    domain: dict = field(default_factory=dict)
    constants_source: str = "estimated"
    assumptions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(v):
            if v is None:
                return None
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "schema_version": SCHEMA_VERSION,
            "epsilon": self.epsilon,
            "epsilon_c": num(self.epsilon_c),
            "margin": num(self.margin),
            "valid": self.valid,
            "m_xtilde_bound": num(self.m_xtilde_bound),
            "ytilde_asymptote": num(self.ytilde_asymptote),
            "t_fast": num(self.t_fast),
            "t_total": num(self.t_total),
            "xtilde0": self.xtilde0,
            "constants": self.constants.to_dict(),
            "constants_source": self.constants_source,
            "domain": self.domain,
            "assumptions": self.assumptions,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def make_report(gc: GainConstants, eps: float, xt0_norm: float = 0.0,
                domain: dict | None = None, source: str = "estimated",
                assumptions: Sequence[str] = ()) -> SPReport:
    eps_c = epsilon_critical(gc)
    margin = 1.0 - eps / eps_c if math.isfinite(eps_c) else 1.0
    valid = eps < eps_c
    rep = SPReport(eps, eps_c, gc, margin, valid, xtilde0=xt0_norm, domain=domain or {},
                   constants_source=source, assumptions=list(assumptions))
    if valid:
        b = lemma3_bounds(gc, eps, xt0_norm)
        rep.m_xtilde_bound = b.m_xtilde
        rep.ytilde_asymptote = b.ytilde_asymptote
    if 0 < eps < 1:
        rep.t_fast, rep.t_total = transient_time(gc.beta_f, gc.beta_g, eps)
    return rep


def reduce_system(
    spec: SystemSpec,
    overrides: dict | None = None,
    metric_x: Metric | None = None,
    metric_y: Metric | None = None,
    ic=None,
    samples: int = 2048,
    seed: int = 0,
) -> SPReport:
    """Standard form, constants, eps_c and bounds for ``spec`` in one call.

    ``overrides`` replaces any estimated constant. With ``ic`` (full state)
    the reduced run and ``|x_tilde(0)|`` start from it; otherwise the worst
    case over the domain box is used.
    """
    overrides = dict(overrides or {})
    ms = to_standard_form(spec)
    nf = ms.n_fast
    box = spec.box()
    assumptions = []
    if spec.inputs:
        assumptions.append(
            "input signals are taken as u(eps*t) with bounded derivative; the bound is not checked"
        )
    names = {f.name for f in fields(GainConstants)}
    unknown = set(overrides) - names
    if unknown:
        raise KeyError(f"unknown constants {sorted(unknown)}")
    fitted = {"d_f", "a_fx", "a_fy", "d_g", "a_gx", "chi_f", "beta_f", "chi_g", "beta_g", "m_bar"}
    if ic is not None:
        ic = np.asarray(ic, dtype=float)
        y0 = ic[nf:]
        xt0 = float(np.linalg.norm(ic[:nf] - ms.x_bar(y0)))
    else:
        y0 = None
        corners = _corners(box)
        xt0 = max(float(np.linalg.norm(c[:nf] - ms.x_bar(c[nf:]))) for c in corners)
    if fitted <= set(overrides):
        gc = GainConstants.from_dict({k: overrides[k] for k in names & set(overrides)})
        source = "user"
    else:
        gc = estimate_gain_constants(ms, box, samples, seed, metric_x, metric_y, y0=y0)
        if overrides:
            gc = gc.replace(**overrides)
        source = "estimated+user" if overrides else "estimated"
    dom = {s: list(b) for s, b in zip(spec.states, box)}
    return make_report(gc, spec.eps, xt0, dom, source, assumptions)
