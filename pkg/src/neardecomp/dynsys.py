"""Compiled vector fields, metrics and the building case study."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import (
    DomainError,
    Expr,
    FuncDef,
    differentiate,
    inline,
    lambdify,
    substitute,
)
from .parser import TIME, SystemSpec, parse_system

_NUMERIC_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


class VectorField:
    """Right-hand side ``z -> F(t, z)`` with a Jacobian ``dF/dz``.

    ``dim`` is the number of outputs; ``variables`` names the inputs ``z``
    (they differ for block views such as the fast rows of a full system).
    Batch evaluators take ``X`` of shape (N, len(variables)).
    """

    def __init__(
        self,
        names: Sequence[str],
        variables: Sequence[str],
        fun: Callable[[float, np.ndarray], np.ndarray],
        jac: Callable[[float, np.ndarray], np.ndarray],
        batch_fun: Callable | None = None,
        batch_jac: Callable | None = None,
        exprs: Sequence[Expr] | None = None,
    ):
        self.names = tuple(names)
        self.variables = tuple(variables)
        self._fun = fun
        self._jac = jac
        self._batch_fun = batch_fun
        self._batch_jac = batch_jac
        self.exprs = tuple(exprs) if exprs is not None else None

    @property
    def dim(self) -> int:
        return len(self.names)

    def __call__(self, t: float, z) -> np.ndarray:
        return self._fun(t, np.asarray(z, dtype=float))

    def jacobian(self, t: float, z) -> np.ndarray:
        return self._jac(t, np.asarray(z, dtype=float))

    def batch(self, t, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self._batch_fun is not None:
            return self._batch_fun(t, Z)
        ts = np.broadcast_to(np.asarray(t, dtype=float), (len(Z),))
        return np.array([self._fun(ti, z) for ti, z in zip(ts, Z)]).reshape(len(Z), self.dim)

    def batch_jacobian(self, t, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self._batch_jac is not None:
            return self._batch_jac(t, Z)
        ts = np.broadcast_to(np.asarray(t, dtype=float), (len(Z),))
        return np.array([self._jac(ti, z) for ti, z in zip(ts, Z)]).reshape(
            len(Z), self.dim, len(self.variables)
        )

    def rows(self, idx: Sequence[int]) -> "VectorField":
        """Block view keeping only the outputs ``idx``."""
        idx = list(idx)
        exprs = [self.exprs[i] for i in idx] if self.exprs is not None else None
        bf = self._batch_fun
        bj = self._batch_jac
        return VectorField(
            [self.names[i] for i in idx],
            self.variables,
            lambda t, z: self._fun(t, z)[idx],
            lambda t, z: self._jac(t, z)[idx],
            (lambda t, Z: bf(t, Z)[:, idx]) if bf is not None else None,
            (lambda t, Z: bj(t, Z)[:, idx]) if bj is not None else None,
            exprs,
        )

    @classmethod
    def from_exprs(
        cls,
        exprs: Sequence[Expr],
        variables: Sequence[str],
        names: Sequence[str] | None = None,
        params: Mapping[str, float] | None = None,
        funcs: Mapping[str, FuncDef] | None = None,
        inputs: Mapping[str, Expr] | None = None,
    ) -> "VectorField":
        """Compile expressions of ``variables``, parameters and time ``t``."""
        funcs = funcs or {}
        flat = [_flatten(e, funcs, inputs or {}) for e in exprs]
        jac_exprs = [[differentiate(e, v) for v in variables] for e in flat]
        argnames = [TIME, *variables]
        n, m = len(flat), len(variables)
        f_math = lambdify(flat, argnames, "math", params)
        j_math = lambdify([d for row in jac_exprs for d in row], argnames, "math", params)
        f_np = lambdify(flat, argnames, "numpy", params)
        j_np = lambdify([d for row in jac_exprs for d in row], argnames, "numpy", params)

        def fun(t, z):
            try:
                out = np.array(f_math(t, *z), dtype=float)
            except _NUMERIC_ERRORS as exc:
                raise DomainError(f"{exc} at t={t}, state={list(z)}") from None
            if not np.all(np.isfinite(out)):
                raise DomainError(f"non-finite derivative at t={t}, state={list(z)}")
            return out

        def jac(t, z):
            try:
                out = np.array(j_math(t, *z), dtype=float)
            except _NUMERIC_ERRORS as exc:
                raise DomainError(f"{exc} at t={t}, state={list(z)}") from None
            if not np.all(np.isfinite(out)):
                raise DomainError(f"non-finite Jacobian at t={t}, state={list(z)}")
            return out.reshape(n, m)

        def batch_fun(t, Z):
            N = len(Z)
            tt = np.broadcast_to(np.asarray(t, dtype=float), (N,))
            with np.errstate(all="ignore"):
                cols = f_np(tt, *Z.T) if m else f_np(tt)
            out = np.stack([np.broadcast_to(c, (N,)) for c in cols], axis=1)
            _check_batch(out, Z)
            return out

        def batch_jac(t, Z):
            N = len(Z)
            tt = np.broadcast_to(np.asarray(t, dtype=float), (N,))
            with np.errstate(all="ignore"):
                cols = j_np(tt, *Z.T) if m else j_np(tt)
            out = np.stack([np.broadcast_to(c, (N,)) for c in cols], axis=1).reshape(N, n, m)
            _check_batch(out, Z)
            return out

        vf = cls(names or [f"f{i}" for i in range(n)], variables, fun, jac, batch_fun, batch_jac, flat)
        vf.jacobian_exprs = jac_exprs
        return vf


def _check_batch(out: np.ndarray, Z: np.ndarray) -> None:
    bad = ~np.isfinite(out.reshape(len(out), -1)).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise DomainError(f"non-finite value at state={list(Z[k])}")


def _flatten(e: Expr, funcs: Mapping[str, FuncDef], inputs: Mapping[str, Expr]) -> Expr:
    e = inline(e, funcs)
    if inputs:
        e = substitute(e, {k: inline(v, funcs) for k, v in inputs.items()})
    return e


def compile_system(spec: SystemSpec, **overrides: float) -> VectorField:
    """Vector field of every state of ``spec``; parameters may be overridden.

    The result carries ``fast_slice`` and ``slow_slice`` index ranges and the
    originating ``spec``.
    """
    if overrides:
        spec = spec.with_params(**overrides)
    vf = VectorField.from_exprs(
        [spec.rhs[s] for s in spec.states],
        spec.states,
        spec.states,
        spec.params,
        spec.funcs,
        spec.inputs,
    )
    nf = len(spec.fast)
    vf.fast_slice = slice(0, nf)
    vf.slow_slice = slice(nf, nf + len(spec.slow))
    vf.spec = spec
    return vf


# ---------------------------------------------------------------------------
# metrics


class Metric:
    """Coordinate transform ``Theta(t, z)`` defining ``M = Theta^T Theta``.

    Built from a constant matrix, from expressions (``Theta_dot`` is then
    exact) or from a callable (``Theta_dot`` by central differences along the
    flow with step ``h``).
    """

    h = 1e-6

    def __init__(self, constant=None, exprs=None, variables=None, fn=None, params=None, funcs=None):
        self.constant = None if constant is None else np.atleast_2d(np.asarray(constant, dtype=float))
        self._fn = fn
        self.variables = tuple(variables or ())
        self.dim = None
        if self.constant is not None:
            if self.constant.shape[0] != self.constant.shape[1]:
                raise ValueError("metric must be square")
            if np.linalg.matrix_rank(self.constant) < self.constant.shape[0]:
                raise np.linalg.LinAlgError("metric is singular")
            self.dim = self.constant.shape[0]
            self._inv = np.linalg.inv(self.constant)
        if exprs is not None:
            rows = [list(r) for r in exprs]
            self.dim = len(rows)
            flat = [inline(e, funcs or {}) for r in rows for e in r]
            args = [TIME, *self.variables]
            self._theta_np = lambdify(flat, args, "numpy", params)
            dflat = [[differentiate(e, v) for e in flat] for v in args]
            self._dtheta_np = [lambdify(d, args, "numpy", params) for d in dflat]
        self._exprs = exprs is not None

    @classmethod
    def identity(cls, n: int) -> "Metric":
        return cls(constant=np.eye(n))

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    @property
    def chi(self) -> float | None:
        """Condition number for constant metrics (spectral norm)."""
        if self.constant is None:
            return None
        return float(np.linalg.cond(self.constant, 2))

    def theta_batch(self, t, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        N = len(Z)
        if self.constant is not None:
            return np.broadcast_to(self.constant, (N, self.dim, self.dim))
        tt = np.broadcast_to(np.asarray(t, dtype=float), (N,))
        if self._exprs:
            cols = self._theta_np(tt, *Z.T)
            return np.stack([np.broadcast_to(c, (N,)) for c in cols], 1).reshape(N, self.dim, self.dim)
        out = np.array([self._fn(ti, z) for ti, z in zip(tt, Z)], dtype=float)
        self.dim = out.shape[1]
        return out

    def theta(self, t, z) -> np.ndarray:
        return self.theta_batch(t, np.asarray(z, dtype=float)[None, :])[0]

    def theta_dot_batch(self, t, Z, dZ) -> np.ndarray:
        """Time derivative of Theta along the flow ``dZ`` (rows of the full field)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        N = len(Z)
        if self.constant is not None:
            return np.zeros((N, self.dim, self.dim))
        tt = np.broadcast_to(np.asarray(t, dtype=float), (N,))
        if self._exprs:
            rates = [np.ones(N)] + [dZ[:, k] for k in range(Z.shape[1])]
            out = np.zeros((N, self.dim * self.dim))
            for fn, r in zip(self._dtheta_np, rates):
                cols = fn(tt, *Z.T)
                out += np.stack([np.broadcast_to(c, (N,)) for c in cols], 1) * r[:, None]
            return out.reshape(N, self.dim, self.dim)
        h = self.h
        plus = self.theta_batch(tt + h, Z + h * dZ)
        minus = self.theta_batch(tt - h, Z - h * dZ)
        return (plus - minus) / (2 * h)


# ---------------------------------------------------------------------------
# modular structure produced by the reduction


@dataclass
class ModularSystem:
    """Standard singular-perturbation form of a fast/slow system.

    Fast rows ``f_tilde + eps*delta_f``, slow rows ``eps*(g_bar + delta_g)``
    in the shifted coordinates ``x_tilde = x - x_bar(y, t)``. Every block is a
    callable ``(x_tilde, y, t) -> array`` (``g_bar`` takes ``(y, t)``).
    """

    fast: tuple[str, ...]
    slow: tuple[str, ...]
    epsilon: float
    f_tilde: Callable
    delta_f: Callable
    g_bar: Callable
    delta_g: Callable
    x_bar: Callable
    g_bar_field: VectorField
    fast_field: VectorField
    spec: SystemSpec
    metrics: dict = field(default_factory=dict)

    @property
    def n_fast(self) -> int:
        return len(self.fast)

    @property
    def n_slow(self) -> int:
        return len(self.slow)


# ---------------------------------------------------------------------------
# building case study

CONDUCTANCE = "x + 0.5*sin(x)"


@dataclass(frozen=True)
class BuildingModel:
    """Rooms on floors exchanging heat; intra-floor conductance ``f``, inter-floor ``g_j``.

    ``funcs`` holds DSL bodies in the variable ``x``; ``g_j`` couples room
    ``j`` of adjacent floors. Defaults are the reversed air-conditioning case
    ``f = g1 = x + sin(x)/2`` and ``g2 = -k g1`` with ``k = 1/2``.
    """

    floors: int = 2
    rooms: int = 2
    funcs: tuple[tuple[str, str], ...] = (
        ("f", CONDUCTANCE),
        ("g1", CONDUCTANCE),
        ("g2", "-k*g1(x)"),
    )
    params: tuple[tuple[str, float], ...] = (("k", 0.5),)
    epsilon: float = 0.1

    def _header(self, name: str) -> list[str]:
        ps = "; ".join([f"epsilon = {self.epsilon!r}"] + [f"{k} = {v!r}" for k, v in self.params])
        lines = [f"system {name}", f"params {{ {ps} }}"]
        lines += [f"func {n}(x) = {body}" for n, body in self.funcs]
        return lines

    def room(self, i: int, j: int) -> str:
        if self.floors < 10 and self.rooms < 10:
            return f"x{i}{j}"
        return f"x{i}_{j}"

    def raw_source(self) -> str:
        n, m = self.floors, self.rooms
        if n < 1 or m < 1:
            raise ValueError("need at least one floor and one room")
        names = {fn for fn, _ in self.funcs}
        needed = {"f"} if m > 1 else set()
        if n > 1:
            needed |= {f"g{j}" for j in range(1, m + 1)}
        if needed - names:
            raise ValueError(f"missing conductance functions {sorted(needed - names)}")
        terms: dict[tuple[int, int], list[str]] = {(i, j): [] for i in range(1, n + 1) for j in range(1, m + 1)}
        for i in range(1, n + 1):
            for j in range(1, m):
                a, b = self.room(i, j), self.room(i, j + 1)
                terms[i, j].append(f"+ f({b} - {a})")
                terms[i, j + 1].append(f"- f({b} - {a})")
        for i in range(1, n):
            for j in range(1, m + 1):
                a, b = self.room(i, j), self.room(i + 1, j)
                terms[i, j].append(f"+ epsilon*g{j}({b} - {a})")
                terms[i + 1, j].append(f"- epsilon*g{j}({b} - {a})")
        lines = self._header("building_raw")
        for (i, j), ts in terms.items():
            body = " ".join(ts) if ts else "0"
            if body.startswith("+ "):
                body = body[2:]
            lines.append(f"dyn {self.room(i, j)} = {body}")
        return "\n".join(lines) + "\n"

    def raw(self) -> SystemSpec:
        return parse_system(self.raw_source())

    def barycentric_source(self, form: str = "lumped", bound: float = 10.0) -> str:
        if (self.floors, self.rooms) != (2, 2):
            raise ValueError("barycentric coordinates are defined for 2 floors x 2 rooms only")
        if form == "lumped":
            f1, f2 = "f(d1)", "f(d2)"
        elif form == "exact":
            f1, f2 = "f(2*d1)", "f(2*d2)"
        else:
            raise ValueError(f"unknown form {form!r}")
        lines = self._header(f"building_{form}")
        lines += [
            "fast d1, d2",
            "slow D",
            f"dyn d1 = -{f1} + (epsilon/2)*(g2(D + d2 - d1) - g1(D + d1 - d2))",
            f"dyn d2 = -{f2} + (epsilon/2)*(g1(D + d1 - d2) - g2(D + d2 - d1))",
            "dyn D = -epsilon*(g1(D + d1 - d2) + g2(D + d2 - d1))",
            f"domain d1 in [-{bound}, {bound}]; d2 in [-{bound}, {bound}]; D in [-{bound}, {bound}]",
        ]
        return "\n".join(lines) + "\n"

    def barycentric(self, form: str = "lumped", bound: float = 10.0) -> SystemSpec:
        """Three-state fast/slow form.

        ``form="lumped"`` keeps the intra-floor term as ``f(delta_i)``;
        ``form="exact"`` is the exact image of the raw dynamics under
        ``to_barycentric``, where that term reads ``f(2 delta_i)``.
        """
        return parse_system(self.barycentric_source(form, bound))


def to_barycentric(x) -> np.ndarray:
    """(x11, x12, x21, x22) -> (delta1, delta2, Delta); works row-wise on 2-D input."""
    x = np.asarray(x, dtype=float)
    x11, x12, x21, x22 = np.moveaxis(x, -1, 0)
    return np.stack(
        [0.5 * (x12 - x11), 0.5 * (x22 - x21), 0.5 * ((x22 + x21) - (x12 + x11))], axis=-1
    )


def from_barycentric(z, mean: float = 0.0) -> np.ndarray:
    """Inverse of :func:`to_barycentric` given the conserved mean temperature."""
    z = np.asarray(z, dtype=float)
    d1, d2, D = np.moveaxis(z, -1, 0)
    m1, m2 = mean - D / 2, mean + D / 2
    return np.stack([m1 - d1, m1 + d1, m2 - d2, m2 + d2], axis=-1)


def building_raw(floors: int = 2, rooms: int = 2, epsilon: float = 0.1, **kw) -> SystemSpec:
    return BuildingModel(floors, rooms, epsilon=epsilon, **kw).raw()


def building_barycentric(epsilon: float = 0.1, form: str = "lumped", bound: float = 10.0, **kw) -> SystemSpec:
    return BuildingModel(epsilon=epsilon, **kw).barycentric(form, bound)
