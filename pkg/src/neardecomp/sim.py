"""ODE integration, seeded trajectory ensembles and full-vs-reduced comparison."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

BLOWUP_NORM = 1e6
CLUSTER_RADIUS = 1e-2


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (reached t={t:.6g})")
        self.t = t


@dataclass
class IntegratorConfig:
    method: str = "RK45"  # Dormand-Prince 5(4), or "RK4" fixed step
    atol: float = 1e-9
    rtol: float = 1e-7
    max_step: float = np.inf
    T: float = 10.0
    n_out: int = 201
    dt: float = 1e-2  # RK4 step

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("tolerances must be positive")
        if self.T <= 0:
            raise ValueError("horizon must be positive")
        if self.method not in ("RK45", "RK4"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray  # (len(t), dim)
    names: tuple[str, ...] = ()
    diverged: bool = False
    blowup_time: float | None = None

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]


def _blowup_event(t, z):
    return np.linalg.norm(z) - BLOWUP_NORM


_blowup_event.terminal = True
_blowup_event.direction = 1


def integrate(field, x0, config: IntegratorConfig | None = None, t_eval=None) -> Trajectory:
    """Integrate ``dz/dt = field(t, z)`` from ``z(0) = x0`` over ``[0, config.T]``.

    Integration stops with ``diverged=True`` once the state norm reaches
    ``BLOWUP_NORM``.
    """
    config = config or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial condition must be finite")
    names = tuple(getattr(field, "names", ()))
    if config.method == "RK4":
        return _rk4(field, x0, config, names)
    if t_eval is None:
        t_eval = np.linspace(0.0, config.T, config.n_out)
    sol = solve_ivp(
        field,
        (0.0, config.T),
        x0,
        method="RK45",
        t_eval=t_eval,
        events=_blowup_event,
        rtol=config.rtol,
        atol=config.atol,
        max_step=config.max_step,
    )
    if sol.status == -1:
        t_reached = float(sol.t[-1]) if len(sol.t) else 0.0
        raise IntegrationError(sol.message, t_reached)
    t, y = sol.t, sol.y.T
    if sol.status == 1:
        tb = float(sol.t_events[0][0])
        yb = sol.y_events[0][0]
        t = np.append(t, tb)
        y = np.vstack([y, yb]) if len(y) else yb[None, :]
        return Trajectory(t, y, names, True, tb)
    return Trajectory(t, y, names)


def _rk4(field, x0, config: IntegratorConfig, names) -> Trajectory:
    n = max(1, int(round(config.T / config.dt)))
    h = config.T / n
    ts = np.linspace(0.0, config.T, n + 1)
    ys = np.empty((n + 1, len(x0)))
    ys[0] = x = x0
    for i in range(n):
        t = ts[i]
        k1 = field(t, x)
        k2 = field(t + h / 2, x + h / 2 * k1)
        k3 = field(t + h / 2, x + h / 2 * k2)
        k4 = field(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[i + 1] = x
        if np.linalg.norm(x) >= BLOWUP_NORM:
            return Trajectory(ts[: i + 2], ys[: i + 2], names, True, float(ts[i + 1]))
    return Trajectory(ts, ys, names)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleResult:
    trajectories: list[Trajectory]
    initial_conditions: np.ndarray
    ic_box: list[tuple[float, float]]
    seed: int
    clusters: list[tuple[np.ndarray, int]] = field(default_factory=list)

    @property
    def n_divergent(self) -> int:
        return sum(tr.diverged for tr in self.trajectories)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def summary(self) -> dict:
        return {
            "runs": len(self.trajectories),
            "seed": self.seed,
            "ic_box": [list(b) for b in self.ic_box],
            "divergent": self.n_divergent,
            "clusters": [
                {"center": [float(v) for v in c], "members": int(k)} for c, k in self.clusters
            ],
        }


def sample_box(box: Sequence[tuple[float, float]], n: int, seed: int) -> np.ndarray:
    """Uniform samples from a box using the counter-based Philox generator."""
    rng = np.random.Generator(np.random.Philox(seed))
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    return lo + (hi - lo) * rng.random((n, len(box)))


def cluster_points(points: np.ndarray, radius: float = CLUSTER_RADIUS) -> list[tuple[np.ndarray, int]]:
    """Greedy clustering in input order; a point joins the first center within ``radius``."""
    centers: list[np.ndarray] = []
    counts: list[int] = []
    for p in np.atleast_2d(points):
        for i, c in enumerate(centers):
            if np.linalg.norm(p - c) <= radius:
                counts[i] += 1
                break
        else:
            centers.append(np.array(p, dtype=float))
            counts.append(1)
    return list(zip(centers, counts))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("NDS_THREADS", "1")))
    except ValueError:
        return 1


def run_ensemble(
    field,
    ic_box: Sequence[tuple[float, float]],
    n_runs: int,
    seed: int,
    config: IntegratorConfig | None = None,
    ic_map: Callable[[np.ndarray], np.ndarray] | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    workers: int | None = None,
) -> EnsembleResult:
    """Integrate ``n_runs`` trajectories from seeded uniform draws in ``ic_box``.

    ``ic_map`` converts a box sample into the field's coordinates; ``project``
    maps final states before clustering. Results keep IC order whatever the
    number of worker threads.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    config = config or IntegratorConfig()
    samples = sample_box(ic_box, n_runs, seed)
    ics = np.array([ic_map(s) for s in samples]) if ic_map else samples
    workers = workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trajs = list(pool.map(lambda x0: integrate(field, x0, config), ics))
    else:
        trajs = [integrate(field, x0, config) for x0 in ics]
    finals = [tr.final for tr in trajs if not tr.diverged]
    if project is not None:
        finals = [project(f) for f in finals]
    clusters = cluster_points(np.array(finals)) if finals else []
    return EnsembleResult(trajs, ics, list(ic_box), seed, clusters)


def write_csv(path, trajectories: Sequence[Trajectory], names: Sequence[str] | None = None) -> None:
    """Long-format CSV: ``run,t,<state names...>``; a single run omits ``run``."""
    names = list(names or trajectories[0].names)
    single = len(trajectories) == 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["t"] if single else ["run", "t"]) + names)
        for k, tr in enumerate(trajectories):
            for ti, yi in zip(tr.t, tr.y):
                row = [repr(float(ti))] + [repr(float(v)) for v in yi]
                w.writerow(row if single else [k] + row)


# ---------------------------------------------------------------------------
# full vs reduced


@dataclass
class ComparisonResult:
    t: np.ndarray
    xtilde_norm: np.ndarray
    ytilde_norm: np.ndarray
    full: Trajectory
    reduced: Trajectory
    t_after: float

    @property
    def diverged(self) -> bool:
        return self.full.diverged or self.reduced.diverged

    def _after(self, arr):
        mask = self.t >= self.t_after
        return float(arr[mask].max()) if mask.any() else float("nan")

    @property
    def sup_xtilde_after(self) -> float:
        return self._after(self.xtilde_norm)

    @property
    def sup_ytilde_after(self) -> float:
        return self._after(self.ytilde_norm)

    @property
    def sup_xtilde(self) -> float:
        return float(self.xtilde_norm.max())


def compare_full_reduced(
    system,
    ic,
    config: IntegratorConfig | None = None,
    t_after: float = 0.0,
    y_offset=None,
) -> ComparisonResult:
    """Integrate the full fast/slow system and the reduced slow dynamics side by side.

    ``system`` is a :class:`~neardecomp.dynsys.ModularSystem`; ``ic`` is the
    full initial state in original coordinates. The reduced trajectory starts
    at ``y(0) - y_offset``. Errors are ``|x - x_bar(y)|`` and ``|y - y_bar|``.
    """
    from .dynsys import compile_system

    config = config or IntegratorConfig()
    ic = np.asarray(ic, dtype=float)
    nf = system.n_fast
    full_field = compile_system(system.spec)
    grid = np.linspace(0.0, config.T, config.n_out)
    full = integrate(full_field, ic, config, t_eval=grid)
    y0 = ic[nf:] - (0.0 if y_offset is None else np.asarray(y_offset, dtype=float))
    eps = system.epsilon

    def reduced_rhs(t, y):
        return eps * system.g_bar(y, t)

    reduced = integrate(reduced_rhs, y0, config, t_eval=grid)
    n = min(len(full.t), len(reduced.t))
    t = full.t[:n]
    xs = full.y[:n, :nf]
    ys = full.y[:n, nf:]
    xt = np.array([np.linalg.norm(x - system.x_bar(y, ti)) for x, y, ti in zip(xs, ys, t)])
    yt = np.linalg.norm(ys - reduced.y[:n], axis=1)
    return ComparisonResult(t, xt, yt, full, reduced, t_after)
