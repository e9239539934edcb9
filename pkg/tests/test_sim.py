import csv
import math

import numpy as np
import pytest

from neardecomp.dynsys import building_raw, compile_system, to_barycentric
from neardecomp.parser import parse_system
from neardecomp.sim import (
    BLOWUP_NORM,
    IntegrationError,
    IntegratorConfig,
    cluster_points,
    compare_full_reduced,
    integrate,
    run_ensemble,
    sample_box,
    write_csv,
)
from neardecomp.spreduce import to_standard_form


def decay(t, x):
    return -x


def test_exponential_decay():
    tr = integrate(decay, [1.0], IntegratorConfig(T=1.0))
    assert tr.t[-1] == 1.0
    assert abs(tr.y[-1, 0] - math.exp(-1)) <= 1e-8


def test_rk4_fourth_order():
    def err(dt):
        tr = integrate(decay, [1.0], IntegratorConfig(method="RK4", T=1.0, dt=dt))
        return abs(tr.y[-1, 0] - math.exp(-1))

    for dt in (0.1, 0.05):
        assert 12 <= err(dt) / err(dt / 2) <= 20


def test_adaptive_error_control_against_step_halving():
    # the default run must agree with a much finer fixed-step reference
    f = lambda t, z: np.array([z[1], -math.sin(z[0]) - 0.1 * z[1]])
    ref = integrate(f, [2.0, 0.0], IntegratorConfig(method="RK4", T=10.0, dt=1e-3))
    half = integrate(f, [2.0, 0.0], IntegratorConfig(method="RK4", T=10.0, dt=5e-4))
    assert np.max(np.abs(ref.y[-1] - half.y[-1])) < 1e-12
    tr = integrate(f, [2.0, 0.0], IntegratorConfig(T=10.0))
    assert np.max(np.abs(tr.y[-1] - half.y[-1])) <= 1e-6


def test_harmonic_energy():
    f = lambda t, z: np.array([z[1], -z[0]])
    tr = integrate(f, [1.0, 0.0], IntegratorConfig(T=100.0, n_out=1001, rtol=1e-9, atol=1e-12))
    assert np.max(np.abs((tr.y ** 2).sum(axis=1) - 1.0)) <= 1e-6


def test_raw_building_floors_equalize_without_coupling():
    field = compile_system(building_raw(epsilon=0.0))
    tr = integrate(field, [-4.0, 5.0, 3.0, -1.0], IntegratorConfig(T=20.0))
    d = to_barycentric(tr.y[-1])
    assert np.all(np.abs(d[:2]) <= 1e-6)


def test_blowup_is_flagged():
    tr = integrate(lambda t, x: x ** 2, [1.0], IntegratorConfig(T=5.0))
    assert tr.diverged
    assert tr.blowup_time == pytest.approx(1.0, abs=1e-5)
    assert np.linalg.norm(tr.y[-1]) == pytest.approx(BLOWUP_NORM, rel=1e-6)
    assert np.all(np.diff(tr.t) > 0)
    rk = integrate(lambda t, x: x ** 2, [1.0], IntegratorConfig(method="RK4", T=5.0, dt=1e-3))
    assert rk.diverged and rk.blowup_time < 1.01


def test_step_underflow_reports_time():
    with pytest.raises(IntegrationError) as info:
        integrate(lambda t, x: -1.0 / x, [1.0], IntegratorConfig(T=1.0))
    assert info.value.t == pytest.approx(0.5, abs=1e-3)


@pytest.mark.parametrize("kw", [dict(atol=0), dict(rtol=-1), dict(T=0), dict(method="Euler")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)


def test_non_finite_initial_condition():
    with pytest.raises(ValueError):
        integrate(decay, [np.nan])


def test_sample_box_philox():
    a = sample_box([(-5, 5), (0, 1)], 1000, seed=42)
    b = sample_box([(-5, 5), (0, 1)], 1000, seed=42)
    assert np.array_equal(a, b)
    assert a[:, 0].min() >= -5 and a[:, 0].max() <= 5
    assert a[:, 1].min() >= 0 and a[:, 1].max() <= 1
    assert not np.array_equal(a, sample_box([(-5, 5), (0, 1)], 1000, seed=43))
    ref = np.random.Generator(np.random.Philox(42)).random((1000, 2))
    assert np.array_equal(a[:, 1], ref[:, 1])


def test_cluster_points():
    pts = np.array([[0.0, 0.0], [0.005, 0.0], [1.0, 1.0], [0.0, 0.009], [1.0, 1.02]])
    cl = cluster_points(pts)
    assert [k for _, k in cl] == [3, 1, 1]


def test_contracting_ensemble_one_cluster():
    field = compile_system(parse_system("dyn x = -x"))
    ens = run_ensemble(field, [(-10, 10)], 8, seed=0, config=IntegratorConfig(T=40.0))
    assert ens.n_clusters == 1 and ens.n_divergent == 0
    assert abs(ens.clusters[0][0][0]) < 1e-6


def test_ensemble_bit_reproducible_and_order_stable():
    field = compile_system(building_raw(epsilon=0.3))
    cfg = IntegratorConfig(T=10.0)
    box = [(-5, 5)] * 4
    a = run_ensemble(field, box, 6, seed=9, config=cfg, workers=1)
    b = run_ensemble(field, box, 6, seed=9, config=cfg, workers=1)
    c = run_ensemble(field, box, 6, seed=9, config=cfg, workers=4)
    for x, y, z in zip(a.trajectories, b.trajectories, c.trajectories):
        assert np.array_equal(x.y, y.y) and np.array_equal(x.y, z.y)
    assert a.summary() == c.summary()


def test_threads_from_environment(monkeypatch):
    from neardecomp.sim import default_workers

    monkeypatch.setenv("NDS_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("NDS_THREADS", "lots")
    assert default_workers() == 1


def test_ensemble_needs_runs():
    with pytest.raises(ValueError):
        run_ensemble(decay, [(0, 1)], 0, seed=0)


def test_csv_formats(tmp_path):
    field = compile_system(parse_system("fast a\nslow b\nparams { epsilon = 0.5 }\ndyn a = -a\ndyn b = -epsilon*b"))
    ens = run_ensemble(field, [(0, 1), (0, 1)], 2, seed=1, config=IntegratorConfig(T=1.0, n_out=11))
    write_csv(tmp_path / "all.csv", ens.trajectories)
    rows = list(csv.reader(open(tmp_path / "all.csv")))
    assert rows[0] == ["run", "t", "a", "b"]
    assert len(rows) == 1 + 22 and rows[12][0] == "1"
    write_csv(tmp_path / "one.csv", ens.trajectories[:1])
    rows = list(csv.reader(open(tmp_path / "one.csv")))
    assert rows[0] == ["t", "a", "b"]
    assert float(rows[-1][0]) == 1.0
    assert float(rows[1][1]) == ens.initial_conditions[0][0]


class TestCompare:
    def test_closed_form_two_block(self):
        ms = to_standard_form(parse_system("params { epsilon = 0.2 }\nfast x\nslow y\ndyn x = -x\ndyn y = -epsilon*y"))
        cfg = IntegratorConfig(T=10.0, n_out=101, atol=1e-12, rtol=1e-11)
        res = compare_full_reduced(ms, [3.0, 2.0], cfg, t_after=1.0)
        assert np.max(res.ytilde_norm) <= 1e-10  # identical y dynamics, distinct step sequences
        assert np.allclose(res.xtilde_norm, 3.0 * np.exp(-res.t), atol=1e-9)

    def test_zero_epsilon(self):
        ms = to_standard_form(parse_system("params { epsilon = 0 }\nfast x\nslow y\n"
                                           "dyn x = -(x - y)\ndyn y = epsilon*(-y + x^2)"))
        res = compare_full_reduced(ms, [4.0, 1.5], IntegratorConfig(T=30.0), t_after=20.0)
        assert np.all(res.reduced.y == 1.5) and np.all(res.full.y[:, 1] == 1.5)
        assert res.sup_ytilde_after == 0.0
        assert res.sup_xtilde_after <= 1e-6

    def test_offset_start(self):
        ms = to_standard_form(parse_system("params { epsilon = 0.2 }\nfast x\nslow y\ndyn x = -x\ndyn y = -epsilon*y"))
        res = compare_full_reduced(ms, [0.0, 2.0], IntegratorConfig(T=5.0, atol=1e-12, rtol=1e-11), y_offset=[0.5])
        assert res.ytilde_norm[0] == pytest.approx(0.5)
        assert np.allclose(res.ytilde_norm, 0.5 * np.exp(-0.2 * res.t), atol=1e-9)
