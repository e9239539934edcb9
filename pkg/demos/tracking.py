#!/usr/bin/env python3
"""How closely the reduced slow model follows the full building.

For each eps below eps_c the full barycentric system and the reduced
one-state model start from the same slow state. After the transient
t_total, the fast error |x_tilde| and the slow error |y - y_bar| are compared
with their guaranteed bounds. The slow error shrinks roughly like eps.
"""
from neardecomp.casestudy import tracking_experiment

print(f"{'eps/eps_c':>9} {'eps':>8} {'t_total':>9} {'max|x~|':>10} {'M_x~':>8} {'max|y-ybar|':>12} {'bound':>8}")
for ratio in (0.1, 0.25, 0.5, 0.9):
    runs = tracking_experiment(ratio, n_ics=10, seed=7)
    eps, t_total = runs[0].epsilon, runs[0].t_total
    xt = max(r.sup_xtilde_after for r in runs)
    m = min(r.m_xtilde for r in runs)
    yt = max(r.sup_ytilde_after for r in runs)
    yb = min(r.ytilde_asymptote for r in runs)
    print(f"{ratio:9.2f} {eps:8.4f} {t_total:9.1f} {xt:10.2e} {m:8.3f} {yt:12.2e} {yb:8.3f}")
