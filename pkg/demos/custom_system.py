#!/usr/bin/env python3
"""Analysing a system written in the modelling language.

A fast state x is slaved to a slow state y through a saturating coupling.
We certify contraction of each block, then ask whether eps = 0.05 is small
enough for the reduced model x = x_bar(y) to be trusted.
"""
from neardecomp.contraction import certify
from neardecomp.dynsys import compile_system
from neardecomp.parser import parse_system
from neardecomp.spreduce import reduce_system

src = """
params { epsilon = 0.05 }
fast x
slow y
dyn x = -(x - tanh(y))
dyn y = -epsilon*(y + 0.5*x)
domain x in [-5, 5]; y in [-5, 5]
"""
spec = parse_system(src)
field = compile_system(spec)
box = [(-5.0, 5.0)] * 2

fast = certify(field, domain=box, block=[0])
print(f"fast block: beta = {fast.beta:.4f}, chi = {fast.chi:.1f}")

# the slow field is scaled by epsilon, so certify the unscaled rate
slow = certify(compile_system(spec, epsilon=1.0), domain=box, block=[1])
print(f"slow block: beta = {slow.beta:.4f} (per unit epsilon)")

rep = reduce_system(spec, ic=[3.0, -2.0])
print(f"\neps = {rep.epsilon}, eps_c = {rep.epsilon_c:.4f}, valid = {rep.valid}")
if rep.valid:
    print(f"fast error bound M_x~ = {rep.m_xtilde_bound:.4f}")
    print(f"slow error asymptote  = {rep.ytilde_asymptote:.4f}")
    print(f"transient lasts about t_total = {rep.t_total:.1f}")
