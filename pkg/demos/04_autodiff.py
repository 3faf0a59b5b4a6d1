"""The gradient tape and the finite-difference checks behind it.

Run: python3 demos/04_autodiff.py
"""
import numpy as np

from strwkv import autodiff as ad
from strwkv.gradcheck import max_rel_error, numeric_grad, run_checks

rng = np.random.default_rng(0)
a, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))

# Plain arrays evaluate eagerly; tape variables record the same ops.
tape = ad.Tape()
av, wv = tape.var(a), tape.var(w)
loss = ad.sum(ad.sigmoid(ad.matmul(av, wv)))
ga, gw = tape.grad(loss, [av, wv])
print("loss", float(loss.value))


def f():
    return float(np.sum(ad.sigmoid(ad.matmul(a, w))))


print(f"d/da rel err vs central differences: {max_rel_error(ga, numeric_grad(f, a)):.1e}")
print(f"d/dw rel err vs central differences: {max_rel_error(gw, numeric_grad(f, w)):.1e}")

# The same harness drives the command `strwkv gradcheck`.
for report in run_checks(trials=3):
    print(report.line())
