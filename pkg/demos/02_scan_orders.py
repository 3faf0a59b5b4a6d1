"""How a 2D feature map becomes a 1D token sequence.

Run: python3 demos/02_scan_orders.py
"""
import numpy as np

from strwkv.scan import ScanPlan, baseline_order, rotation, s_merge, s_scan


def show(title, perm, h, w):
    # position of each pixel in the sequence
    rank = np.empty_like(perm)
    rank[perm] = np.arange(perm.size)
    print(title)
    print(rank.reshape(h, w), "\n")


show("row-major (identity)", ScanPlan("identity", 4, 4).permutation(), 4, 4)
show("zigzag", baseline_order("zigzag", 4, 4), 4, 4)
show("skip, step 2: four interleaved groups", ScanPlan("skip", 4, 4, 2).permutation(), 4, 4)
show("skip, step 2, column-major inside groups",
     ScanPlan("skip", 4, 4, 2, within_group="column-major").permutation(), 4, 4)

# Pixels two apart in the image become sequence neighbours under the skip scan.
plan = ScanPlan("skip", 8, 8, 2)
x = np.random.default_rng(0).normal(size=(3, 8, 8))
seq = s_scan(x, plan)
print("sequence shape", seq.shape, "| merge restores the map:", np.array_equal(s_merge(seq, plan), x))

# Successive recurrent passes alternate between these orders.
print("per-pass plans:", [(p.variant, p.p, p.within_group) for p in rotation("skip", 8, 8, 2)])
