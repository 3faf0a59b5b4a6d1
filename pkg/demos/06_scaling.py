"""FLOP counts and wall-clock scaling of the attention kernels.

Run: python3 demos/06_scaling.py
"""
from strwkv import bench

print("analytic FLOPs per kernel")
for T in (1024, 2048, 4096):
    row = {k: bench.count_flops(k, T, 8, q=2) for k in bench.KERNELS}
    print(f"  T={T:5d} " + "  ".join(f"{k}={v:.3g}" for k, v in row.items()))

records = bench.sweep(["bi_wkv_scan", "re_wkv"], [2048, 4096, 8192, 16384], C=8, repeats=7)
records += bench.sweep(["quadratic_attention_reference"], [512, 1024, 2048, 4096], C=8)
for r in records:
    print(f"  {r.kernel:30s} T={r.T:5d} {r.wall_ns / 1e6:8.2f} ms  peak {r.peak_bytes / 1e6:6.2f} MB")
scan = [r for r in records if r.kernel == "bi_wkv_scan"]
print("scan time vs T, linear fit R^2:", round(bench.linear_fit_r2([r.T for r in scan], [r.wall_ns for r in scan]), 4))
quad = [r for r in records if r.kernel == "quadratic_attention_reference"]
print("softmax attention doubling ratios:", [round(x, 2) for x in bench.doubling_ratios(quad)])
