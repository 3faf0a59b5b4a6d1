"""Token shifting: mixing each pixel with its neighbours before projection.

Run: python3 demos/03_token_shift.py
"""
import numpy as np

from strwkv.shift import DeformShiftParams, deform_sample, deform_shift, omni_shift, quad_shift

np.set_printoptions(precision=2, suppress=True)

hot = np.zeros((4, 5, 5))
hot[:, 2, 2] = 1.0
out = quad_shift(hot)
for q, name in enumerate(("left", "right", "up", "down")):
    i, j = np.argwhere(out[q] == 1)[0]
    print(f"quad quarter {q} moves the hot pixel {name}: (2,2) -> ({i},{j})")

# A freshly initialised deformable shift is exactly the identity.
x = np.random.default_rng(1).normal(size=(2, 5, 5))
ident = DeformShiftParams.identity(2)
print("identity at init:", np.array_equal(deform_shift(x, ident), x))

# With zero offsets it is a depthwise 3x3 convolution.
kernel = np.random.default_rng(2).normal(size=(2, 3, 3))
print("zero offsets == depthwise conv:", np.array_equal(deform_sample(x, np.zeros((18, 5, 5)), kernel),
                                                        omni_shift(x, kernel)))

# Offsets move the sampling points off the grid; bilinear interpolation fills in.
ramp = np.arange(5.0)[None, :, None].repeat(5, axis=2)
offsets = np.zeros((18, 5, 5))
offsets[8] = 0.5  # centre tap, half a pixel down
print("ramp sampled half a pixel lower:\n", deform_sample(ramp, offsets, ident.kernel[:1])[0])
