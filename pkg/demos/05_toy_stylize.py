"""Train the tiny network on one synthetic pair, then stylize and save images.

Run: python3 demos/05_toy_stylize.py [steps] [outdir]   (defaults: 60, ./demo_out)
"""
import pathlib
import sys

from strwkv.fileio import load_weights, save_ppm, save_weights
from strwkv.model import ModelConfig, param_count, stylize
from strwkv.train import toy_pair, train_toy

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 60
out = pathlib.Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(exist_ok=True)

content, style = toy_pair(32)
config = ModelConfig.tiny()
result = train_toy(config, content, style, steps, seed=0)
print(f"{param_count(result.model):,} parameters; loss {result.curve[0]:.2f} -> {result.curve[-1]:.2f}")

save_weights(result.model, out / "tiny.bin")
model = load_weights(out / "tiny.bin")  # bit-exact round trip
for name, img in (("content", content), ("style", style), ("stylized", stylize(content, style, model))):
    save_ppm(img, out / f"{name}.ppm")
print("wrote", sorted(p.name for p in out.iterdir()))
