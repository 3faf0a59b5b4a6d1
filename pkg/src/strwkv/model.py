"""Four-level U-shaped encoder/decoder with AdaIN skip fusion."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .block import init_block, run_block
from .scan import rotation
from .shift import SHIFT_VARIANTS

PAD_MULTIPLE = 16


@dataclass
class ModelConfig:
    base_width: int = 48
    blocks: tuple = (4, 6, 6, 8)
    q: int = 2
    p: int = 2
    shift: str = "deform"
    scan: str = "skip"
    hidden_ratio: int = 4
    adain_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.blocks = tuple(int(n) for n in self.blocks)
        if len(self.blocks) != 4 or any(n < 0 for n in self.blocks):
            raise ValueError("blocks must list four non-negative counts")
        if self.base_width < 4 or self.base_width % 4:
            raise ValueError("base width must be a positive multiple of 4")
        if self.q < 1 or self.p < 1:
            raise ValueError("q and p must be >= 1")
        if self.shift not in SHIFT_VARIANTS:
            raise ValueError(f"unknown shift variant {self.shift!r}")
        if self.scan not in ("skip", "bidirectional", "zigzag", "identity"):
            raise ValueError(f"unknown scan variant {self.scan!r}")

    @property
    def widths(self) -> list[int]:
        c = self.base_width
        return [c, 2 * c, 4 * c, 8 * c]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        return d

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        kw.setdefault("base_width", 8)
        kw.setdefault("blocks", (1, 1, 1, 1))
        return cls(**kw)


@dataclass
class StyleTransferModel:
    config: ModelConfig
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, dtype=np.float64) -> "StyleTransferModel":
        return cls(config, init_params(config, dtype))


def _conv_init(rng, cout, cin, k, dtype):
    bound = 1.0 / np.sqrt(cin * k * k)
    return (rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype),
            rng.uniform(-bound, bound, cout).astype(dtype))


def init_params(cfg: ModelConfig, dtype=np.float64) -> dict:
    rng = np.random.default_rng(cfg.seed)
    widths = cfg.widths
    p = {}

    def conv(name, cout, cin, k):
        p[f"{name}.w"], p[f"{name}.b"] = _conv_init(rng, cout, cin, k, dtype)

    conv("in_proj", widths[0], 3, 3)
    for lvl in range(4):
        if lvl > 0:
            conv(f"down{lvl}", widths[lvl - 1] // 2, widths[lvl - 1], 1)
        for i in range(cfg.blocks[lvl]):
            p.update(init_block(rng, f"enc{lvl + 1}.{i}", widths[lvl], cfg.shift, cfg.hidden_ratio, dtype))
    for lvl in (2, 1, 0):
        conv(f"up{lvl + 1}", widths[lvl], widths[lvl + 1] // 4, 1)
        conv(f"fuse{lvl + 1}", widths[lvl], 2 * widths[lvl], 1)
        for i in range(cfg.blocks[lvl]):
            p.update(init_block(rng, f"dec{lvl + 1}.{i}", widths[lvl], cfg.shift, cfg.hidden_ratio, dtype))
    conv("head", 3, widths[0] // 4, 3)
    return p


def param_count(model: StyleTransferModel) -> int:
    return int(sum(np.size(ad.value(v)) for v in model.params.values()))


def adain(content_f, style_f, eps: float = 1e-5):
    """Give ``content_f`` the per-channel mean and std of ``style_f``.

    Both stds are ``sqrt(var + eps)``, so ``adain(x, x) == x``.
    """
    if tuple(content_f.shape) != tuple(style_f.shape):
        raise ValueError(f"adain shape mismatch: {content_f.shape} vs {style_f.shape}")
    c = content_f.shape[0]
    fc = ad.reshape(content_f, (c, -1))
    fs = ad.reshape(style_f, (c, -1))
    mu_c = ad.mean(fc, axis=1, keepdims=True)
    mu_s = ad.mean(fs, axis=1, keepdims=True)
    dc = ad.sub(fc, mu_c)
    ds = ad.sub(fs, mu_s)
    sd_c = ad.sqrt(ad.add(ad.mean(ad.square(dc), axis=1, keepdims=True), eps))
    sd_s = ad.sqrt(ad.add(ad.mean(ad.square(ds), axis=1, keepdims=True), eps))
    out = ad.add(ad.mul(sd_s, ad.div(dc, sd_c)), mu_s)
    return ad.reshape(out, content_f.shape)


def pad_reflect(img: np.ndarray, multiple: int = PAD_MULTIPLE):
    """Reflect-pad bottom/right up to a multiple; returns ``(padded, (H, W))``."""
    _, h, w = img.shape
    padded = np.pad(img, ((0, 0), (0, (-h) % multiple), (0, (-w) % multiple)), mode="reflect")
    return padded, (h, w)


def pad_multiple(cfg: ModelConfig) -> int:
    """Spatial multiple that keeps every level's map divisible by the skip step where possible."""
    if cfg.scan != "skip":
        return PAD_MULTIPLE
    return PAD_MULTIPLE * (cfg.p // math.gcd(cfg.p, PAD_MULTIPLE))


def crop(img, record):
    h, w = record
    if tuple(img.shape[1:]) == (h, w):
        return img
    if isinstance(img, ad.Var):
        return ad.take(ad.take(img, np.arange(h), axis=1), np.arange(w), axis=2)
    return img[:, :h, :w]


def _conv1x1(x, params, name):
    return ad.conv2d(x, params[f"{name}.w"], params[f"{name}.b"])


def _run_level(x, params, prefix, n, cfg: ModelConfig):
    if n == 0:
        return x
    plans = rotation(cfg.scan, x.shape[1], x.shape[2], cfg.p)
    for i in range(n):
        x = run_block(x, params, f"{prefix}.{i}", cfg.shift, plans, cfg.q)
    return x


def _check_dims(img):
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a [3, H, W] image, got {img.shape}")
    if img.shape[1] % PAD_MULTIPLE or img.shape[2] % PAD_MULTIPLE:
        raise ValueError(f"image dims {img.shape[1:]} must be multiples of {PAD_MULTIPLE}; use pad_reflect")


def encode(img, model: StyleTransferModel, params=None) -> list:
    """Features ``[F0, F1, F2, F3, F4]``; ``F0`` is the stride-2 input projection."""
    _check_dims(img)
    cfg = model.config
    params = model.params if params is None else params
    f0 = ad.conv2d(img, params["in_proj.w"], params["in_proj.b"], stride=2, pad=1)
    feats = [f0]
    x = f0
    for lvl in range(4):
        if lvl > 0:
            x = ad.pixel_unshuffle(_conv1x1(x, params, f"down{lvl}"), 2)
        x = _run_level(x, params, f"enc{lvl + 1}", cfg.blocks[lvl], cfg)
        feats.append(x)
    return feats


def decode(fused: list, model: StyleTransferModel, params=None):
    """Decoder from AdaIN-fused features ``[F_CS1 .. F_CS4]`` to an image."""
    cfg = model.config
    params = model.params if params is None else params
    x = fused[3]
    for lvl in (2, 1, 0):
        x = _conv1x1(ad.pixel_shuffle(x, 2), params, f"up{lvl + 1}")
        x = _conv1x1(ad.concat([x, fused[lvl]], axis=0), params, f"fuse{lvl + 1}")
        x = _run_level(x, params, f"dec{lvl + 1}", cfg.blocks[lvl], cfg)
    return ad.conv2d(ad.pixel_shuffle(x, 2), params["head.w"], params["head.b"], stride=1, pad=1)


def forward(content, style, model: StyleTransferModel, params=None, trace: dict | None = None):
    """Stylize ``content`` with ``style``; both ``[3, H, W]``, dims multiples of 16."""
    if tuple(content.shape) != tuple(style.shape):
        raise ValueError(f"content {content.shape} and style {style.shape} differ; pad them to one size")
    fc = encode(content, model, params)
    fs = encode(style, model, params)
    fused = [adain(fc[i], fs[i], model.config.adain_eps) for i in range(1, 5)]
    if trace is not None:
        trace["content"] = fc
        trace["style"] = fs
        trace["fused"] = fused
    return decode(fused, model, params)


def forward_padded(content: np.ndarray, style: np.ndarray, model: StyleTransferModel, params=None):
    """:func:`forward` on same-size images of any size: reflect-pad, run, crop back."""
    if content.shape != style.shape:
        raise ValueError(f"content {content.shape} and style {style.shape} differ")
    m = pad_multiple(model.config)
    pc, rec = pad_reflect(content, m)
    ps, _ = pad_reflect(style, m)
    return crop(forward(pc, ps, model, params), rec)


def stylize(content: np.ndarray, style: np.ndarray, model: StyleTransferModel) -> np.ndarray:
    """Pad, run, crop.  The style image is tiled or cropped to the content's padded size."""
    pc, rec = pad_reflect(content, pad_multiple(model.config))
    ps, _ = pad_reflect(style, pad_multiple(model.config))
    reps = (1, -(-pc.shape[1] // ps.shape[1]), -(-pc.shape[2] // ps.shape[2]))
    ps = np.tile(ps, reps)[:, :pc.shape[1], :pc.shape[2]]
    return crop(forward(pc, ps, model), rec)
