"""Toy backbone, activation and affinity branches, and the fully-supervised student."""
import numpy as np

from .affinity import NeighborhoodSpec, affinity_weights, random_walk_refine, transition_matrix
from .autodiff import DimensionError, bilinear_upsample, concat, conv2d, get_default_dtype, relu, softmax_channels
from .config import AffinityConfig, ModelConfig
from .params import ParamStore

# (name, in-channel source, out-channel source, stride); stride-2 pair first gives stride 4
_BACKBONE = [
    ("conv1", "in", 0, 2),
    ("conv2", 0, 0, 2),
    ("conv3", 0, 1, 1),
    ("conv4", 1, 1, 1),
    ("conv5", 1, 2, 1),
    ("conv6", 2, 2, 1),
]


def fan_in_bound(fan_in):
    """He-uniform bound: std of U(-b, b) is sqrt(2 / fan_in)."""
    return float(np.sqrt(6.0 / fan_in))


def _uniform(rng, shape, gain=1.0, dtype=None):
    fan_in = int(np.prod(shape[1:]))
    b = gain * fan_in_bound(fan_in)
    return rng.uniform(-b, b, size=shape).astype(dtype or get_default_dtype())


def init_params(config=None, seed=0, kind="alcfcn"):
    """Fresh parameters for ``kind`` in {"alcfcn", "fs"}; reproducible per seed."""
    cfg = config or ModelConfig()
    rng = np.random.default_rng(seed)
    dtype = get_default_dtype()
    store = ParamStore()
    ch = cfg.level_channels
    for name, src, dst, _ in _BACKBONE:
        cin = 3 if src == "in" else ch[src]
        store.add(f"backbone.{name}.weight", _uniform(rng, (ch[dst], cin, 3, 3)))
        store.add(f"backbone.{name}.bias", np.zeros(ch[dst], dtype))
    if kind == "alcfcn":
        store.add("act.weight", _uniform(rng, (2, ch[2], 1, 1)))
        store.add("act.bias", np.zeros(2, dtype))
        for i, (cin, cout) in enumerate(zip(ch, cfg.aff_level_channels), 1):
            store.add(f"aff.level{i}.weight", _uniform(rng, (cout, cin, 1, 1)))
            store.add(f"aff.level{i}.bias", np.zeros(cout, dtype))
        cat = int(sum(cfg.aff_level_channels))
        store.add("aff.fuse.weight", _uniform(rng, (cfg.aff_channels, cat, 1, 1), gain=cfg.aff_init_gain))
        store.add("aff.fuse.bias", np.zeros(cfg.aff_channels, dtype))
    elif kind == "fs":
        for i, cin in enumerate(ch, 1):
            store.add(f"head.level{i}.weight", _uniform(rng, (2, cin, 1, 1)))
            store.add(f"head.level{i}.bias", np.zeros(2, dtype))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return store


def _conv(store, prefix, x, stride=1, padding=0):
    return conv2d(x, store[prefix + ".weight"], store[prefix + ".bias"], stride=stride, padding=padding)


def backbone_forward(store, image):
    """Three feature levels, all at output stride 4."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"image must be [3,H,W], got {image.shape}")
    if image.shape[1] % 4 or image.shape[2] % 4:
        raise DimensionError(f"image extents {image.shape[1:]} are not multiples of 4; pad first")
    x = image
    feats = []
    for name, _, _, stride in _BACKBONE:
        x = relu(_conv(store, f"backbone.{name}", x, stride=stride, padding=1))
        if name in ("conv2", "conv4", "conv6"):
            feats.append(x)
    return tuple(feats)


class ALCFCNModel:
    """Backbone + activation branch + affinity branch + random-walk refinement."""

    def __init__(self, store, config=None, affinity=None):
        self.store = store
        self.config = config or ModelConfig()
        self.affinity = affinity or AffinityConfig()

    @classmethod
    def create(cls, config=None, affinity=None, seed=0):
        config = config or ModelConfig()
        return cls(init_params(config, seed, "alcfcn"), config, affinity)

    @property
    def neighborhood(self):
        return NeighborhoodSpec(self.affinity.radius, self.affinity.include_self)

    def backbone(self, image):
        return backbone_forward(self.store, image)

    def activation_branch(self, f3):
        return _conv(self.store, "act", f3)

    def affinity_branch(self, f1, f2, f3):
        h, w = f3.shape[1:]
        levels = []
        for i, f in enumerate((f1, f2, f3), 1):
            z = _conv(self.store, f"aff.level{i}", f)
            levels.append(bilinear_upsample(z, h, w))
        return _conv(self.store, "aff.fuse", concat(levels, axis=0))

    def forward(self, image, t=None):
        """Return (S, aux) with S the [2,H,W] softmax map at input resolution."""
        t = self.affinity.t if t is None else t
        f1, f2, f3 = self.backbone(image)
        f_act = self.activation_branch(f3)
        f_aff = T = None
        f_ref = f_act
        if t > 0:
            f_aff = self.affinity_branch(f1, f2, f3)
            W = affinity_weights(f_aff, self.neighborhood)
            T = transition_matrix(W, self.affinity.beta)
            f_ref = random_walk_refine(f_act, T, t)
        H, Wd = image.shape[1:]
        logits = bilinear_upsample(f_ref, H, Wd)
        S = softmax_channels(logits)
        return S, {"f_act": f_act, "f_aff": f_aff, "T": T, "f_ref": f_ref, "logits": logits}

    __call__ = forward


class FSModel:
    """Backbone plus an FCN-style head: per-level 1x1 scores, summed, upsampled."""

    def __init__(self, store, config=None):
        self.store = store
        self.config = config or ModelConfig()

    @classmethod
    def create(cls, config=None, seed=0):
        config = config or ModelConfig()
        return cls(init_params(config, seed, "fs"), config)

    def forward(self, image):
        feats = backbone_forward(self.store, image)
        h, w = feats[2].shape[1:]
        score = None
        for i, f in enumerate(feats, 1):
            z = bilinear_upsample(_conv(self.store, f"head.level{i}", f), h, w)
            score = z if score is None else score + z
        H, W = image.shape[1:]
        logits = bilinear_upsample(score, H, W)
        return softmax_channels(logits), {"logits": logits}

    __call__ = forward
