"""A small conditional encoder-decoder epsilon predictor with FCB skip connections.

Layout for ``widths = (c0, c1, ..., c_{L-1})`` and input size ``H``::

    stem   3x3 s1   (2C+1) -> c0    SiLU   -> e0          H
    down_l 3x3 s2   c_{l-1} -> c_l  SiLU   -> e_l         H / 2^l
    mid    3x3 s2   c_{L-1} -> c_{L-1} SiLU               H / 2^L
    up_l   nearest x2, concat FCB_l(e_l), 3x3 s1 -> c_l, SiLU   (l = L-1 .. 0)
    out    3x3 s1   c0 -> C

The input is the concatenation of the hazy condition, the noisy image and a
constant channel holding gamma_t. All convolutions use replicate padding.
Gradients are derived by hand; :meth:`ToyEpsNet.backward` is checked against
finite differences in the test suite.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffusion import NoiseSchedule, forward_diffuse, to_model_range, training_loss
from .fcb import DEFAULT_KS, DEFAULT_SIGMAS, FcbCache, FilterBank, fcb_backward, fcb_forward, make_bank
from .haze_aug import HazeAugConfig, SyntheticPair, haze_aug
from .imaging import make_rng, pad_replicate, pad_replicate_adjoint


class NumericError(FloatingPointError):
    """Training produced NaN or inf."""


@dataclass(frozen=True)
class NetConfig:
    channels: int = 3
    widths: tuple[int, ...] = (16, 32)
    use_fcb: bool = True
    ks: tuple[int, ...] = DEFAULT_KS
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS
    gamma_sigma: float = 1.0
    seed: int = 0
    init: str = "uniform"  # or "zero"
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if not self.widths:
            raise ValueError("need at least one level")
        if self.init not in ("uniform", "zero"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def levels(self) -> int:
        return len(self.widths)


# ---------------------------------------------------------------- layer kernels


def _silu(z):
    # sigmoid via exp(-|z|) so large inputs never overflow
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return z * s, s


def _silu_grad(z, s, g):
    return g * (s + z * s * (1.0 - s))


def _conv_forward(x, w, b, stride):
    """3x3 replicate-padded conv on NHWC input; w is (3, 3, Cin, Cout)."""
    n, h, wd, c = x.shape
    xp = pad_replicate(x, 1)
    ho, wo = h // stride, wd // stride
    cols = np.concatenate(
        [xp[:, a : a + h : stride, bb : bb + wd : stride, :] for a in range(3) for bb in range(3)],
        axis=-1,
    )
    flat = cols.reshape(n * ho * wo, 9 * c)
    out = flat @ w.reshape(9 * c, -1) + b
    return out.reshape(n, ho, wo, -1), flat


def _conv_backward(g, flat, x_shape, w, stride):
    n, h, wd, c = x_shape
    cout = w.shape[-1]
    g2 = g.reshape(-1, cout)
    gw = (flat.T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(9 * c, cout).T).reshape(g.shape[:3] + (9 * c,))
    gxp = np.zeros((n, h + 2, wd + 2, c), dtype=g.dtype)
    i = 0
    for a in range(3):
        for bb in range(3):
            gxp[:, a : a + h : stride, bb : bb + wd : stride, :] += gcols[..., i * c : (i + 1) * c]
            i += 1
    return pad_replicate_adjoint(gxp, 1), gw, gb


def _upsample(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_adjoint(g):
    n, h, w, c = g.shape
    return g.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


# ----------------------------------------------------------------------- model


@dataclass
class _Cache:
    shapes: dict = field(default_factory=dict)
    cols: dict = field(default_factory=dict)
    pre: dict = field(default_factory=dict)
    sig: dict = field(default_factory=dict)
    fcb: dict = field(default_factory=dict)
    skip_ch: dict = field(default_factory=dict)
    model_id: int = 0
    out_ch: int = 0


class ToyEpsNet:
    def __init__(self, config: NetConfig | None = None):
        self.config = config or NetConfig()
        cfg = self.config
        self.dtype = np.dtype(cfg.dtype)
        rng = make_rng(cfg.seed)
        c_in = 2 * cfg.channels + 1
        w = cfg.widths
        self.layers: list[tuple[str, int, int, int]] = [("stem", c_in, w[0], 1)]
        for lvl in range(1, cfg.levels):
            self.layers.append((f"down{lvl}", w[lvl - 1], w[lvl], 2))
        self.layers.append(("mid", w[-1], w[-1], 2))
        up_in = w[-1]
        for lvl in reversed(range(cfg.levels)):
            self.layers.append((f"up{lvl}", up_in + w[lvl], w[lvl], 1))
            up_in = w[lvl]
        self.layers.append(("out", w[0], cfg.channels, 1))

        self.params: dict[str, np.ndarray] = {}
        for name, cin, cout, _ in self.layers:
            bound = np.sqrt(1.0 / (9 * cin))
            weight = rng.uniform(-bound, bound, size=(3, 3, cin, cout))
            if cfg.init == "zero":
                weight[:] = 0.0
            self.params[f"{name}.w"] = weight.astype(self.dtype)
            self.params[f"{name}.b"] = np.zeros(cout, dtype=self.dtype)
        # FCB weights draw no randomness, so use_fcb on/off share conv params for a seed
        self.fcbs: list[FilterBank] = []
        if cfg.use_fcb:
            for lvl in range(cfg.levels):
                bank = make_bank(cfg.ks, cfg.sigmas, cfg.gamma_sigma)
                bank.weights = bank.weights.astype(self.dtype)
                self.fcbs.append(bank)
                self.params[f"fcb{lvl}.w"] = bank.weights

    # -- helpers -------------------------------------------------------------

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _stride(self, name):
        return next(s for n, _, _, s in self.layers if n == name)

    def _conv(self, name, x, cache, act=True):
        w, b = self.params[f"{name}.w"], self.params[f"{name}.b"]
        z, flat = _conv_forward(x, w, b, self._stride(name))
        cache.shapes[name] = x.shape
        cache.cols[name] = flat
        if not act:
            return z
        y, s = _silu(z)
        cache.pre[name], cache.sig[name] = z, s
        return y

    def _conv_back(self, name, g, cache, grads, act=True):
        if act:
            g = _silu_grad(cache.pre[name], cache.sig[name], g)
        gx, gw, gb = _conv_backward(g, cache.cols[name], cache.shapes[name], self.params[f"{name}.w"], self._stride(name))
        grads[f"{name}.w"] = gw
        grads[f"{name}.b"] = gb
        return gx

    # -- forward / backward --------------------------------------------------

    def forward(self, cond: np.ndarray, x_t: np.ndarray, gamma_t) -> tuple[np.ndarray, _Cache]:
        cond = np.asarray(cond, dtype=self.dtype)
        x_t = np.asarray(x_t, dtype=self.dtype)
        if cond.ndim == 3:
            cond, x_t = cond[None], x_t[None]
        n, h, w, c = x_t.shape
        if cond.shape[:3] != x_t.shape[:3]:
            raise ValueError(f"condition {cond.shape} and noisy image {x_t.shape} differ in size")
        if c != self.config.channels or cond.shape[3] != c:
            raise ValueError(f"model expects {self.config.channels} channels")
        f = 2**self.config.levels
        if h % f or w % f:
            raise ValueError(f"spatial size {h}x{w} must be divisible by {f}")
        gam = np.broadcast_to(np.asarray(gamma_t, dtype=self.dtype).reshape(-1), (n,))
        gch = np.broadcast_to(gam[:, None, None, None], (n, h, w, 1))
        x = np.concatenate([cond, x_t, gch], axis=-1)

        cache = _Cache(model_id=id(self), out_ch=c)
        L = self.config.levels
        skips = []
        hcur = self._conv("stem", x, cache)
        skips.append(hcur)
        for lvl in range(1, L):
            hcur = self._conv(f"down{lvl}", hcur, cache)
            skips.append(hcur)
        hcur = self._conv("mid", hcur, cache)
        for lvl in reversed(range(L)):
            skip = skips[lvl]
            if self.fcbs:
                skip, cache.fcb[lvl] = fcb_forward(skip, self.fcbs[lvl])
            cache.skip_ch[lvl] = skip.shape[-1]
            hcur = np.concatenate([_upsample(hcur), skip], axis=-1)
            hcur = self._conv(f"up{lvl}", hcur, cache)
        out = self._conv("out", hcur, cache, act=False)
        return out, cache

    def backward(self, cache: _Cache, grad_eps_hat: np.ndarray) -> dict[str, np.ndarray]:
        if cache.model_id != id(self):
            raise ValueError("cache was produced by a different model")
        g = np.asarray(grad_eps_hat, dtype=self.dtype)
        if g.ndim == 3:
            g = g[None]
        grads: dict[str, np.ndarray] = {}
        L = self.config.levels
        g = self._conv_back("out", g, cache, grads, act=False)
        skip_grads = {}
        for lvl in range(L):
            g = self._conv_back(f"up{lvl}", g, cache, grads)
            cs = cache.skip_ch[lvl]
            g_up, g_skip = g[..., :-cs], g[..., -cs:]
            if self.fcbs:
                g_skip, gw = fcb_backward(np.ascontiguousarray(g_skip), cache.fcb[lvl], self.fcbs[lvl])
                grads[f"fcb{lvl}.w"] = gw.astype(self.dtype)
            skip_grads[lvl] = g_skip
            g = _upsample_adjoint(np.ascontiguousarray(g_up))
        g = self._conv_back("mid", g, cache, grads)
        for lvl in reversed(range(1, L)):
            g = self._conv_back(f"down{lvl}", g + skip_grads[lvl], cache, grads)
        self._conv_back("stem", g + skip_grads[0], cache, grads)
        return {k: grads[k] for k in self.params}

    def __call__(self, cond, x_t, gamma_t):
        single = np.ndim(x_t) == 3
        out, _ = self.forward(cond, x_t, gamma_t)
        return out[0] if single else out

    # -- state ---------------------------------------------------------------

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            if self.params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {self.params[k].shape} vs {np.shape(v)}")
            self.params[k][...] = v


# --------------------------------------------------------------- checkpoints

_MAGIC = b"HZDCKPT1"


def save_checkpoint(model: ToyEpsNet, path, extra: dict | None = None) -> None:
    """Write ``MAGIC | u32 header length | JSON header | little-endian float32 data``."""
    cfg = asdict(model.config)
    header = {
        "config": cfg,
        "seed": model.config.seed,
        "params": [[k, list(v.shape)] for k, v in model.params.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path) -> ToyEpsNet:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(_MAGIC)
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos : pos + n].decode("utf-8"))
    pos += n
    cfg = dict(header["config"])
    cfg["dtype"] = "float32"
    model = ToyEpsNet(NetConfig(**cfg))
    flat = np.frombuffer(data, dtype="<f4", offset=pos)
    values = {}
    i = 0
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        values[name] = flat[i : i + size].reshape(shape)
        i += size
    if i != flat.size:
        raise ValueError(f"{path}: parameter payload has {flat.size} values, header expects {i}")
    model.load_params(values)
    return model


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    # full-scale reference: lr 1e-4, decay 0.7 every 400k iters, batch 3, 128 px, 2M iters
    iters: int = 5000
    lr: float = 0.05
    lr_decay: float = 0.7
    decay_every: int = 2000
    batch: int = 3
    crop: int = 32
    seed: int = 0
    use_fcb: bool = True
    momentum: float = 0.0
    widths: tuple[int, ...] = (16, 32)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.iters < 0 or self.batch < 1 or self.crop < 1 or self.decay_every < 1:
            raise ValueError("iters >= 0, batch >= 1, crop >= 1 and decay_every >= 1 required")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("lr must be >= 0 and momentum in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def _random_crop(arrs, size, rng):
    h, w = arrs[0].shape[:2]
    if h < size or w < size:
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    y = int(rng.integers(h - size + 1))
    x = int(rng.integers(w - size + 1))
    return [a[y : y + size, x : x + size] for a in arrs]


def train(
    dataset: Sequence[SyntheticPair],
    cfg: TrainConfig,
    sched: NoiseSchedule,
    aug: HazeAugConfig | None = None,
    ks: Sequence[int] = DEFAULT_KS,
    sigmas: Sequence[float] = DEFAULT_SIGMAS,
    gamma_sigma: float = 1.0,
    log_every: int = 1,
) -> tuple[ToyEpsNet, list[tuple[int, float]]]:
    """Plain SGD on the L1 epsilon objective; deterministic given ``cfg.seed``.

    Returns the model and the per-iteration loss curve ``[(iter, loss), ...]``.
    """
    if len(dataset) == 0:
        raise ValueError("training needs a non-empty dataset")
    channels = dataset[0].clean.shape[2]
    model = ToyEpsNet(
        NetConfig(
            channels=channels,
            widths=cfg.widths,
            use_fcb=cfg.use_fcb,
            ks=tuple(ks),
            sigmas=tuple(sigmas),
            gamma_sigma=gamma_sigma,
            seed=cfg.seed,
        )
    )
    rng = make_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    curve: list[tuple[int, float]] = []
    for it in range(cfg.iters):
        conds, targets = [], []
        for _ in range(cfg.batch):
            idx = int(rng.integers(len(dataset)))
            sample = dataset[idx]
            hazy = haze_aug(idx, dataset, rng, aug) if aug is not None else sample.hazy
            hc, cc = _random_crop([hazy, sample.clean], cfg.crop, rng)
            conds.append(to_model_range(hc))
            targets.append(to_model_range(cc))
        loss, grads = training_loss(model, np.stack(conds), np.stack(targets), rng, sched)
        if not np.isfinite(loss):
            raise NumericError(f"loss became {loss} at iteration {it}")
        lr = cfg.lr * cfg.lr_decay ** (it // cfg.decay_every)
        for k, p in model.params.items():
            g = grads[k]
            if cfg.momentum:
                velocity[k] = cfg.momentum * velocity[k] + g
                g = velocity[k]
            p -= p.dtype.type(lr) * g.astype(p.dtype)
        if it % log_every == 0 or it == cfg.iters - 1:
            curve.append((it, loss))
    return model, curve


def loss_curve_csv(curve: Sequence[tuple[int, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "loss"])
    for it, loss in curve:
        w.writerow([it, repr(float(loss))])
    return buf.getvalue()


def predict_eps_batch(
    model,
    pairs: Sequence[SyntheticPair],
    t: int,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Noise predictions for each pair's clean image diffused to step ``t``."""
    g = sched.gamma_at(t)
    out = []
    for p in pairs:
        J0 = to_model_range(p.clean)
        eps = rng.standard_normal(J0.shape).astype(J0.dtype)
        x_t = forward_diffuse(J0, t, eps, sched)
        out.append(np.asarray(model(to_model_range(p.hazy), x_t, g)))
    return out
