"""Noise-conditioned score model over range images.

A small convolutional encoder/decoder S(x, sigma) predicts the score of
sigma-noised normalized range images, trained with the multi-scale
denoising objective (per-level weight sigma_i^2 on the squared residual
against -(x_noisy - x)/sigma_i^2). Conditioning follows the
adapter-with-zero-fusion recipe: a trainable copy of the encoder reads the
2-channel conditional image and feeds the frozen decoder through
zero-initialized 1x1 convolutions, so the conditional forward starts out
bit-identical to the unconditional one.

Everything is plain numpy with hand-written backward passes (see ``nn``);
training math runs in f32, finite-difference checks in f64.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .nn import (
    Adam,
    Conv2d,
    Dense,
    FiLM,
    SiLU,
    avgpool2,
    avgpool2_backward,
    sinusoidal_embedding,
    upnearest2,
    upnearest2_backward,
)


class ScoreNetError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric noise ladder sigma_max = sigma_1 > ... > sigma_L = sigma_min."""

    sigma_max: float = 1.0
    sigma_min: float = 0.01
    levels: int = 10

    def __post_init__(self):
        if not (self.sigma_max > self.sigma_min > 0) or self.levels < 2:
            raise ScoreNetError("need sigma_max > sigma_min > 0 and levels >= 2")

    @property
    def sigmas(self) -> np.ndarray:
        ratio = (self.sigma_min / self.sigma_max) ** (1.0 / (self.levels - 1))
        return self.sigma_max * ratio ** np.arange(self.levels)


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    cond_channels: int = 2
    widths: tuple = (16, 16, 32, 32)
    emb_dim: int = 32
    blocks_per_level: int = 2
    dtype: object = np.float32


class ResBlock:
    """conv3x3 -> sigma-FiLM -> SiLU -> conv3x3, plus a (projected) skip."""

    def __init__(self, cin, cout, emb_dim, rng, dtype):
        self.conv1 = Conv2d(cin, cout, 3, rng, dtype)
        self.emb = Dense(emb_dim, 2 * cout, rng, dtype)
        self.film = FiLM()
        self.act = SiLU()
        self.conv2 = Conv2d(cout, cout, 3, rng, dtype)
        self.proj = Conv2d(cin, cout, 1, rng, dtype) if cin != cout else None
        self.cout = cout

    def named_params(self, prefix):
        out = {}
        out.update(self.conv1.named_params(f"{prefix}.conv1"))
        out.update(self.emb.named_params(f"{prefix}.emb"))
        out.update(self.conv2.named_params(f"{prefix}.conv2"))
        if self.proj is not None:
            out.update(self.proj.named_params(f"{prefix}.proj"))
        return out

    def forward(self, x, emb):
        h = self.conv1.forward(x)
        st = self.emb.forward(emb)
        scale, shift = st[:, : self.cout], st[:, self.cout :]
        h = self.act.forward(self.film.forward(h, scale, shift))
        h = self.conv2.forward(h)
        skip = self.proj.forward(x) if self.proj is not None else x
        return h + skip

    def backward(self, dy):
        dh = self.conv2.backward(dy)
        dh = self.act.backward(dh)
        dh, dscale, dshift = self.film.backward(dh)
        demb = self.emb.backward(np.concatenate([dscale, dshift], axis=1))
        dx = self.conv1.backward(dh)
        dx = dx + (self.proj.backward(dy) if self.proj is not None else dy)
        return dx, demb


class _Level:
    """A stack of residual blocks at one resolution."""

    def __init__(self, cin, cout, emb_dim, count, rng, dtype):
        self.blocks = [
            ResBlock(cin if i == 0 else cout, cout, emb_dim, rng, dtype) for i in range(count)
        ]

    def named_params(self, prefix):
        out = {}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_params(f"{prefix}.b{i}"))
        return out

    def forward(self, x, emb):
        for blk in self.blocks:
            x = blk.forward(x, emb)
        return x

    def backward(self, dy):
        demb_total = 0.0
        for blk in reversed(self.blocks):
            dy, demb = blk.backward(dy)
            demb_total = demb_total + demb
        return dy, demb_total


class _Encoder:
    """Input conv plus per-level residual stacks and a bottleneck stack
    (shared layout between the base model and the conditioning adapter).
    Levels below the first halve resolution with average pooling."""

    def __init__(self, cfg: ModelConfig, rng):
        w = cfg.widths
        self.in_conv = Conv2d(cfg.in_channels, w[0], 3, rng, cfg.dtype)
        self.levels = []
        for i, width in enumerate(w):
            cin = w[0] if i == 0 else w[i - 1]
            self.levels.append(_Level(cin, width, cfg.emb_dim, cfg.blocks_per_level, rng, cfg.dtype))
        self.mid = _Level(w[-1], w[-1], cfg.emb_dim, 1, rng, cfg.dtype)

    def named_params(self, prefix):
        out = self.in_conv.named_params(f"{prefix}.in_conv")
        for i, lvl in enumerate(self.levels):
            out.update(lvl.named_params(f"{prefix}.enc{i}"))
        out.update(self.mid.named_params(f"{prefix}.mid"))
        return out

    def forward(self, x, emb, hint=None):
        h = self.in_conv.forward(x)
        if hint is not None:
            h = h + hint
        feats = []
        for i, lvl in enumerate(self.levels):
            if i > 0:
                h = avgpool2(h)
            h = lvl.forward(h, emb)
            feats.append(h)
        return feats, self.mid.forward(feats[-1], emb)

    def backward(self, dfeats, dmid):
        demb = 0.0
        dh, de = self.mid.backward(dmid)
        demb = demb + de
        dh = dh + dfeats[-1]
        for i in reversed(range(len(self.levels))):
            dh, de = self.levels[i].backward(dh)
            demb = demb + de
            if i > 0:
                dh = avgpool2_backward(dh)
                dh = dh + dfeats[i - 1]
        dhint = dh  # hint (when present) was added right after in_conv
        dx = self.in_conv.backward(dh)
        return dx, dhint, demb


class ControlAdapter:
    """Trainable encoder copy + conditional-image hint projection +
    zero-initialized 1x1 fusion convs into the decoder."""

    def __init__(self, base: "ScoreModel", seed: int = 0):
        cfg = base.config
        rng = np.random.default_rng(seed)
        self.config = cfg
        self.encoder = _Encoder(cfg, rng)
        # Start from the (pre)trained base encoder weights.
        base_enc = base.encoder.named_params("enc")
        for name, p in self.encoder.named_params("enc").items():
            p.value = base_enc[name].value.copy()
        self.hint = Conv2d(cfg.cond_channels, cfg.widths[0], 3, rng, cfg.dtype)
        self.zero_fusions = [Conv2d(w, w, 1, rng, cfg.dtype, zero_init=True) for w in cfg.widths]
        self.zero_mid = Conv2d(cfg.widths[-1], cfg.widths[-1], 1, rng, cfg.dtype, zero_init=True)

    def named_params(self, prefix="adapter"):
        out = self.encoder.named_params(f"{prefix}.enc")
        out.update(self.hint.named_params(f"{prefix}.hint"))
        for i, z in enumerate(self.zero_fusions):
            out.update(z.named_params(f"{prefix}.zero{i}"))
        out.update(self.zero_mid.named_params(f"{prefix}.zmid"))
        return out

    def fusion_param_names(self, prefix="adapter"):
        names = set()
        for i, z in enumerate(self.zero_fusions):
            names.update(z.named_params(f"{prefix}.zero{i}"))
        names.update(self.zero_mid.named_params(f"{prefix}.zmid"))
        return names


class ScoreModel:
    """Score network S(x, sigma[, cond]) with manual backprop.

    The decoder mirrors the encoder levels in reverse width order; each
    stage consumes the matching encoder feature as an additive skip (plus
    the adapter's zero-fused control signal when conditioning).
    """

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        cfg = config
        rng = np.random.default_rng(seed)
        w = cfg.widths
        self.encoder = _Encoder(cfg, rng)
        self.emb_dense1 = Dense(cfg.emb_dim, cfg.emb_dim, rng, cfg.dtype)
        self.emb_act = SiLU()
        self.emb_dense2 = Dense(cfg.emb_dim, cfg.emb_dim, rng, cfg.dtype)
        self.dec_levels = []
        self.up_projs = []  # up_projs[k] maps widths after upsampling at stage k+1
        for k, i in enumerate(reversed(range(len(w)))):
            self.dec_levels.append(_Level(w[i], w[i], cfg.emb_dim, cfg.blocks_per_level, rng, cfg.dtype))
            if i > 0 and w[i] != w[i - 1]:
                self.up_projs.append(Conv2d(w[i], w[i - 1], 1, rng, cfg.dtype))
            else:
                self.up_projs.append(None)
        self.out_conv = Conv2d(w[0], cfg.in_channels, 3, rng, cfg.dtype)
        self._cache = None

    # -- parameters ---------------------------------------------------

    def named_params(self, prefix="base"):
        out = self.encoder.named_params(f"{prefix}.enc")
        out.update(self.emb_dense1.named_params(f"{prefix}.embed1"))
        out.update(self.emb_dense2.named_params(f"{prefix}.embed2"))
        for i, lvl in enumerate(self.dec_levels):
            out.update(lvl.named_params(f"{prefix}.dec{i}"))
        for i, proj in enumerate(self.up_projs):
            if proj is not None:
                out.update(proj.named_params(f"{prefix}.upproj{i}"))
        out.update(self.out_conv.named_params(f"{prefix}.out_conv"))
        return out

    def param_checksum(self) -> str:
        params = self.named_params()
        digest = hashlib.sha256()
        for name in sorted(params):
            digest.update(params[name].value.tobytes())
        return digest.hexdigest()

    # -- forward / backward -------------------------------------------

    def _embed(self, sigma, batch):
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (batch,))
        emb = sinusoidal_embedding(np.log(sigma), self.config.emb_dim, self.config.dtype)
        return self.emb_dense2.forward(self.emb_act.forward(self.emb_dense1.forward(emb)))

    def forward(self, x, sigma, cond=None, adapter: ControlAdapter | None = None):
        """Score estimate, same shape as x. With `adapter` and `cond`, runs
        the conditional pathway (identical to the unconditional forward
        while the fusion convolutions are all zero)."""
        x = np.asarray(x, dtype=self.config.dtype)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ScoreNetError(f"expected (B, {self.config.in_channels}, H, W), got {x.shape}")
        depth_div = 2 ** (len(self.config.widths) - 1)
        if x.shape[2] % depth_div or x.shape[3] % depth_div:
            raise ScoreNetError(f"H and W must be divisible by {depth_div}")
        emb = self._embed(sigma, x.shape[0])
        feats, mid = self.encoder.forward(x, emb)
        controls = None
        if adapter is not None:
            if cond is None:
                raise ScoreNetError("adapter requires a conditional image")
            cond = np.asarray(cond, dtype=self.config.dtype)
            hint = adapter.hint.forward(cond)
            a_feats, a_mid = adapter.encoder.forward(x, emb, hint=hint)
            controls = [z.forward(f) for z, f in zip(adapter.zero_fusions, a_feats)]
            controls.append(adapter.zero_mid.forward(a_mid))
        n = len(feats)
        h = mid
        if controls is not None:
            h = h + controls[n]
        for k, lvl in enumerate(self.dec_levels):
            i = n - 1 - k
            if k > 0:
                h = upnearest2(h)
                if self.up_projs[k - 1] is not None:
                    h = self.up_projs[k - 1].forward(h)
            h = h + feats[i]
            if controls is not None:
                h = h + controls[i]
            h = lvl.forward(h, emb)
        self._cache = (adapter, n)
        return self.out_conv.forward(h)

    def backward(self, dout):
        """Backprop from d(loss)/d(output); accumulates grads on every
        parameter (base and adapter alike). Call right after forward."""
        adapter, n = self._cache
        demb = 0.0
        dh = self.out_conv.backward(np.asarray(dout, dtype=self.config.dtype))
        dfeats = [0.0] * n
        dcontrols = [0.0] * (n + 1)
        for k in reversed(range(len(self.dec_levels))):
            i = n - 1 - k
            dh, de = self.dec_levels[k].backward(dh)
            demb = demb + de
            dfeats[i] = dfeats[i] + dh
            dcontrols[i] = dcontrols[i] + dh
            if k > 0:
                if self.up_projs[k - 1] is not None:
                    dh = self.up_projs[k - 1].backward(dh)
                dh = upnearest2_backward(dh)
        dmid = dh  # gradient w.r.t. the decoder's initial state (mid + control)
        dcontrols[n] = dcontrols[n] + dmid
        dx, _, de = self.encoder.backward(dfeats, dmid)
        demb = demb + de
        if adapter is not None:
            da_feats = [
                z.backward(np.asarray(dc, dtype=self.config.dtype))
                for z, dc in zip(adapter.zero_fusions, dcontrols[:n])
            ]
            da_mid = adapter.zero_mid.backward(np.asarray(dcontrols[n], dtype=self.config.dtype))
            dxa, dhint, de = adapter.encoder.backward(da_feats, da_mid)
            demb = demb + de
            adapter.hint.backward(dhint)
            dx = dx + dxa
        demb = self.emb_dense1.backward(self.emb_act.backward(self.emb_dense2.backward(demb)))
        return dx


# ---------------------------------------------------------------------------
# Losses


def _perturb(batch, schedule: NoiseSchedule, rng):
    batch = np.asarray(batch)
    b = batch.shape[0]
    levels = rng.integers(0, schedule.levels, size=b)
    sigma = schedule.sigmas[levels].astype(batch.dtype)
    noise = rng.standard_normal(batch.shape).astype(batch.dtype)
    noisy = batch + sigma[:, None, None, None] * noise
    return noisy, noise, sigma


def loss_uncond(model: ScoreModel, batch, schedule: NoiseSchedule, rng):
    """Denoising score-matching loss (level drawn uniformly per sample,
    per-term weight sigma^2/2). Accumulates parameter gradients."""
    batch = np.asarray(batch, dtype=model.config.dtype)
    if batch.shape[0] == 0:
        raise ScoreNetError("empty batch")
    noisy, noise, sigma = _perturb(batch, schedule, rng)
    score = model.forward(noisy, sigma)
    resid = score + noise / sigma[:, None, None, None]
    per_sample = 0.5 * sigma**2 * (resid.astype(np.float64) ** 2).sum(axis=(1, 2, 3))
    loss = float(per_sample.mean())
    if not math.isfinite(loss):
        raise ScoreNetError("non-finite loss")
    dscore = (sigma**2)[:, None, None, None] * resid / batch.shape[0]
    model.backward(dscore)
    return loss


def loss_cond(model: ScoreModel, adapter: ControlAdapter, batch, cond_batch, schedule, rng):
    """Conditional variant of the score-matching loss. Gradients reach all
    parameters; training masks updates to adapter/fusion only."""
    batch = np.asarray(batch, dtype=model.config.dtype)
    if batch.shape[0] == 0:
        raise ScoreNetError("empty batch")
    noisy, noise, sigma = _perturb(batch, schedule, rng)
    score = model.forward(noisy, sigma, cond=cond_batch, adapter=adapter)
    resid = score + noise / sigma[:, None, None, None]
    per_sample = 0.5 * sigma**2 * (resid.astype(np.float64) ** 2).sum(axis=(1, 2, 3))
    loss = float(per_sample.mean())
    if not math.isfinite(loss):
        raise ScoreNetError("non-finite loss")
    dscore = (sigma**2)[:, None, None, None] * resid / batch.shape[0]
    model.backward(dscore)
    return loss


def finite_diff_check(model: ScoreModel, x, sigma, target, cond=None, adapter=None, eps=1e-3):
    """Max relative error of reverse-mode gradients of the scalar loss
    0.5*||S - target||^2 against central finite differences. The model
    must be built with f64 parameters."""
    params = model.named_params()
    if adapter is not None:
        params.update(adapter.named_params())

    def scalar_loss():
        s = model.forward(x, sigma, cond=cond, adapter=adapter)
        return 0.5 * float(((s - target) ** 2).sum())

    for p in params.values():
        p.grad[...] = 0.0
    s = model.forward(x, sigma, cond=cond, adapter=adapter)
    model.backward(s - target)

    worst = 0.0
    for p in params.values():
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = scalar_loss()
            flat[j] = orig - eps
            down = scalar_loss()
            flat[j] = orig
            fd = (up - down) / (2.0 * eps)
            denom = max(abs(fd), abs(gflat[j]), 1e-8)
            worst = max(worst, abs(fd - gflat[j]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    steps: int = 1000
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    phase: str = "uncond"  # uncond | a | b | ab
    log_every: int = 100
    checkpoint_every: int = 0
    checkpoint_path: str | None = None


@dataclass
class TrainState:
    model: ScoreModel
    schedule: NoiseSchedule
    adapter: ControlAdapter | None = None
    optimizer: Adam | None = None
    step: int = 0


def _allowed_params(state: TrainState, phase: str):
    if phase == "uncond":
        return set(state.model.named_params())
    if state.adapter is None:
        raise ScoreNetError("conditional phase requires an adapter")
    if phase == "a":
        return state.adapter.fusion_param_names()
    if phase == "b":
        return set(state.adapter.named_params())
    raise ScoreNetError(f"unknown phase {phase!r}")


def train(state: TrainState, dataset, config: TrainConfig, log=None):
    """Adam training loop, deterministic given the seed. `dataset` is an
    (N, C, H, W) array for phase 'uncond', or a tuple (images, conds) for
    conditional phases. Phase 'ab' splits the steps evenly between
    zero-conv-only and full-adapter fine-tuning."""
    conditional = config.phase != "uncond"
    if conditional:
        images, conds = dataset
        images = np.asarray(images)
        conds = np.asarray(conds)
    else:
        images = np.asarray(dataset)
        conds = None
    if len(images) == 0:
        raise ScoreNetError("empty dataset")

    all_params = dict(state.model.named_params())
    if state.adapter is not None:
        all_params.update(state.adapter.named_params())
    if state.optimizer is None or set(state.optimizer.params) != set(all_params):
        state.optimizer = Adam(all_params, lr=config.lr)
    state.optimizer.lr = config.lr

    rng = np.random.default_rng(np.random.Philox(config.seed))
    phases = ["a", "b"] if config.phase == "ab" else [config.phase]
    steps_per_phase = [config.steps // 2, config.steps - config.steps // 2] if config.phase == "ab" else [config.steps]

    losses = []
    for phase, steps in zip(phases, steps_per_phase):
        allowed = _allowed_params(state, phase)
        for _ in range(steps):
            idx = rng.integers(0, len(images), size=config.batch_size)
            state.optimizer.zero_grad()
            try:
                if conditional:
                    loss = loss_cond(state.model, state.adapter, images[idx], conds[idx], state.schedule, rng)
                else:
                    loss = loss_uncond(state.model, images[idx], state.schedule, rng)
            except ScoreNetError:
                # Divergence: stop and keep the last good parameters.
                return losses
            state.optimizer.step(allowed=allowed)
            state.step += 1
            losses.append(loss)
            if log is not None and state.step % config.log_every == 0:
                log(f"step {state.step} phase {phase} loss {loss:.4f}")
            if (
                config.checkpoint_every
                and config.checkpoint_path
                and state.step % config.checkpoint_every == 0
            ):
                save_checkpoint(config.checkpoint_path, state)
    return losses


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class SamplerConfig:
    eps0: float = 2e-5
    steps_per_level: int = 5


def sample_annealed_langevin(score_fn, schedule: NoiseSchedule, config: SamplerConfig, shape, seed=0):
    """Annealed Langevin dynamics: x starts uniform in [0,1]; at each level
    alpha = eps0 * sigma_i^2 / sigma_L^2 and x takes `steps_per_level`
    Langevin steps; a final denoising step x += sigma_L^2 * S(x, sigma_L)
    finishes. `score_fn(x, sigma)` supplies the score."""
    rng = np.random.default_rng(np.random.Philox(seed))
    x = rng.random(shape)
    sigmas = schedule.sigmas
    sig_last2 = sigmas[-1] ** 2
    for sigma in sigmas:
        alpha = config.eps0 * sigma**2 / sig_last2
        for _ in range(config.steps_per_level):
            z = rng.standard_normal(shape)
            x = x + (alpha / 2.0) * score_fn(x, sigma) + math.sqrt(alpha) * z
        if not np.all(np.isfinite(x)):
            raise ScoreNetError("non-finite sampler state")
    x = x + sig_last2 * score_fn(x, sigmas[-1])
    return x


def model_score_fn(model: ScoreModel, adapter: ControlAdapter | None = None, cond=None):
    """Adapt a ScoreModel (optionally conditioned) to the sampler's
    score_fn(x, sigma) interface; x may be a single (C, H, W) image or a
    batch."""

    def fn(x, sigma):
        batched = x.ndim == 4
        xb = x if batched else x[None]
        cb = None
        if cond is not None:
            cb = cond if cond.ndim == 4 else np.broadcast_to(cond, (xb.shape[0],) + cond.shape)
        out = model.forward(xb, sigma, cond=cb, adapter=adapter).astype(np.float64)
        return out if batched else out[0]

    return fn


# ---------------------------------------------------------------------------
# Checkpoints: LDCK binary format


_CKPT_MAGIC = b"LDCK"
_CKPT_VERSION = 1


def _config_block(state: TrainState):
    cfg = state.model.config
    lines = [
        f"in_channels={cfg.in_channels}",
        f"cond_channels={cfg.cond_channels}",
        f"widths={','.join(str(w) for w in cfg.widths)}",
        f"emb_dim={cfg.emb_dim}",
        f"blocks_per_level={cfg.blocks_per_level}",
        f"sigma_max={state.schedule.sigma_max!r}",
        f"sigma_min={state.schedule.sigma_min!r}",
        f"levels={state.schedule.levels}",
        f"step={state.step}",
        f"has_adapter={int(state.adapter is not None)}",
    ]
    return ("\n".join(lines) + "\n").encode()


def save_checkpoint(path, state: TrainState):
    """LDCK: magic, u32 version, u32 tensor count; per tensor u16 name
    length, name, u8 ndim, u32 dims, f32 data; then a key=value block."""
    tensors = {name: p.value for name, p in state.model.named_params().items()}
    if state.adapter is not None:
        tensors.update({name: p.value for name, p in state.adapter.named_params().items()})
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(tensors)))
        for name in sorted(tensors):
            value = np.asarray(tensors[name], dtype=np.float32)
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", value.ndim))
            f.write(struct.pack(f"<{value.ndim}I", *value.shape))
            f.write(value.astype("<f4").tobytes())
        f.write(_config_block(state))


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CKPT_MAGIC:
            raise ScoreNetError(f"{path}: bad magic {magic!r}, expected LDCK")
        header = f.read(8)
        if len(header) < 8:
            raise ScoreNetError(f"{path}: truncated header")
        version, count = struct.unpack("<II", header)
        if version != _CKPT_VERSION:
            raise ScoreNetError(f"{path}: unsupported version {version}")
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if ndim else 4
            raw = f.read(nbytes)
            if len(raw) != nbytes:
                raise ScoreNetError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims)
        meta = {}
        for line in f.read().decode().splitlines():
            if "=" in line:
                key, val = line.split("=", 1)
                meta[key] = val

    cfg = ModelConfig(
        in_channels=int(meta["in_channels"]),
        cond_channels=int(meta["cond_channels"]),
        widths=tuple(int(w) for w in meta["widths"].split(",")),
        emb_dim=int(meta["emb_dim"]),
        blocks_per_level=int(meta["blocks_per_level"]),
    )
    schedule = NoiseSchedule(float(meta["sigma_max"]), float(meta["sigma_min"]), int(meta["levels"]))
    model = ScoreModel(cfg)
    adapter = ControlAdapter(model) if meta.get("has_adapter") == "1" else None
    params = dict(model.named_params())
    if adapter is not None:
        params.update(adapter.named_params())
    if set(params) != set(tensors):
        unknown = set(tensors) - set(params)
        missing = set(params) - set(tensors)
        raise ScoreNetError(f"{path}: tensor name mismatch (unknown={sorted(unknown)[:3]}, missing={sorted(missing)[:3]})")
    for name, p in params.items():
        p.value = tensors[name].astype(np.float32).copy()
    return TrainState(model=model, schedule=schedule, adapter=adapter, step=int(meta["step"]))
