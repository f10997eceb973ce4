"""Learned voxel-occupancy codec.

The encoder is a three-layer strided 3D conv stack (analysis transform)
followed by uniform quantization; the decoder mirrors it with transposed
convolutions (synthesis transform) and classifies each voxel as occupied
by thresholding. Training optimizes `lam * D + R` where D is a focal
classification loss over the whole grid and R is an estimate of the coded
bits per occupied input voxel under a per-channel Laplacian bin model.

Quantization is additive uniform noise in [-0.5, 0.5) during training and
ties-to-even integer rounding during evaluation, so the training rate term
is a continuous relaxation of the discrete codeword entropy.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .autodiff import (
    AdamState,
    Tensor,
    _node,
    adam_step,
    add_uniform_noise,
    backward,
    no_grad,
    parameter,
    round_ties_even,
)
from .bitstream import (
    CompressedBitstream,
    deflate,
    inflate,
    zigzag_varint_decode,
    zigzag_varint_encode,
)
from .conv import ConvLayerParams, conv3d, conv3d_transpose
from .errors import DataError, ModelMismatchError, ShapeError
from .geometry import VoxelGrid
from .validation import check_in_open_interval, check_positive

SCORE_EPS = 1e-7
PROB_FLOOR = 2.0 ** -50
# lower bound on the entropy-model scale; keeps the rate gradient bounded
# and the bin distribution from degenerating into a spike during training
SCALE_FLOOR = 0.11
# initialization constants, chosen so that quantized latents carry
# information from step 0 and the rate pull cannot collapse them before
# the synthesis transform learns to read them (see README notes on
# training stability)
INIT_ENTROPY_SCALE = 10.0
INIT_LATENT_GAIN = 4.0
INIT_OUTPUT_BIAS = 0.3
_LN2 = float(np.log(2.0))

# (kernel, stride, activation, has_bias) per layer; channel counts come from N
_ANALYSIS_SPEC = [(9, 2, "relu", True), (5, 2, "relu", True), (5, 2, "none", False)]
_SYNTHESIS_SPEC = [(5, 2, "relu", True), (5, 2, "relu", True), (9, 2, "relu", True)]
_DOWNSAMPLE = 8  # three stride-2 layers


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    return float(np.log(np.expm1(y)))


@dataclass
class ModelParams:
    """All trainable state of the codec plus its architecture constants."""

    n_filters: int
    analysis: List[ConvLayerParams]
    synthesis: List[ConvLayerParams]
    entropy_loc: Tensor
    entropy_scale_raw: Tensor

    def parameters(self) -> List[Tensor]:
        out = []
        for layer in self.analysis + self.synthesis:
            out.extend(layer.parameters())
        out.append(self.entropy_loc)
        out.append(self.entropy_scale_raw)
        return out

    def parameter_names(self) -> List[str]:
        names = []
        for group, layers in (("analysis", self.analysis), ("synthesis", self.synthesis)):
            for i, layer in enumerate(layers):
                names.append(f"{group}.{i}.weights")
                if layer.bias is not None:
                    names.append(f"{group}.{i}.bias")
        names += ["entropy.loc", "entropy.scale_raw"]
        return names

    @property
    def model_id(self) -> bytes:
        """16-byte content hash of all parameters (float32 serialization)."""
        h = hashlib.blake2b(digest_size=16)
        for name, tensor in zip(self.parameter_names(), self.parameters()):
            h.update(name.encode())
            h.update(np.asarray(tensor.shape, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
        return h.digest()

    def entropy_scale(self) -> np.ndarray:
        return SCALE_FLOOR + softplus(self.entropy_scale_raw.data.astype(np.float64))


def init_model(n_filters: int = 32, seed: int = 0, dtype=np.float32) -> ModelParams:
    """He-style uniform fan-in initialization, fully seeded."""
    check_positive(n_filters, "n_filters")
    ss = np.random.SeedSequence(seed)
    streams = [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(6)]

    def make_layers(spec, in_out_pairs, rngs):
        layers = []
        for (k, s, act, has_bias), (ci, co), rng in zip(spec, in_out_pairs, rngs):
            bound = np.sqrt(6.0 / (ci * k ** 3))
            w = rng.uniform(-bound, bound, size=(co, ci, k, k, k))
            bias = parameter(np.zeros(co), dtype) if has_bias else None
            layers.append(ConvLayerParams(parameter(w, dtype), bias, s, act))
        return layers

    n = n_filters
    analysis = make_layers(_ANALYSIS_SPEC, [(1, n), (n, n), (n, n)], streams[:3])
    synthesis = make_layers(_SYNTHESIS_SPEC, [(n, n), (n, n), (n, 1)], streams[3:])
    # widen the latent distribution and start with a broad entropy model:
    # quantization then preserves information immediately, and the early
    # rate gradient is too flat for Adam to squeeze the latents to zero
    # before the decoder becomes input-dependent
    analysis[-1].weights.data *= INIT_LATENT_GAIN
    synthesis[-1].bias.data[:] = INIT_OUTPUT_BIAS
    loc = parameter(np.zeros(n), dtype)
    scale_raw = parameter(
        np.full(n, softplus_inverse(INIT_ENTROPY_SCALE - SCALE_FLOOR)), dtype
    )
    return ModelParams(n, analysis, synthesis, loc, scale_raw)


def latent_shape(resolution: int, n_filters: int = 32):
    """Latent tensor shape produced by the analysis transform."""
    if resolution % _DOWNSAMPLE != 0:
        raise ShapeError(
            f"resolution {resolution} is not divisible by {_DOWNSAMPLE}"
        )
    d = resolution // _DOWNSAMPLE
    return (n_filters, d, d, d)


def analysis(x: Tensor, params: ModelParams) -> Tensor:
    """Analysis transform: (1, r, r, r) occupancy -> (N, r/8, r/8, r/8) latent."""
    if x.data.ndim != 4 or x.shape[0] != 1:
        raise ShapeError(f"analysis expects (1, r, r, r) input, got {x.shape}")
    r = x.shape[1]
    if x.shape[1:] != (r, r, r) or r % _DOWNSAMPLE != 0:
        raise ShapeError(
            f"analysis input must be cubic with r divisible by {_DOWNSAMPLE}, "
            f"got {x.shape[1:]}"
        )
    out = x
    for layer in params.analysis:
        out = conv3d(out, layer)
    return out


def synthesis(y: Tensor, params: ModelParams) -> Tensor:
    """Synthesis transform: latent -> (1, r, r, r) non-negative occupancy scores."""
    if y.data.ndim != 4 or y.shape[0] != params.n_filters:
        raise ShapeError(
            f"synthesis expects ({params.n_filters}, d, d, d) latent, got {y.shape}"
        )
    out = y
    for layer in params.synthesis:
        out = conv3d_transpose(out, layer)
    return out


def quantize(y: Tensor, mode: str = "eval", seed=0) -> Tensor:
    """Uniform quantizer: rounding in eval, additive U[-0.5, 0.5) noise in train."""
    if mode == "eval":
        return round_ties_even(y)
    if mode == "train":
        return add_uniform_noise(y, -0.5, 0.5, seed)
    raise ValueError(f"quantize mode must be 'train' or 'eval', got '{mode}'")


def _laplace_bin(v, mu, s):
    """Probability mass of [v-0.5, v+0.5] under Laplace(mu, s), stably, with
    the bin-edge densities needed for gradients."""
    zlo = (v - 0.5 - mu) / s
    zhi = (v + 0.5 - mu) / s
    elo = np.exp(-np.abs(zlo))
    ehi = np.exp(-np.abs(zhi))
    right = zlo >= 0  # whole bin right of the location
    left = zhi <= 0
    p = np.where(
        right,
        0.5 * (elo - ehi),
        np.where(left, 0.5 * (ehi - elo), 1.0 - 0.5 * (elo + ehi)),
    )
    f_lo = elo / (2.0 * s)
    f_hi = ehi / (2.0 * s)
    return p, zlo, zhi, f_lo, f_hi


def rate_bits(y_hat: Tensor, params: ModelParams) -> Tensor:
    """Total code length in bits of the latent under the factorized
    per-channel Laplacian bin model; differentiable in the latent and in
    the entropy parameters."""
    c = y_hat.shape[0]
    if c != params.n_filters:
        raise ShapeError(
            f"latent has {c} channels but entropy model covers {params.n_filters}"
        )
    loc, sraw = params.entropy_loc, params.entropy_scale_raw
    v = y_hat.data.astype(np.float64)
    mu = loc.data.astype(np.float64).reshape(c, 1, 1, 1)
    s = (SCALE_FLOOR + softplus(sraw.data.astype(np.float64))).reshape(c, 1, 1, 1)

    p, zlo, zhi, f_lo, f_hi = _laplace_bin(v, mu, s)
    live = p > PROB_FLOOR
    p_eff = np.maximum(p, PROB_FLOOR)
    total = np.sum(-np.log2(p_eff), dtype=np.float64)
    out = np.asarray(total, dtype=y_hat.dtype)

    def grad(g):
        common = np.where(live, -float(g) / (_LN2 * p_eff), 0.0)
        dp_dv = f_hi - f_lo
        gv = (common * dp_dv).astype(y_hat.dtype)
        gmu = np.sum(common * -dp_dv, axis=(1, 2, 3))
        dp_ds = zlo * f_lo - zhi * f_hi
        sigma = 1.0 / (1.0 + np.exp(-sraw.data.astype(np.float64)))
        gs = np.sum(common * dp_ds, axis=(1, 2, 3)) * sigma
        return gv, gmu.astype(loc.dtype), gs.astype(sraw.dtype)

    return _node(out, (y_hat, loc, sraw), grad)


def focal_loss(scores: Tensor, grid: VoxelGrid, alpha: float, gamma: float) -> Tensor:
    """Class-balanced focal loss summed over every voxel of the grid.

    Scores are clamped to [SCORE_EPS, 1 - SCORE_EPS] before the log; the
    clamp passes no gradient outside that range.
    """
    r = grid.resolution
    if scores.shape != (1, r, r, r):
        raise ShapeError(
            f"scores shape {scores.shape} does not match grid (1, {r}, {r}, {r})"
        )
    check_in_open_interval(alpha, 0.0, 1.0, "alpha")
    if gamma < 0:
        raise DataError(f"gamma must be >= 0, got {gamma}")

    occ = grid.to_dense(bool)[None]
    sc = scores.data.astype(np.float64)
    inside = (sc >= SCORE_EPS) & (sc <= 1.0 - SCORE_EPS)
    p = np.clip(sc, SCORE_EPS, 1.0 - SCORE_EPS)
    p_t = np.where(occ, p, 1.0 - p)
    a_z = np.where(occ, alpha, 1.0 - alpha)
    one_minus = 1.0 - p_t
    log_pt = np.log(p_t)
    fl = -a_z * one_minus ** gamma * log_pt
    out = np.asarray(np.sum(fl, dtype=np.float64), dtype=scores.dtype)

    def grad(g):
        # d(fl)/d(p_t) then chain through p_t = p or 1-p and the clamp
        dfl_dpt = a_z * (gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus ** gamma / p_t)
        sign = np.where(occ, 1.0, -1.0)
        return ((float(g) * dfl_dpt * sign * inside).astype(scores.dtype),)

    return _node(out, (scores,), grad)


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    lam: float = 1e-4
    alpha: float = 0.9
    gamma: float = 2.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    steps: int = 500
    seed: int = 0
    resolution: int = 64

    def __post_init__(self):
        if self.lam < 0:  # lam == 0 is allowed: pure rate minimization
            raise DataError(f"lam must be >= 0, got {self.lam}")
        check_in_open_interval(self.alpha, 0.0, 1.0, "alpha")
        if self.gamma < 0:
            raise DataError(f"gamma must be >= 0, got {self.gamma}")
        check_positive(self.lr, "lr")
        check_positive(self.batch_size, "batch_size")
        if self.steps < 0:
            raise DataError(f"steps must be >= 0, got {self.steps}")
        if self.resolution % _DOWNSAMPLE != 0:
            raise DataError(
                f"training resolution {self.resolution} must be divisible by 8"
            )


@dataclass
class LossBreakdown:
    """Distortion (mean focal loss per cloud), rate (mean bpov), and total."""

    D: float
    R: float
    L: float


def grid_to_tensor(grid: VoxelGrid, dtype=np.float32) -> Tensor:
    return Tensor(grid.to_dense(dtype)[None])


def train_step(
    batch: Sequence[VoxelGrid],
    params: ModelParams,
    cfg: TrainConfig,
    opt: AdamState,
) -> LossBreakdown:
    """One optimizer step on a batch of grids; deterministic given cfg.seed
    and the optimizer step counter."""
    if not batch:
        raise DataError("train_step requires a non-empty batch")
    for g in batch:
        if g.resolution != cfg.resolution:
            raise DataError(
                f"grid resolution {g.resolution} does not match configured "
                f"{cfg.resolution}"
            )
        if g.occupied_count == 0:
            raise DataError("cannot train on an empty grid")
    noise_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((cfg.seed, 0, opt.t)))
    )
    n = len(batch)
    d_total = None
    r_total = None
    for grid in batch:
        x = grid_to_tensor(grid, params.entropy_loc.dtype)
        y = analysis(x, params)
        y_noisy = quantize(y, "train", noise_rng)
        bits = rate_bits(y_noisy, params)
        scores = synthesis(y_noisy, params)
        d_i = focal_loss(scores, grid, cfg.alpha, cfg.gamma)
        r_i = bits / grid.occupied_count
        d_total = d_i if d_total is None else d_total + d_i
        r_total = r_i if r_total is None else r_total + r_i
    d_mean = d_total / n
    r_mean = r_total / n
    loss = d_mean * cfg.lam + r_mean
    backward(loss)
    adam_step(params.parameters(), opt)
    return LossBreakdown(D=d_mean.item(), R=r_mean.item(), L=loss.item())


def train(
    grids: Sequence[VoxelGrid],
    cfg: TrainConfig,
    params: Optional[ModelParams] = None,
    opt: Optional[AdamState] = None,
    n_filters: int = 32,
    callback: Optional[Callable[[int, LossBreakdown], None]] = None,
) -> tuple:
    """Run cfg.steps optimizer steps over shuffled batches of *grids*.

    Returns (params, opt). The shuffle, the initialization, and the
    quantizer noise all derive from cfg.seed, so runs are bit-reproducible.
    """
    if not grids:
        raise DataError("training requires at least one grid")
    if params is None:
        params = init_model(n_filters=n_filters, seed=cfg.seed)
    if opt is None:
        opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    shuffle_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((cfg.seed, 1)))
    )
    order: List[int] = []
    for step in range(cfg.steps):
        take = min(cfg.batch_size, len(grids))
        if len(order) < take:
            order = list(shuffle_rng.permutation(len(grids)))
        batch = [grids[i] for i in order[:take]]
        order = order[take:]
        stats = train_step(batch, params, cfg, opt)
        if callback is not None:
            callback(opt.t, stats)
    return params, opt


def encode(grid: VoxelGrid, params: ModelParams) -> CompressedBitstream:
    """Compress a voxel grid: analysis, rounding, varints, DEFLATE."""
    r = grid.resolution
    if r % _DOWNSAMPLE != 0:
        raise ShapeError(f"grid resolution {r} is not divisible by {_DOWNSAMPLE}")
    with no_grad():
        x = grid_to_tensor(grid, params.entropy_loc.dtype)
        y = analysis(x, params)
    latents = np.rint(y.data).astype(np.int64)
    payload = deflate(zigzag_varint_encode(latents))
    return CompressedBitstream(
        model_id=params.model_id,
        resolution=r,
        latent_shape=tuple(latents.shape),
        occupied_input_voxels=grid.occupied_count,
        payload=payload,
    )


def decode(
    bs: CompressedBitstream, params: ModelParams, threshold: float = 0.5
) -> VoxelGrid:
    """Reconstruct the voxel grid: inflate, synthesis, clamp to [0, 1],
    then threshold the per-voxel scores."""
    if bs.model_id != params.model_id:
        raise ModelMismatchError(
            "bitstream was produced by a different model "
            f"(id {bs.model_id.hex()} != {params.model_id.hex()})"
        )
    c, d, h, w = bs.latent_shape
    if c != params.n_filters:
        raise ModelMismatchError(
            f"latent has {c} channels, model expects {params.n_filters}"
        )
    if (d * _DOWNSAMPLE, h * _DOWNSAMPLE, w * _DOWNSAMPLE) != (
        bs.resolution,
        bs.resolution,
        bs.resolution,
    ):
        raise ModelMismatchError(
            f"latent shape {bs.latent_shape} inconsistent with resolution "
            f"{bs.resolution}"
        )
    counts = c * d * h * w
    latents = zigzag_varint_decode(inflate(bs.payload), counts).reshape(c, d, h, w)
    with no_grad():
        scores = synthesis(Tensor(latents.astype(params.entropy_loc.dtype)), params)
    occupancy = np.clip(scores.data[0], 0.0, 1.0) >= threshold
    return VoxelGrid.from_dense(occupancy.astype(np.float32))


def decode_latents(bs: CompressedBitstream) -> np.ndarray:
    """The quantized latent tensor carried by a bitstream (no synthesis)."""
    c, d, h, w = bs.latent_shape
    return zigzag_varint_decode(inflate(bs.payload), c * d * h * w).reshape(c, d, h, w)
