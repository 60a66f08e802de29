"""The IKrNet architecture: multi-resolution CNN branches, BiLSTM stack,
spatial skip projection and a sigmoid classifier head."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, InvalidArgumentError, ShapeError
from .nn import layers as L
from .nn.module import BatchNorm1d, Conv1d, Linear, Module
from .nn.tensor import Tensor, add, concat, getitem, no_grad, relu, reshape, sigmoid, transpose

DEFAULT_BRANCHES = ((125, 25), (75, 15), (31, 7), (15, 3))
DEFAULT_STRIDES = (1, 5, 1, 5, 1, 4, 1, 4, 1, 3)


@dataclass(frozen=True)
class IKrNetConfig:
    branches: tuple[tuple[int, int], ...] = DEFAULT_BRANCHES
    strides: tuple[int, ...] = DEFAULT_STRIDES
    initial_filters: int = 64
    n_blocks: int = 10
    filter_growth_every: int = 4
    filter_growth_factor: int = 2
    branch_out_len: int = 8
    branch_out_channels: int = 256
    bilstm_layers: int = 2
    bilstm_hidden: int = 128
    se_reduction: int = 4
    expansion_factor: int = 6
    use_skip_link: bool = True
    use_batchnorm: bool = True
    block_type: str = "inverted"

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(tuple(int(v) for v in b) for b in self.branches))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        self.validate()

    def validate(self) -> None:
        if len(self.branches) < 1:
            raise ConfigError("at least one branch is required")
        for b in self.branches:
            if len(b) != 2 or not b[0] > b[1] >= 1:
                raise ConfigError(f"kernel pair {b} must satisfy lk > k >= 1")
        if self.n_blocks < 0 or len(self.strides) != self.n_blocks:
            raise ConfigError(f"need one stride per block: {len(self.strides)} strides, "
                              f"{self.n_blocks} blocks")
        if any(s < 1 for s in self.strides):
            raise ConfigError("strides must be >= 1")
        positive = ("initial_filters", "filter_growth_every", "filter_growth_factor",
                    "branch_out_len", "branch_out_channels", "bilstm_hidden", "se_reduction",
                    "expansion_factor")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.bilstm_layers < 0:
            raise ConfigError("bilstm_layers must be >= 0")
        if self.block_type not in ("inverted", "basic"):
            raise ConfigError(f"unknown block_type {self.block_type!r}")

    def block_channels(self) -> list[int]:
        """Output channels of every block."""
        return [self.initial_filters * self.filter_growth_factor ** (i // self.filter_growth_every)
                for i in range(self.n_blocks)]

    @property
    def min_input_len(self) -> int:
        return max(lk for lk, _ in self.branches)

    @property
    def temporal_width(self) -> int:
        return 2 * self.bilstm_hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branches"] = [list(b) for b in self.branches]
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IKrNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "branches" in d:
            d["branches"] = tuple(tuple(b) for b in d["branches"])
        if "strides" in d:
            d["strides"] = tuple(d["strides"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def toy_config(**overrides) -> IKrNetConfig:
    """One (15, 3) branch, two blocks, 8 filters; cheap enough for unit tests."""
    base = dict(branches=((15, 3),), strides=(5, 5), initial_filters=8, n_blocks=2,
                filter_growth_every=4, branch_out_len=4, branch_out_channels=8,
                bilstm_layers=1, bilstm_hidden=8, se_reduction=4, expansion_factor=2)
    base.update(overrides)
    return IKrNetConfig(**base)


# -- blocks ---------------------------------------------------------------
class SqueezeExcite(Module):
    def __init__(self, rng, channels: int, reduction: int, dtype):
        squeezed = max(1, channels // reduction)
        self.fc1 = Linear(rng, channels, squeezed, dtype=dtype)
        self.fc2 = Linear(rng, squeezed, channels, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return L.squeeze_excite(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


class ConvBN(Module):
    """conv -> (batchnorm) -> (ReLU); the conv carries a bias only without BN."""

    def __init__(self, rng, cin, cout, k, stride=1, groups=1, bn=True, act=True, dtype=np.float32):
        self.conv = Conv1d(rng, cin, cout, k, stride, groups, bias=not bn, dtype=dtype)
        self.bn = BatchNorm1d(cout, dtype) if bn else None
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.bn is not None:
            y = self.bn(y)
        return relu(y) if self.act else y


class InvertedResidual(Module):
    """1x1 expand -> depthwise k (strided) -> squeeze-excite -> 1x1 project."""

    def __init__(self, rng, cin, cout, k, stride, expansion, reduction, bn, dtype):
        hidden = cin * expansion
        self.expand = ConvBN(rng, cin, hidden, 1, bn=bn, dtype=dtype) if expansion != 1 else None
        self.depthwise = ConvBN(rng, hidden, hidden, k, stride, groups=hidden, bn=bn, dtype=dtype)
        self.se = SqueezeExcite(rng, hidden, reduction, dtype)
        self.project = ConvBN(rng, hidden, cout, 1, bn=bn, act=False, dtype=dtype)
        self.residual = stride == 1 and cin == cout

    def __call__(self, x: Tensor) -> Tensor:
        y = self.expand(x) if self.expand is not None else x
        y = self.project(self.se(self.depthwise(y)))
        return add(x, y) if self.residual else y


class BasicBlock(Module):
    def __init__(self, rng, cin, cout, k, stride, bn, dtype):
        self.conv1 = ConvBN(rng, cin, cout, k, stride, bn=bn, dtype=dtype)
        self.conv2 = ConvBN(rng, cout, cout, k, 1, bn=bn, act=False, dtype=dtype)
        self.residual = stride == 1 and cin == cout

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(self.conv1(x))
        return relu(add(x, y) if self.residual else y)


class Branch(Module):
    def __init__(self, rng, cfg: IKrNetConfig, lk: int, k: int, dtype):
        bn = cfg.use_batchnorm
        self.front = ConvBN(rng, 1, cfg.initial_filters, lk, bn=bn, dtype=dtype)
        blocks = []
        cin = cfg.initial_filters
        for cout, stride in zip(cfg.block_channels(), cfg.strides):
            if cfg.block_type == "inverted":
                blocks.append(InvertedResidual(rng, cin, cout, k, stride, cfg.expansion_factor,
                                               cfg.se_reduction, bn, dtype))
            else:
                blocks.append(BasicBlock(rng, cin, cout, k, stride, bn, dtype))
            cin = cout
        self.blocks = blocks
        self.out_proj = (Conv1d(rng, cin, cfg.branch_out_channels, 1, dtype=dtype)
                         if cin != cfg.branch_out_channels else None)
        self.out_len = cfg.branch_out_len

    def __call__(self, x: Tensor) -> Tensor:
        y = self.front(x)
        for block in self.blocks:
            y = block(y)
        if self.out_proj is not None:
            y = self.out_proj(y)
        return L.adaptive_avg_pool1d(y, self.out_len)


class BiLSTMStack(Module):
    def __init__(self, rng, input_size: int, hidden: int, layers: int, dtype):
        bound = 1.0 / np.sqrt(hidden)

        def weights(fin):
            w = L.LSTMWeights(
                Tensor(rng.uniform(-bound, bound, (4 * hidden, fin)).astype(dtype), requires_grad=True),
                Tensor(rng.uniform(-bound, bound, (4 * hidden, hidden)).astype(dtype), requires_grad=True),
                Tensor(np.zeros(4 * hidden, dtype=dtype), requires_grad=True),
            )
            w.bias.data[hidden:2 * hidden] = 1.0  # forget gate
            return w

        self.weights = []
        fin = input_size
        for _ in range(layers):
            self.weights.append((weights(fin), weights(fin)))
            fin = 2 * hidden

    def named_parameters(self, prefix: str = ""):
        for i, (fwd, bwd) in enumerate(self.weights):
            for tag, w in (("fwd", fwd), ("bwd", bwd)):
                yield f"{prefix}layer{i}.{tag}.w_ih", w.w_ih
                yield f"{prefix}layer{i}.{tag}.w_hh", w.w_hh
                yield f"{prefix}layer{i}.{tag}.bias", w.bias

    def __call__(self, seq: Tensor) -> Tensor:
        return L.bilstm(seq, self.weights)


class IKrNetModel(Module):
    def __init__(self, config: IKrNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        self.branches = [Branch(rng, config, lk, k, dtype) for lk, k in config.branches]
        channels = config.branch_out_channels * len(config.branches)
        flat = channels * config.branch_out_len
        width = config.temporal_width
        if config.bilstm_layers > 0:
            self.bilstm = BiLSTMStack(rng, channels, config.bilstm_hidden, config.bilstm_layers, dtype)
            self.spatial_fc = Linear(rng, flat, width, dtype=dtype) if config.use_skip_link else None
            head_in = width
        else:
            self.bilstm = None
            self.spatial_fc = None
            head_in = flat
        self.head_hidden = Linear(rng, head_in, width, dtype=dtype)
        self.head_out = Linear(rng, width, 1, dtype=dtype)
        names = [n for n, _ in self.named_parameters()]
        assert len(names) == len(set(names)), "parameter names must be unique"

    def features(self, batch: Tensor) -> Tensor:
        """Per-branch pooled maps concatenated on channels: ``[B, sum C, out_len]``."""
        if batch.ndim != 3 or batch.shape[1] != 1:
            raise ShapeError(f"expected input [B, 1, L], got {batch.shape}")
        if batch.shape[2] < self.config.min_input_len:
            raise InvalidArgumentError(
                f"input length {batch.shape[2]} is shorter than the largest front kernel; "
                f"minimum admissible length is {self.config.min_input_len}")
        return concat([b(batch) for b in self.branches], axis=1)

    def __call__(self, batch: Tensor) -> Tensor:
        pooled = self.features(batch)
        B = pooled.shape[0]
        flat = reshape(pooled, (B, -1))
        if self.bilstm is not None:
            seq = transpose(pooled, (0, 2, 1))
            out = self.bilstm(seq)
            # final state of each direction: forward at t=T-1, backward at t=0
            H = self.config.bilstm_hidden
            feat = concat([getitem(out, (slice(None), -1, slice(0, H))),
                           getitem(out, (slice(None), 0, slice(H, 2 * H)))], axis=1)
            if self.spatial_fc is not None:
                feat = add(feat, self.spatial_fc(flat))
        else:
            feat = flat
        score = sigmoid(self.head_out(relu(self.head_hidden(feat))))
        return reshape(score, (B,))


def build(config: IKrNetConfig, seed: int = 0, dtype=np.float32) -> IKrNetModel:
    config.validate()
    return IKrNetModel(config, seed, dtype)


def forward(model: IKrNetModel, batch) -> Tensor:
    if not isinstance(batch, Tensor):
        batch = Tensor(np.asarray(batch, dtype=model.head_out.weight.dtype))
    return model(batch)


def predict_scores(model: IKrNetModel, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Inference-mode scores for ``x[N, 1, L]`` (or ``[N, L]``)."""
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, None, :]
    was_training = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(forward(model, x[i:i + batch_size]).data)
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def classify_scores(scores) -> np.ndarray:
    """Bernoulli posterior argmax; a score of exactly 0.5 goes to the positive class."""
    return (np.asarray(scores) >= 0.5).astype(np.int64)


def classify(model: IKrNetModel, batch) -> np.ndarray:
    return classify_scores(predict_scores(model, batch))


def count_parameters(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))
