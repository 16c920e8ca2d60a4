"""Four forecasters behind one interface.

Every model maps a scaled [batch, channels, 72] lookback to a [batch, 36]
forecast of the target channel (input row 0 is the target by convention, see
``data.make_window``):

* persistence -- repeat the last observed target value,
* N-BEATS -- doubly-residual stacks of fully connected blocks whose
  expansion coefficients project onto learned basis vectors,
* N-HiTS -- the same residual wiring with max-pool multi-rate input sampling
  and coarse forecasts upsampled by hierarchical linear interpolation,
* TFT-style -- variable selection, recurrent encoder/decoder, gated skips
  and causal temporal multi-head attention, reduced to a point-forecast head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import (Tensor, concat, elu, glu, interpolate_linear,
                     layer_norm, linear, masked_softmax, max_pool_1d, relu,
                     sigmoid, softmax, stack, uniform_init)

LOOKBACK = 72
HORIZON = 36


class ForecastModel:
    """Interface: forward([n, C, 72]) -> [n, 36], plus parameter enumeration."""

    train_mode = False

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Tensor]:
        return {}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def predict(self, window: np.ndarray) -> np.ndarray:
        """Forecast a single [C, 72] window, returning a plain [36] array."""
        out = self.forward(Tensor(np.asarray(window, dtype=np.float64)[None]))
        return out.data[0].copy()

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(np.asarray(windows, dtype=np.float64))).data.copy()

    def train(self, mode: bool = True):
        self.train_mode = mode
        return self

    def eval(self):
        return self.train(False)


class PersistenceModel(ForecastModel):
    """Repeat the last observed target value across the whole horizon."""

    def __init__(self, n_channels: int = 1):
        self.n_channels = n_channels

    def forward(self, x: Tensor) -> Tensor:
        last = x[:, 0, LOOKBACK - 1:LOOKBACK]
        return last * Tensor(np.ones((1, HORIZON)))


class _Linear:
    """Affine layer with seeded uniform +-sqrt(1/fan_in) initialization."""

    def __init__(self, rng, d_in: int, d_out: int, name: str):
        self.w = Tensor(uniform_init(rng, d_in, d_in, d_out), requires_grad=True)
        self.b = Tensor(uniform_init(rng, d_in, d_out), requires_grad=True)
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}


# -- N-BEATS ---------------------------------------------------------------------


@dataclass(frozen=True)
class NBeatsConfig:
    n_stacks: int = 3
    blocks_per_stack: int = 1
    hidden_width: int = 256
    theta_dim: int = 32

    def validate(self):
        for name in ("n_stacks", "blocks_per_stack", "hidden_width", "theta_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        return self


class NBeatsBlock:
    """Four fully connected layers feeding backward/forward expansion
    coefficients, each projected onto learned basis vectors."""

    def __init__(self, rng, input_len: int, hidden: int, theta_dim: int, name: str):
        dims = [input_len] + [hidden] * 4
        self.fc = [_Linear(rng, dims[i], dims[i + 1], f"{name}.fc{i + 1}")
                   for i in range(4)]
        self.theta_b = _Linear(rng, hidden, theta_dim, f"{name}.theta_b")
        self.theta_f = _Linear(rng, hidden, theta_dim, f"{name}.theta_f")
        self.basis_b = Tensor(uniform_init(rng, theta_dim, theta_dim, input_len),
                              requires_grad=True)
        self.basis_f = Tensor(uniform_init(rng, theta_dim, theta_dim, HORIZON),
                              requires_grad=True)
        self.name = name

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = x
        for fc in self.fc:
            h = relu(fc(h))
        backcast = self.theta_b(h) @ self.basis_b
        forecast = self.theta_f(h) @ self.basis_f
        return backcast, forecast

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for fc in self.fc:
            out.update(fc.params())
        out.update(self.theta_b.params())
        out.update(self.theta_f.params())
        out[f"{self.name}.basis_b"] = self.basis_b
        out[f"{self.name}.basis_f"] = self.basis_f
        return out


class NBeatsModel(ForecastModel):
    """Doubly-residual stacking: block l+1 sees x_l minus the backcast of
    block l, and the model forecast is the exact sum of block forecasts."""

    def __init__(self, config: NBeatsConfig | None = None, n_channels: int = 1,
                 seed: int = 0):
        self.config = (config or NBeatsConfig()).validate()
        self.n_channels = n_channels
        rng = np.random.default_rng(seed)
        input_len = n_channels * LOOKBACK
        self.blocks = [
            NBeatsBlock(rng, input_len, self.config.hidden_width,
                        self.config.theta_dim, f"stack{s}.block{b}")
            for s in range(self.config.n_stacks)
            for b in range(self.config.blocks_per_stack)
        ]

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        residual = x.reshape(n, self.n_channels * LOOKBACK)
        forecast = None
        for block in self.blocks:
            backcast, block_forecast = block.forward(residual)
            residual = residual - backcast
            forecast = block_forecast if forecast is None else forecast + block_forecast
        return forecast

    def forward_with_blocks(self, x: Tensor):
        """forward plus the per-block forecasts (for wiring checks)."""
        n = x.shape[0]
        residual = x.reshape(n, self.n_channels * LOOKBACK)
        pieces = []
        for block in self.blocks:
            backcast, block_forecast = block.forward(residual)
            residual = residual - backcast
            pieces.append(block_forecast)
        total = pieces[0]
        for p in pieces[1:]:
            total = total + p
        return total, pieces

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for block in self.blocks:
            out.update(block.params())
        return out


# -- N-HiTS -----------------------------------------------------------------------


@dataclass(frozen=True)
class NHitsConfig:
    n_stacks: int = 3
    blocks_per_stack: int = 1
    hidden_width: int = 256
    theta_dim: int = 32
    pool_kernels: tuple = (8, 4, 1)
    coarse_forecast_lens: tuple = (6, 12, 36)

    def validate(self):
        if len(self.pool_kernels) != self.n_stacks:
            raise ValueError("pool_kernels must list one kernel per stack")
        if len(self.coarse_forecast_lens) != self.n_stacks:
            raise ValueError("coarse_forecast_lens must list one length per stack")
        if any(k < 1 for k in self.pool_kernels):
            raise ValueError("pooling kernels must be >= 1")
        if any(not 1 <= m <= HORIZON for m in self.coarse_forecast_lens):
            raise ValueError(f"coarse forecast lengths must lie in [1, {HORIZON}]")
        if self.hidden_width < 1 or self.theta_dim < 1 or self.blocks_per_stack < 1:
            raise ValueError("widths and block counts must be positive")
        return self


class NHitsBlock:
    """N-BEATS-style block over a max-pooled input; the coarse forecast and
    backcast are upsampled back to full resolution by linear interpolation."""

    def __init__(self, rng, n_channels: int, hidden: int, theta_dim: int,
                 kernel: int, coarse_len: int, name: str):
        self.kernel = kernel
        self.coarse_len = coarse_len
        self.n_channels = n_channels
        self.pooled_len = math.ceil(LOOKBACK / kernel)
        input_len = n_channels * self.pooled_len
        dims = [input_len] + [hidden] * 4
        self.fc = [_Linear(rng, dims[i], dims[i + 1], f"{name}.fc{i + 1}")
                   for i in range(4)]
        self.theta_b = _Linear(rng, hidden, theta_dim, f"{name}.theta_b")
        self.theta_f = _Linear(rng, hidden, theta_dim, f"{name}.theta_f")
        self.basis_b = Tensor(uniform_init(rng, theta_dim, theta_dim, input_len),
                              requires_grad=True)
        self.basis_f = Tensor(uniform_init(rng, theta_dim, theta_dim, coarse_len),
                              requires_grad=True)
        self.name = name

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """x is [n, C, 72]; returns (backcast [n, C, 72], forecast [n, 36])."""
        n = x.shape[0]
        pooled = max_pool_1d(x, self.kernel)
        h = pooled.reshape(n, self.n_channels * self.pooled_len)
        for fc in self.fc:
            h = relu(fc(h))
        coarse_b = (self.theta_b(h) @ self.basis_b).reshape(
            n, self.n_channels, self.pooled_len)
        backcast = interpolate_linear(coarse_b, LOOKBACK)
        coarse_f = self.theta_f(h) @ self.basis_f
        forecast = interpolate_linear(coarse_f, HORIZON)
        return backcast, forecast

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for fc in self.fc:
            out.update(fc.params())
        out.update(self.theta_b.params())
        out.update(self.theta_f.params())
        out[f"{self.name}.basis_b"] = self.basis_b
        out[f"{self.name}.basis_f"] = self.basis_f
        return out


class NHitsModel(ForecastModel):
    """Same residual wiring as N-BEATS with per-stack multi-rate sampling."""

    def __init__(self, config: NHitsConfig | None = None, n_channels: int = 1,
                 seed: int = 0):
        self.config = (config or NHitsConfig()).validate()
        self.n_channels = n_channels
        rng = np.random.default_rng(seed)
        self.blocks = [
            NHitsBlock(rng, n_channels, self.config.hidden_width,
                       self.config.theta_dim, self.config.pool_kernels[s],
                       self.config.coarse_forecast_lens[s], f"stack{s}.block{b}")
            for s in range(self.config.n_stacks)
            for b in range(self.config.blocks_per_stack)
        ]

    def forward(self, x: Tensor) -> Tensor:
        residual = x
        forecast = None
        for block in self.blocks:
            backcast, block_forecast = block.forward(residual)
            residual = residual - backcast
            forecast = block_forecast if forecast is None else forecast + block_forecast
        return forecast

    def forward_with_blocks(self, x: Tensor):
        residual = x
        pieces = []
        for block in self.blocks:
            backcast, block_forecast = block.forward(residual)
            residual = residual - backcast
            pieces.append(block_forecast)
        total = pieces[0]
        for p in pieces[1:]:
            total = total + p
        return total, pieces

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for block in self.blocks:
            out.update(block.params())
        return out


# -- TFT-style --------------------------------------------------------------------


@dataclass(frozen=True)
class TftConfig:
    hidden_dim: int = 64
    n_heads: int = 4
    dropout: float = 0.1

    def validate(self):
        if self.hidden_dim < 1 or self.n_heads < 1:
            raise ValueError("hidden_dim and n_heads must be positive")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} must be divisible by "
                f"n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        return self


class Grn:
    """Gated residual network: LayerNorm(skip(a) + GLU(W1 eta2 + b1)) with
    eta2 = ELU(W2 a + W3 c + b2); the context term drops out when absent."""

    def __init__(self, rng, d_in: int, d_hidden: int, d_out: int, name: str,
                 context_dim: int | None = None, dropout: float = 0.0):
        self.w2 = _Linear(rng, d_in, d_hidden, f"{name}.w2")
        self.w3 = (Tensor(uniform_init(rng, context_dim, context_dim, d_hidden),
                          requires_grad=True) if context_dim else None)
        self.w1 = _Linear(rng, d_hidden, 2 * d_out, f"{name}.w1")
        self.skip = _Linear(rng, d_in, d_out, f"{name}.skip") if d_in != d_out else None
        self.gain = Tensor(np.ones(d_out), requires_grad=True)
        self.shift = Tensor(np.zeros(d_out), requires_grad=True)
        self.dropout = dropout
        self.name = name

    def __call__(self, a: Tensor, context: Tensor | None = None,
                 drop_rng: np.random.Generator | None = None) -> Tensor:
        eta2 = self.w2(a)
        if context is not None:
            if self.w3 is None:
                raise ValueError(f"{self.name}: no context projection configured")
            eta2 = eta2 + context @ self.w3
        eta1 = self.w1(elu(eta2))
        if drop_rng is not None and self.dropout > 0.0:
            keep = (drop_rng.uniform(size=eta1.shape) >= self.dropout)
            eta1 = eta1 * Tensor(keep / (1.0 - self.dropout))
        gated = glu(eta1)
        residual = a if self.skip is None else self.skip(a)
        return layer_norm(residual + gated, self.gain, self.shift)

    def params(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.w2.params())
        if self.w3 is not None:
            out[f"{self.name}.w3"] = self.w3
        out.update(self.w1.params())
        if self.skip is not None:
            out.update(self.skip.params())
        out[f"{self.name}.gain"] = self.gain
        out[f"{self.name}.shift"] = self.shift
        return out


class VariableSelection:
    """Instance-wise channel weighting: per-channel GRN transforms combined
    under softmax weights produced by a GRN over the concatenated inputs."""

    def __init__(self, rng, n_channels: int, d: int, name: str,
                 dropout: float = 0.0):
        self.n_channels = n_channels
        self.d = d
        self.transforms = [Grn(rng, d, d, d, f"{name}.chan{i}", dropout=dropout)
                           for i in range(n_channels)]
        self.weight_grn = Grn(rng, n_channels * d, d, n_channels,
                              f"{name}.weights", dropout=dropout)

    def __call__(self, embeddings: list[Tensor],
                 drop_rng: np.random.Generator | None = None):
        weights = softmax(self.weight_grn(concat(embeddings, axis=-1),
                                          drop_rng=drop_rng))
        transformed = stack([grn(e, drop_rng=drop_rng)
                             for grn, e in zip(self.transforms, embeddings)], axis=1)
        n = weights.shape[0]
        combined = (transformed * weights.reshape(n, self.n_channels, 1)).sum(axis=1)
        return combined, weights

    def params(self) -> dict[str, Tensor]:
        out = {}
        for grn in self.transforms:
            out.update(grn.params())
        out.update(self.weight_grn.params())
        return out


class GruCell:
    """Standard gated recurrent cell of width d."""

    def __init__(self, rng, d_in: int, d: int, name: str):
        self.x2z = _Linear(rng, d_in, d, f"{name}.x2z")
        self.x2r = _Linear(rng, d_in, d, f"{name}.x2r")
        self.x2n = _Linear(rng, d_in, d, f"{name}.x2n")
        self.h2z = Tensor(uniform_init(rng, d, d, d), requires_grad=True)
        self.h2r = Tensor(uniform_init(rng, d, d, d), requires_grad=True)
        self.h2n = Tensor(uniform_init(rng, d, d, d), requires_grad=True)
        self.name = name

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        update = sigmoid(self.x2z(x) + h @ self.h2z)
        reset = sigmoid(self.x2r(x) + h @ self.h2r)
        candidate = (self.x2n(x) + reset * (h @ self.h2n)).tanh()
        return (1.0 - update) * candidate + update * h

    def params(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.x2z.params())
        out.update(self.x2r.params())
        out.update(self.x2n.params())
        out[f"{self.name}.h2z"] = self.h2z
        out[f"{self.name}.h2r"] = self.h2r
        out[f"{self.name}.h2n"] = self.h2n
        return out


def causal_attention_mask(n_dec: int = HORIZON, n_enc: int = LOOKBACK) -> np.ndarray:
    """Boolean [n_dec, n_enc + n_dec] mask: decoder position t may attend to
    every encoder position and to decoder positions up to and including t."""
    total = n_enc + n_dec
    mask = np.zeros((n_dec, total), dtype=bool)
    for t in range(n_dec):
        mask[t, :n_enc + t + 1] = True
    return mask


class TftModel(ForecastModel):
    """Point-forecast temporal fusion pipeline: per-step variable selection,
    recurrent encoder over the 72 past steps, recurrent decoder unrolled over
    36 future steps fed with normalized time-index features, gated skips,
    causal temporal multi-head attention and a position-wise GRN before the
    scalar output head."""

    def __init__(self, config: TftConfig | None = None, n_channels: int = 1,
                 seed: int = 0):
        self.config = (config or TftConfig()).validate()
        self.n_channels = n_channels
        d = self.config.hidden_dim
        rng = np.random.default_rng(seed)
        drop = self.config.dropout
        self.embed = [_Linear(rng, 1, d, f"embed.chan{i}") for i in range(n_channels)]
        self.selection = VariableSelection(rng, n_channels, d, "select", dropout=drop)
        self.encoder = GruCell(rng, d, d, "encoder")
        self.time_embed = _Linear(rng, 1, d, "time_embed")
        self.decoder = GruCell(rng, d, d, "decoder")
        self.seq_gate = _Linear(rng, d, 2 * d, "seq_gate")
        self.seq_gain = Tensor(np.ones(d), requires_grad=True)
        self.seq_shift = Tensor(np.zeros(d), requires_grad=True)
        self.wq = Tensor(uniform_init(rng, d, d, d), requires_grad=True)
        self.wk = Tensor(uniform_init(rng, d, d, d), requires_grad=True)
        self.wv = Tensor(uniform_init(rng, d, d, d), requires_grad=True)
        self.attn_out = _Linear(rng, d, d, "attn_out")
        self.attn_gate = _Linear(rng, d, 2 * d, "attn_gate")
        self.attn_gain = Tensor(np.ones(d), requires_grad=True)
        self.attn_shift = Tensor(np.zeros(d), requires_grad=True)
        self.feed_forward = Grn(rng, d, d, d, "ff", dropout=drop)
        self.head = _Linear(rng, d, 1, "head")
        self.mask = causal_attention_mask()
        self._drop_rng = np.random.default_rng(seed + 1)

    def _gate_add_norm(self, gate: _Linear, value: Tensor, residual: Tensor,
                       gain: Tensor, shift: Tensor) -> Tensor:
        return layer_norm(residual + glu(gate(value)), gain, shift)

    def forward(self, x: Tensor) -> Tensor:
        return self._run(x)[0]

    def forward_with_details(self, x: Tensor):
        """forward plus (attention weights [n, heads, 36, 108], selection
        weights [n, 72, C])."""
        return self._run(x)

    def _run(self, x: Tensor):
        n, n_channels, length = x.shape
        if n_channels != self.n_channels or length != LOOKBACK:
            raise ValueError(
                f"expected input [batch, {self.n_channels}, {LOOKBACK}], got {x.shape}")
        d = self.config.hidden_dim
        heads = self.config.n_heads
        d_head = d // heads
        drop_rng = self._drop_rng if self.train_mode else None

        flat = n * LOOKBACK
        embeddings = [self.embed[c](x[:, c, :].reshape(flat, 1))
                      for c in range(n_channels)]
        selected, select_weights = self.selection(embeddings, drop_rng=drop_rng)
        past = selected.reshape(n, LOOKBACK, d)

        state = Tensor(np.zeros((n, d)))
        steps = []
        for t in range(LOOKBACK):
            state = self.encoder(past[:, t, :], state)
            steps.append(state)

        time_idx = (np.arange(1, HORIZON + 1, dtype=np.float64) / HORIZON)[:, None]
        future_inputs = self.time_embed(Tensor(time_idx))  # [36, d]
        zeros = Tensor(np.zeros((n, 1, d)))
        future = zeros + future_inputs.reshape(1, HORIZON, d)  # broadcast to batch
        for t in range(HORIZON):
            state = self.decoder(future[:, t, :], state)
            steps.append(state)

        sequence = stack(steps, axis=1)                       # [n, 108, d]
        residual = concat([past, future], axis=1)             # [n, 108, d]
        features = self._gate_add_norm(self.seq_gate, sequence, residual,
                                       self.seq_gain, self.seq_shift)

        def split_heads(t_in, steps_len):
            return t_in.reshape(n, steps_len, heads, d_head).swapaxes(1, 2)

        queries = split_heads(features[:, LOOKBACK:, :] @ self.wq, HORIZON)
        keys = split_heads(features @ self.wk, LOOKBACK + HORIZON)
        values = split_heads(features @ self.wv, LOOKBACK + HORIZON)
        scores = (queries @ keys.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_head))
        attn = masked_softmax(scores, self.mask)              # [n, H, 36, 108]
        context = (attn @ values).swapaxes(1, 2).reshape(n, HORIZON, d)
        context = self.attn_out(context)

        decoded = features[:, LOOKBACK:, :]
        attended = self._gate_add_norm(self.attn_gate, context, decoded,
                                       self.attn_gain, self.attn_shift)
        enriched = self.feed_forward(attended, drop_rng=drop_rng)
        out = self.head(enriched).reshape(n, HORIZON)
        return out, attn, select_weights.reshape(n, LOOKBACK, n_channels)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for lin in self.embed:
            out.update(lin.params())
        out.update(self.selection.params())
        out.update(self.encoder.params())
        out.update(self.time_embed.params())
        out.update(self.decoder.params())
        out.update(self.seq_gate.params())
        out["seq.gain"] = self.seq_gain
        out["seq.shift"] = self.seq_shift
        out["attn.wq"] = self.wq
        out["attn.wk"] = self.wk
        out["attn.wv"] = self.wv
        out.update(self.attn_out.params())
        out.update(self.attn_gate.params())
        out["attn.gain"] = self.attn_gain
        out["attn.shift"] = self.attn_shift
        out.update(self.feed_forward.params())
        out.update(self.head.params())
        return out


MODEL_KINDS = ("persistence", "nbeats", "nhits", "tft")


def build_model(kind: str, n_channels: int, seed: int = 0,
                nbeats: NBeatsConfig | None = None,
                nhits: NHitsConfig | None = None,
                tft: TftConfig | None = None) -> ForecastModel:
    if kind == "persistence":
        return PersistenceModel(n_channels)
    if kind == "nbeats":
        return NBeatsModel(nbeats, n_channels, seed)
    if kind == "nhits":
        return NHitsModel(nhits, n_channels, seed)
    if kind == "tft":
        return TftModel(tft, n_channels, seed)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
