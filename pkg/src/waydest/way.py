"""The WAY network: 4-channel representation layer and stacked CASP blocks.

Channel 0 carries the spatial encoding of grid centers, channel 1 the
per-element GRU summary of local samples, channels 2 and 3 the departure
port and ship type embeddings; time encoding is added to all four. Each
CASP block aggregates channels per step (multi-head channel attention),
mixes steps causally (masked self-attention), substitutes the result for
channel 0 and runs a feed-forward layer shared over channels and steps.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from .nn import Tensor
from .nn import functional as F
from .represent import N_LOCAL_FEATURES, SampledSequence, spatial_encode, time_encode

# (L, d, h, d_k, d_f)
PRESETS = {
    "base": (4, 128, 4, 64, 256),
    "small": (2, 64, 2, 32, 128),
    "tiny": (2, 32, 2, 16, 128),
}


@dataclass(frozen=True)
class WayConfig:
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_head: int = 64
    d_ff: int = 256
    n_ports: int = 2
    n_ship_types: int = 1
    n_features: int = N_LOCAL_FEATURES
    n_channels: int = 4
    squeeze_ratio: int = 2
    dropout: float = 0.3

    def __post_init__(self):
        if self.n_layers < 2 or self.n_layers % 2:
            raise ValueError(f"n_layers must be a positive even number, got {self.n_layers}")
        if self.d_model % 4:
            raise ValueError(f"d_model must be divisible by 4, got {self.d_model}")
        if self.n_channels != 4:
            raise ValueError("the representation layer produces exactly 4 channels")
        if self.n_channels % self.squeeze_ratio:
            raise ValueError("n_channels must be divisible by squeeze_ratio")
        if self.n_ports < 1 or self.n_ship_types < 1:
            raise ValueError("vocabulary sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def preset(cls, name: str, **kw) -> WayConfig:
        try:
            L, d, h, dk, df = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(n_layers=L, d_model=d, n_heads=h, d_head=dk, d_ff=df, **kw)

    @property
    def n_gru_layers(self) -> int:
        return self.n_layers // 2

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_count(cfg: WayConfig) -> int:
    """Closed-form size of every learnable tensor."""
    d, hd, C = cfg.d_model, cfg.n_heads * cfg.d_head, cfg.n_channels
    gru = sum(3 * ((cfg.n_features if l == 0 else d) * d + d * d + d) for l in range(cfg.n_gru_layers))
    emb = (cfg.n_ports + cfg.n_ship_types) * d
    mca = d * hd + 2 * cfg.n_heads * C * (C // cfg.squeeze_ratio) + hd * d
    msa = 4 * d * hd
    sff = d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d
    norms = 3 * 2 * d
    return gru + emb + cfg.n_layers * (mca + msa + sff + norms) + d * cfg.n_ports


@dataclass
class Batch:
    centers: np.ndarray  # (B, N, 2)
    deltas: np.ndarray  # (B, N)
    lengths: np.ndarray  # (B,)
    local: np.ndarray  # (B*N, T, f)
    local_mask: np.ndarray  # (B*N, T)
    departure: np.ndarray  # (B,)
    ship: np.ndarray  # (B,)
    labels: np.ndarray | None  # (B,)

    @property
    def valid(self) -> np.ndarray:
        n = self.deltas.shape[1]
        return np.arange(n)[None, :] < self.lengths[:, None]


def collate(samples: Sequence[SampledSequence], ship_index: dict[str, int]) -> Batch:
    """Right-pad sampled sequences into dense arrays."""
    if not samples:
        raise ValueError("empty batch")
    B = len(samples)
    N = max(len(s) for s in samples)
    T = max(len(x) for s in samples for x in s.local)
    f = samples[0].local[0].shape[1]
    centers = np.zeros((B, N, 2))
    deltas = np.zeros((B, N))
    local = np.zeros((B * N, T, f))
    mask = np.zeros((B * N, T))
    for b, s in enumerate(samples):
        n = len(s)
        centers[b, :n] = s.centers
        deltas[b, :n] = s.deltas
        for k, rows in enumerate(s.local):
            local[b * N + k, : len(rows)] = rows
            mask[b * N + k, : len(rows)] = 1.0
    try:
        ship = np.array([ship_index[s.ship_type] for s in samples], dtype=int)
    except KeyError as exc:
        raise KeyError(f"unknown ship type {exc.args[0]!r}; known: {sorted(ship_index)}") from None
    labels = None
    if all(s.label is not None for s in samples):
        labels = np.array([s.label for s in samples], dtype=int)
    return Batch(
        centers,
        deltas,
        np.array([len(s) for s in samples]),
        local,
        mask,
        np.array([s.departure for s in samples], dtype=int),
        ship,
        labels,
    )


def _xavier(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class WayModel:
    """Parameters plus forward computation. Parameters live in ``self.params``."""

    def __init__(self, config: WayConfig, rng: np.random.Generator | int | None = 0):
        self.config = config
        rng = np.random.default_rng(rng)
        self.params: dict[str, Tensor] = {}
        self._init_params(rng)

    def _add(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _init_params(self, rng):
        c = self.config
        d, h, dk, C = c.d_model, c.n_heads, c.d_head, c.n_channels
        hd, Cs = h * dk, c.n_channels // c.squeeze_ratio
        for l in range(c.n_gru_layers):
            fin = c.n_features if l == 0 else d
            for gate in ("u", "r", "h"):
                self._add(f"gru.{l}.W_{gate}", _xavier(rng, (fin, d), fin, d))
                self._add(f"gru.{l}.U_{gate}", _xavier(rng, (d, d), d, d))
                self._add(f"gru.{l}.b_{gate}", np.zeros(d))
        self._add("emb.port", rng.standard_normal((c.n_ports, d)))
        self._add("emb.ship", rng.standard_normal((c.n_ship_types, d)))
        for b in range(c.n_layers):
            p = f"block.{b}"
            self._add(f"{p}.mca.W_tr", _xavier(rng, (d, hd), d, dk))
            self._add(f"{p}.mca.W_sq", _xavier(rng, (h, C, Cs), C, Cs))
            self._add(f"{p}.mca.W_ex", _xavier(rng, (h, Cs, C), Cs, C))
            self._add(f"{p}.mca.W_out", _xavier(rng, (hd, d), hd, d))
            for name in ("W_q", "W_k", "W_v"):
                self._add(f"{p}.msa.{name}", _xavier(rng, (d, hd), d, dk))
            self._add(f"{p}.msa.W_out", _xavier(rng, (hd, d), hd, d))
            self._add(f"{p}.sff.W_1", _xavier(rng, (d, c.d_ff), d, c.d_ff))
            self._add(f"{p}.sff.b_1", np.zeros(c.d_ff))
            self._add(f"{p}.sff.W_2", _xavier(rng, (c.d_ff, d), c.d_ff, d))
            self._add(f"{p}.sff.b_2", np.zeros(d))
            for ln in ("ln_mca", "ln_msa", "ln_sff"):
                self._add(f"{p}.{ln}.gamma", np.ones(d))
                self._add(f"{p}.{ln}.beta", np.zeros(d))
        self._add("head.W", _xavier(rng, (d, c.n_ports), d, c.n_ports))

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    # -- representation layer ----------------------------------------------

    def gru_local(self, local: np.ndarray, mask: np.ndarray) -> Tensor:
        """Last hidden state of the stacked GRU for each padded subsequence.

        ``local`` is (E, T, f), ``mask`` (E, T) with ones on real rows; padded
        rows leave the state untouched, so all-padding rows give zeros.
        """
        local = np.asarray(local, dtype=float)
        E, T, _ = local.shape
        d = self.config.d_model
        P = self.params
        states = [Tensor(np.zeros((E, d))) for _ in range(self.config.n_gru_layers)]
        for t in range(T):
            inp: Tensor | np.ndarray = local[:, t, :]
            m = mask[:, t : t + 1]
            for l in range(self.config.n_gru_layers):
                h = states[l]
                u = F.sigmoid(F.linear(inp, P[f"gru.{l}.W_u"]) + F.linear(h, P[f"gru.{l}.U_u"]) + P[f"gru.{l}.b_u"])
                r = F.sigmoid(F.linear(inp, P[f"gru.{l}.W_r"]) + F.linear(h, P[f"gru.{l}.U_r"]) + P[f"gru.{l}.b_r"])
                cand = F.tanh(F.linear(inp, P[f"gru.{l}.W_h"]) + F.linear(r * h, P[f"gru.{l}.U_h"]) + P[f"gru.{l}.b_h"])
                h_new = (1.0 - u) * h + u * cand
                states[l] = h_new * m + h * (1.0 - m)
                inp = states[l]
        return states[-1]

    def assemble_channels(self, batch: Batch) -> Tensor:
        """(B, C, N, d) channel tensor."""
        c = self.config
        B, N = batch.deltas.shape
        d = c.d_model
        if batch.departure.size and (batch.departure.min() < 0 or batch.departure.max() >= c.n_ports):
            raise IndexError(f"departure port outside vocabulary of {c.n_ports} ports")
        if batch.ship.size and (batch.ship.min() < 0 or batch.ship.max() >= c.n_ship_types):
            raise IndexError(f"ship type outside vocabulary of {c.n_ship_types} types")
        te = time_encode(batch.deltas.reshape(-1), d).reshape(B, N, d)
        se = spatial_encode(batch.centers[..., 0].reshape(-1), batch.centers[..., 1].reshape(-1), d).reshape(B, N, d)
        local = self.gru_local(batch.local, batch.local_mask).reshape(B, N, d)
        dep = F.embedding(self.params["emb.port"], batch.departure).reshape(B, 1, d)
        ship = F.embedding(self.params["emb.ship"], batch.ship).reshape(B, 1, d)
        return F.stack([Tensor(se + te), local + te, dep + te, ship + te], axis=1)

    # -- CASP ----------------------------------------------------------------

    def _norm(self, x, block, name):
        p = f"block.{block}.{name}"
        return F.layer_norm(x) * self.params[f"{p}.gamma"] + self.params[f"{p}.beta"]

    def mca(self, x: Tensor, block: int, return_weights: bool = False):
        """Channel attention per step: (B, C, N, d) -> (B, N, d)."""
        c = self.config
        B, C, N, d = x.shape
        h, dk = c.n_heads, c.d_head
        P = self.params
        p = f"block.{block}.mca"
        heads = F.linear(F.transpose(x, (0, 2, 1, 3)), P[f"{p}.W_tr"])  # B N C hd
        heads = F.transpose(heads.reshape(B, N, C, h, dk), (0, 1, 3, 2, 4))  # B N h C dk
        excite = []
        for z in (F.mean(heads, axis=-1), F.max(heads, axis=-1)):  # B N h C
            z = F.matmul(z.reshape(B, N, h, 1, C), P[f"{p}.W_sq"])
            z = F.matmul(F.relu(z), P[f"{p}.W_ex"])
            excite.append(z.reshape(B, N, h, C))
        alpha = F.sigmoid(excite[0] + excite[1])
        emphasized = heads * alpha.reshape(B, N, h, C, 1)
        merged = F.transpose(emphasized, (0, 1, 3, 2, 4)).reshape(B, N, C, h * dk)
        out = F.linear(F.max(merged, axis=2), P[f"{p}.W_out"])
        return (out, alpha) if return_weights else out

    def msa(self, x: Tensor, block: int, return_weights: bool = False):
        """Causal multi-head self-attention over steps: (B, N, d) -> (B, N, d)."""
        c = self.config
        B, N, _ = x.shape
        h, dk = c.n_heads, c.d_head
        P = self.params
        p = f"block.{block}.msa"

        def split(t):
            return F.transpose(t.reshape(B, N, h, dk), (0, 2, 1, 3))

        q = split(F.linear(x, P[f"{p}.W_q"]))
        k = split(F.linear(x, P[f"{p}.W_k"]))
        v = split(F.linear(x, P[f"{p}.W_v"]))
        scores = F.attention_scores(q, k) * (1.0 / math.sqrt(dk))
        weights = F.softmax(F.causal_mask_fill(scores), axis=-1)
        mixed = F.transpose(F.attend(weights, v), (0, 2, 1, 3)).reshape(B, N, h * dk)
        out = F.linear(mixed, P[f"{p}.W_out"])
        return (out, weights) if return_weights else out

    def sff(self, x: Tensor, block: int, training=False, rng=None) -> Tensor:
        P = self.params
        p = f"block.{block}.sff"
        hidden = F.relu(F.linear(x, P[f"{p}.W_1"], P[f"{p}.b_1"]))
        hidden = F.dropout(hidden, self.config.dropout, rng, training)
        return F.linear(hidden, P[f"{p}.W_2"], P[f"{p}.b_2"])

    def casp_block(self, x: Tensor, block: int, training: bool = False, rng=None) -> Tensor:
        B, C, N, d = x.shape
        rate = self.config.dropout
        agg = F.dropout(self.mca(x, block), rate, rng, training)
        a = self._norm(x[:, 0] + agg, block, "ln_mca")
        att = F.dropout(self.msa(a, block), rate, rng, training)
        b = self._norm(a + att, block, "ln_msa")
        x = F.concat([b.reshape(B, 1, N, d), x[:, 1:]], axis=1)
        return self._norm(x + self.sff(x, block, training, rng), block, "ln_sff")

    def forward(self, batch: Batch, training: bool = False, rng=None) -> Tensor:
        """Per-step destination logits, shape (B, N, Y)."""
        x = self.assemble_channels(batch)
        for b in range(self.config.n_layers):
            x = self.casp_block(x, b, training, rng)
        return F.linear(x[:, 0], self.params["head.W"])
