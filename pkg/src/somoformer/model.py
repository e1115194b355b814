"""Joint-token transformer encoder for multi-person pose forecasting.

Every (person slot, joint, axis) becomes one token holding the DCT of its
constant-padded local trajectory. Tokens get a joint/axis embedding and a
person-slot embedding added, then the slot's grid-cell embedding
concatenated. A pre-norm encoder refines them, and after every layer a
shared zero-initialized head reads out a DCT residual that is added to the
input coefficients.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .dct import get_basis
from .scene import TrajectoryWindow, fit_slots, pad_future, remove_translation
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 6
    n_heads: int = 8
    d_token: int = 112
    e_grid: int = 16
    d_ff: int = 256
    grid_size: int = 5
    t: int = 15
    T: int = 45
    n_joints: int = 13
    n_slots: int = 3
    root_joint: int = 0
    layer_weights: tuple[float, ...] = ()
    dropout: float = 0.0
    ln_eps: float = 1e-5
    dct_keep: int | None = None
    grid_margin: float = 0.05

    def __post_init__(self):
        if not self.layer_weights:
            w = (0.2,) * (self.n_layers - 1) + (1.0,)
            object.__setattr__(self, "layer_weights", w)
        object.__setattr__(self, "layer_weights", tuple(float(x) for x in self.layer_weights))
        dims = dict(n_layers=self.n_layers, n_heads=self.n_heads, d_token=self.d_token, e_grid=self.e_grid,
                    d_ff=self.d_ff, grid_size=self.grid_size, t=self.t, n_joints=self.n_joints,
                    n_slots=self.n_slots)
        bad = [k for k, v in dims.items() if v < 1]
        if bad or self.T < 1:
            raise ValueError(f"model dimensions must be positive: {bad or ['T']}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if len(self.layer_weights) != self.n_layers:
            raise ValueError(f"{len(self.layer_weights)} layer weights for {self.n_layers} layers")
        if any(w < 0 for w in self.layer_weights):
            raise ValueError("layer weights must be non-negative")
        if not 0 <= self.root_joint < self.n_joints:
            raise ValueError(f"root_joint {self.root_joint} out of range")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def d_model(self) -> int:
        return self.d_token + self.e_grid

    @property
    def length(self) -> int:
        return self.t + self.T

    @property
    def n_queries(self) -> int:
        return self.n_slots * self.n_joints * 3

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layer_weights"] = list(self.layer_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "layer_weights" in d:
            d["layer_weights"] = tuple(d["layer_weights"])
        return cls(**d)


PRESETS = {
    "tiny": dict(n_layers=2, n_heads=2, d_token=24, e_grid=8, d_ff=32, t=4, T=4, n_joints=3, n_slots=2),
    "small": dict(n_layers=6, n_heads=8, d_token=112, e_grid=16, d_ff=256, t=15, T=45, n_joints=13, n_slots=3),
    "somof": dict(n_layers=6, n_heads=8, d_token=112, e_grid=16, d_ff=256, t=16, T=14, n_joints=13, n_slots=2),
    "full": dict(n_layers=6, n_heads=8, d_token=896, e_grid=128, d_ff=2048, t=15, T=45, n_joints=13, n_slots=3),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


# ---------------------------------------------------------------- parameters

def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    n, dt, dm, ff = cfg.length, cfg.d_token, cfg.d_model, cfg.d_ff

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

    def emb(rows, width):
        return rng.normal(0.0, 0.1, size=(rows, width))

    p = {
        "input_proj.weight": dense(n, dt),
        "input_proj.bias": np.zeros(dt),
        "joint_embed": emb(cfg.n_joints * 3, dt),
        "identity_embed": emb(cfg.n_slots, dt),
        "grid_embed": emb(cfg.grid_size ** 2, cfg.e_grid),
    }
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        p[pre + "ln1.gain"] = np.ones(dm)
        p[pre + "ln1.bias"] = np.zeros(dm)
        for w in ("q", "k", "v", "o"):
            p[pre + f"attn.w{w}"] = dense(dm, dm)
        # no key bias: it shifts each query's scores by a constant, which softmax ignores
        for w in ("q", "v", "o"):
            p[pre + f"attn.b{w}"] = np.zeros(dm)
        p[pre + "ln2.gain"] = np.ones(dm)
        p[pre + "ln2.bias"] = np.zeros(dm)
        p[pre + "ff.w1"] = dense(dm, ff)
        p[pre + "ff.b1"] = np.zeros(ff)
        p[pre + "ff.w2"] = dense(ff, dm)
        p[pre + "ff.b2"] = np.zeros(dm)
    p["head.ln.gain"] = np.ones(dm)
    p["head.ln.bias"] = np.zeros(dm)
    # zero head: an untrained model reproduces the constant-pad input exactly
    p["head.weight"] = np.zeros((dm, n))
    p["head.bias"] = np.zeros(n)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


# ---------------------------------------------------------------- token layout

def token_meta(n_slots: int, n_joints: int) -> dict[str, np.ndarray]:
    """Slot, joint and axis of every query, in ``(slot, joint, axis)`` row-major order."""
    q = np.arange(n_slots * n_joints * 3)
    return {"slot": q // (n_joints * 3), "joint": (q // 3) % n_joints, "axis": q % 3}


def tokenize(window: TrajectoryWindow, basis=None, T: int | None = None, dct_keep: int | None = None) -> np.ndarray:
    """DCT tokens ``[N*J*3, t+T]`` of a translation-removed window.

    Each coordinate trajectory is constant-padded to ``t+T`` frames before
    the transform. Padded slots give zero tokens.
    """
    T = window.T if T is None else T
    n = window.t + T
    basis = basis or get_basis(n)
    if basis.length != n:
        raise ValueError(f"basis length {basis.length} does not match t+T={n}")
    hist = np.where(window.mask[:, None, None, None], window.history, 0.0)
    tokens = basis.forward(pad_future(hist, T))
    if dct_keep is not None:
        tokens[..., dct_keep:] = 0.0
    return tokens.reshape(-1, n)


def assign_grid_cells(window: TrajectoryWindow, root_joint: int, grid_size: int,
                      margin: float = 0.05) -> np.ndarray:
    """Grid cell index per slot from root positions at the last history frame.

    The grid covers the bounding square of the real persons' roots on the
    ground plane (x, z), widened by ``margin``. Cell index is
    ``ix * grid_size + iz``. Masked slots get cell 0.
    """
    G = grid_size
    real = np.flatnonzero(window.mask)
    if len(real) == 0:
        raise ValueError("grid assignment needs at least one real person")
    ground = window.history[real, root_joint, :, -1][:, [0, 2]]
    lo, hi = ground.min(axis=0), ground.max(axis=0)
    center = (lo + hi) / 2.0
    half = (hi - lo).max() / 2.0 * (1.0 + margin)
    cells = np.zeros(window.n_slots, dtype=np.int64)
    if half == 0.0:
        cells[real] = (G // 2) * G + G // 2
        return cells
    origin = center - half
    idx = np.floor((ground - origin) / (2.0 * half) * G).astype(np.int64)
    idx = np.clip(idx, 0, G - 1)
    cells[real] = idx[:, 0] * G + idx[:, 1]
    return cells


# ---------------------------------------------------------------- forward pieces

@dataclass
class Prepared:
    """Model inputs for a batch of windows, all numpy."""

    tokens: np.ndarray        # [B, Q, n]
    token_mask: np.ndarray    # [B, Q]
    slot_mask: np.ndarray     # [B, N]
    cells: np.ndarray         # [B, N]
    offsets: np.ndarray       # [B, N, 3]
    target: np.ndarray | None  # local future ground truth [B, N, J, 3, T]

    @property
    def batch_size(self) -> int:
        return self.tokens.shape[0]


@dataclass
class AttentionRecord:
    """Attention probabilities of one window: ``weights[layer]`` is ``[H, Q, Q]``."""

    weights: list[np.ndarray]
    token_mask: np.ndarray
    meta: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ForwardResult:
    prediction: np.ndarray      # final layer, global [N, J, 3, T] (or [B, ...] for batches)
    per_layer: np.ndarray       # [L, ...]
    attention: list            # AttentionRecord per window


def embed_tokens(tokens, meta: dict[str, np.ndarray], cells: np.ndarray, params: dict[str, Tensor],
                 cfg: ModelConfig) -> Tensor:
    """``[B, Q, d_model]``: projected token + joint/axis + identity embeddings, grid embedding concatenated.

    ``cells`` is ``[B, N]``; meta arrays are ``[Q]``.
    """
    tokens = tn.as_tensor(tokens)
    B, Q = tokens.shape[0], tokens.shape[1]
    if Q != len(meta["slot"]):
        raise ValueError(f"{Q} tokens but metadata describes {len(meta['slot'])}")
    joint_type = np.broadcast_to(meta["joint"] * 3 + meta["axis"], (B, Q))
    slot = np.broadcast_to(meta["slot"], (B, Q))
    token_cells = np.take_along_axis(np.asarray(cells), slot, axis=1)
    x = tn.linear(tokens, params["input_proj.weight"], params["input_proj.bias"])
    x = tn.add(x, tn.take_rows(params["joint_embed"], joint_type))
    x = tn.add(x, tn.take_rows(params["identity_embed"], slot))
    return tn.concat_last(x, tn.take_rows(params["grid_embed"], token_cells))


def _attention(x: Tensor, mask: np.ndarray, params, pre: str, cfg: ModelConfig):
    B, Q, d = x.shape
    H = cfg.n_heads
    dh = d // H

    def heads(name):
        y = tn.linear(x, params[pre + f"attn.w{name}"], params.get(pre + f"attn.b{name}"))
        return tn.reshape(y, (B, Q, H, dh))

    q = tn.transpose(heads("q"), (0, 2, 1, 3))
    kt = tn.transpose(heads("k"), (0, 2, 3, 1))
    v = tn.transpose(heads("v"), (0, 2, 1, 3))
    p = tn.masked_softmax(tn.scale(tn.matmul(q, kt), 1.0 / np.sqrt(dh)), mask)
    a = tn.reshape(tn.transpose(tn.matmul(p, v), (0, 2, 1, 3)), (B, Q, d))
    return tn.linear(a, params[pre + "attn.wo"], params[pre + "attn.bo"]), p.data


def encoder_forward(x: Tensor, token_mask: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig,
                    rng: np.random.Generator | None = None):
    """Run the encoder stack.

    Returns ``(residuals, attention)``: one ``[B, Q, t+T]`` residual tensor and
    one ``[B, H, Q, Q]`` probability array per layer.
    """
    token_mask = np.asarray(token_mask, dtype=bool)
    if not token_mask.any(axis=-1).all():
        raise ValueError("every window needs at least one unmasked person slot")
    residuals, attention = [], []
    eps = cfg.ln_eps
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        h = tn.layer_norm(x, params[pre + "ln1.gain"], params[pre + "ln1.bias"], eps)
        a, probs = _attention(h, token_mask, params, pre, cfg)
        attention.append(probs)
        x = tn.add(x, tn.dropout(a, cfg.dropout, rng))
        h = tn.layer_norm(x, params[pre + "ln2.gain"], params[pre + "ln2.bias"], eps)
        f = tn.linear(tn.gelu(tn.linear(h, params[pre + "ff.w1"], params[pre + "ff.b1"])),
                      params[pre + "ff.w2"], params[pre + "ff.b2"])
        x = tn.add(x, tn.dropout(f, cfg.dropout, rng))
        h = tn.layer_norm(x, params["head.ln.gain"], params["head.ln.bias"], eps)
        residuals.append(tn.linear(h, params["head.weight"], params["head.bias"]))
    return residuals, attention


def decode_prediction(tokens: np.ndarray, residual: np.ndarray, t: int, root_offsets: np.ndarray,
                      basis=None) -> np.ndarray:
    """Global future ``[N, J, 3, T]`` from tokens ``[N*J*3, n]`` plus a DCT residual."""
    tokens = np.asarray(tokens)
    n = tokens.shape[-1]
    basis = basis or get_basis(n)
    traj = basis.inverse(tokens + np.asarray(residual))[..., t:]
    offsets = np.asarray(root_offsets, dtype=np.float64)
    N = offsets.shape[0]
    traj = traj.reshape(N, -1, 3, n - t)
    return traj + offsets[:, None, :, None]


class SoMoFormer:
    """Configuration plus named parameters, with batch and single-window entry points."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.meta = token_meta(config.n_slots, config.n_joints)
        self.basis = get_basis(config.length)
        # frames t+1..t+T of the inverse transform, as a [n, T] matrix
        self.future_basis = np.ascontiguousarray(self.basis.matrix[:, config.t:])

    # -- preparation
    def prepare(self, windows) -> Prepared:
        cfg = self.config
        toks, cells, offsets, masks, targets = [], [], [], [], []
        for w in windows:
            if w.t != cfg.t:
                raise ValueError(f"window has t={w.t}, model expects t={cfg.t}")
            if w.n_joints != cfg.n_joints:
                raise ValueError(f"window has J={w.n_joints}, model expects J={cfg.n_joints}")
            if w.future is not None and w.T != cfg.T:
                raise ValueError(f"window has T={w.T}, model expects T={cfg.T}")
            w = fit_slots(w, cfg.n_slots)
            cells.append(assign_grid_cells(w, cfg.root_joint, cfg.grid_size, cfg.grid_margin))
            local, off = remove_translation(w, cfg.root_joint)
            toks.append(tokenize(local, self.basis, cfg.T, cfg.dct_keep))
            offsets.append(off)
            masks.append(w.mask)
            targets.append(local.future)
        slot_mask = np.stack(masks)
        target = None
        if all(t is not None for t in targets):
            target = np.stack([np.where(m[:, None, None, None], t, 0.0) for m, t in zip(masks, targets)])
        token_mask = np.repeat(slot_mask, cfg.n_joints * 3, axis=1)
        return Prepared(np.stack(toks), token_mask, slot_mask, np.stack(cells), np.stack(offsets), target)

    # -- forward
    def run(self, prep: Prepared, rng: np.random.Generator | None = None):
        x = embed_tokens(prep.tokens, self.meta, prep.cells, self.params, self.config)
        return encoder_forward(x, prep.token_mask, self.params, self.config, rng)

    def local_future(self, prep: Prepared, residual: Tensor) -> Tensor:
        """Differentiable local-coordinate future ``[B, N, J, 3, T]`` for one layer's residual."""
        cfg = self.config
        hold = prep.tokens @ self.future_basis
        pred = tn.add(tn.matmul(residual, self.future_basis), hold)
        return tn.reshape(pred, (prep.batch_size, cfg.n_slots, cfg.n_joints, 3, cfg.T))

    def decode(self, prep: Prepared, residual: np.ndarray) -> np.ndarray:
        """Global future ``[B, N, J, 3, T]``."""
        cfg = self.config
        out = (prep.tokens + residual) @ self.future_basis
        out = out.reshape(prep.batch_size, cfg.n_slots, cfg.n_joints, 3, cfg.T)
        return out + prep.offsets[:, :, None, :, None]

    def forward_batch(self, windows) -> ForwardResult:
        prep = self.prepare(windows)
        residuals, attention = self.run(prep)
        per_layer = np.stack([self.decode(prep, r.data) for r in residuals])
        records = [AttentionRecord([a[b] for a in attention], prep.token_mask[b], self.meta)
                   for b in range(prep.batch_size)]
        return ForwardResult(per_layer[-1], per_layer, records)

    def forward(self, window: TrajectoryWindow) -> ForwardResult:
        res = self.forward_batch([window])
        return ForwardResult(res.prediction[0], res.per_layer[:, 0], res.attention)

    def predict(self, windows, batch_size: int = 64) -> np.ndarray:
        """Final-layer global futures ``[B, N_slots, J, 3, T]``."""
        windows = list(windows)
        outs = []
        for i in range(0, len(windows), batch_size):
            prep = self.prepare(windows[i:i + batch_size])
            residuals, _ = self.run(prep)
            outs.append(self.decode(prep, residuals[-1].data))
        return np.concatenate(outs)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def forward(window: TrajectoryWindow, params: dict[str, Tensor], config: ModelConfig) -> ForwardResult:
    return SoMoFormer(config, params).forward(window)
