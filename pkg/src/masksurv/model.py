"""Transformer encoder over feature tokens with missing-feature masking.

Each patient row of ``d`` encoded columns becomes ``d`` tokens: token ``j`` is
the one-hot position ``e_j`` concatenated with the column value, giving a
``d x (d+1)`` matrix. Unavailable tokens are masked as attention keys and
left out of the pooled mean, so whatever value they hold never reaches the
output.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as tc
from .errors import ContractError, EmptyPoolError
from .tensor import Tensor

CHECKPOINT_FORMAT = "masksurv-checkpoint/1"


@dataclass(frozen=True)
class SurvivalModelConfig:
    n_layers: int = 12
    n_heads: int = 17
    model_dim: int = 272
    ffn_hidden: int = 3072
    T: int = 6
    d: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ContractError("model_dim must be divisible by n_heads")
        if self.T < 2 or self.n_layers < 1 or self.d < 1:
            raise ContractError("need T >= 2, n_layers >= 1 and d >= 1")

    @property
    def head_dim(self):
        return self.model_dim // self.n_heads


PROFILES = {
    "paper": dict(n_layers=12, n_heads=17, model_dim=272, ffn_hidden=3072),
    "toy": dict(n_layers=2, n_heads=4, model_dim=32, ffn_hidden=64),
}


def profile_config(profile: str, T: int, d: int, seed: int = 0, **overrides) -> SurvivalModelConfig:
    try:
        base = dict(PROFILES[profile])
    except KeyError:
        raise ContractError(f"unknown profile {profile!r}") from None
    base.update(overrides)
    return SurvivalModelConfig(T=T, d=d, seed=seed, **base)


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def embed_tokens(values, availability):
    """Token matrices and masks for a batch of rows.

    values, availability: (B, d) or (d,). Returns tokens (B, d, d+1) and the
    boolean mask (B, d). Unavailable entries get a zero value.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    mask = np.atleast_2d(np.asarray(availability, dtype=bool))
    if values.shape != mask.shape:
        raise ContractError(f"values {values.shape} and availability {mask.shape} differ")
    B, d = values.shape
    tokens = np.zeros((B, d, d + 1))
    tokens[:, np.arange(d), np.arange(d)] = 1.0
    tokens[:, :, d] = np.where(mask, values, 0.0)
    return tokens, mask


class MaskedSurvivalTransformer:
    """Pre-norm encoder stack, masked mean pooling and a softmax hazard head."""

    def __init__(self, config: SurvivalModelConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        c = self.config
        rng = np.random.default_rng(c.seed)
        D, F = c.model_dim, c.ffn_hidden
        p = {}

        def w(name, fan_in, fan_out):
            p[name] = Tensor(xavier_uniform(rng, fan_in, fan_out), requires_grad=True, name=name)

        def zeros(name, n):
            p[name] = Tensor(np.zeros(n), requires_grad=True, name=name)

        def ones(name, n):
            p[name] = Tensor(np.ones(n), requires_grad=True, name=name)

        w("embed.w", c.d + 1, D)
        zeros("embed.b", D)
        for i in range(c.n_layers):
            pre = f"layer{i}."
            ones(pre + "ln1.g", D)
            zeros(pre + "ln1.b", D)
            w(pre + "attn.qkv.w", D, 3 * D)
            zeros(pre + "attn.q.b", D)
            zeros(pre + "attn.v.b", D)
            w(pre + "attn.out.w", D, D)
            zeros(pre + "attn.out.b", D)
            ones(pre + "ln2.g", D)
            zeros(pre + "ln2.b", D)
            w(pre + "ffn.w1", D, F)
            zeros(pre + "ffn.b1", F)
            w(pre + "ffn.w2", F, D)
            zeros(pre + "ffn.b2", D)
        ones("final_ln.g", D)
        zeros("final_ln.b", D)
        w("head.w", D, c.T)
        zeros("head.b", c.T)
        return p

    def n_parameters(self):
        return int(sum(t.data.size for t in self.params.values()))

    def _attention(self, h, key_mask, pre):
        c, p = self.config, self.params
        B, n, D = h.shape
        H, dk = c.n_heads, c.head_dim
        # no key bias: it shifts every score in a row equally and cancels in the softmax
        bias = tc.concat([p[pre + "attn.q.b"], Tensor(np.zeros(D)), p[pre + "attn.v.b"]])
        qkv = tc.add(tc.matmul(h, p[pre + "attn.qkv.w"]), bias)
        qkv = tc.transpose(tc.reshape(qkv, (B, n, 3, H, dk)), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = tc.scale(tc.matmul(q, tc.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
        att = tc.softmax_with_mask(scores, key_mask[:, None, None, :])
        out = tc.reshape(tc.transpose(tc.matmul(att, v), (0, 2, 1, 3)), (B, n, D))
        return tc.add(tc.matmul(out, p[pre + "attn.out.w"]), p[pre + "attn.out.b"])

    def _ffn(self, h, pre):
        p = self.params
        hidden = tc.relu(tc.add(tc.matmul(h, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]))
        return tc.add(tc.matmul(hidden, p[pre + "ffn.w2"]), p[pre + "ffn.b2"])

    def logits(self, values, availability) -> Tensor:
        return self.logits_from_tokens(*embed_tokens(values, availability))

    def logits_from_tokens(self, tokens, mask) -> Tensor:
        """Head logits from raw token matrices (B, d, d+1) and key masks (B, d)."""
        c, p = self.config, self.params
        tokens = np.asarray(tokens, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if tokens.ndim != 3 or tokens.shape[1] != c.d or tokens.shape[2] != c.d + 1:
            raise ContractError(f"model expects tokens of shape (B, {c.d}, {c.d + 1}), got {tokens.shape}")
        if not mask.any(axis=1).all():
            raise EmptyPoolError("a sample has no available feature")
        x = tc.add(tc.matmul(Tensor(tokens), p["embed.w"]), p["embed.b"])
        for i in range(c.n_layers):
            pre = f"layer{i}."
            h = tc.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            x = tc.add(x, self._attention(h, mask, pre))
            h = tc.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            x = tc.add(x, self._ffn(h, pre))
        x = tc.layer_norm(x, p["final_ln.g"], p["final_ln.b"])
        pooled = tc.mean_over_masked_rows(x, mask)
        return tc.add(tc.matmul(pooled, p["head.w"]), p["head.b"])

    def forward(self, values, availability) -> Tensor:
        """Hazard vectors y (B, T) for a batch; each row sums to one."""
        return tc.softmax(self.logits(values, availability))

    def predict(self, values, availability, batch_size: int = 512) -> np.ndarray:
        values = np.atleast_2d(values)
        availability = np.atleast_2d(availability)
        frozen = self.frozen()
        out = [
            frozen.forward(values[i:i + batch_size], availability[i:i + batch_size]).data
            for i in range(0, len(values), batch_size)
        ]
        return np.concatenate(out, axis=0)

    def predict_cif(self, values, availability) -> np.ndarray:
        return cumulative_incidence(self.predict(values, availability))

    def frozen(self) -> "MaskedSurvivalTransformer":
        """Copy whose parameters do not record a graph (for inference)."""
        return MaskedSurvivalTransformer(
            self.config, {k: Tensor(v.data, name=k) for k, v in self.params.items()}
        )

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)


def cumulative_incidence(y) -> np.ndarray:
    """Prefix sums of hazard vectors along the last axis."""
    return np.cumsum(np.asarray(y, dtype=np.float64), axis=-1)


predict_cif = cumulative_incidence


def save_checkpoint(path, model, extra: dict | None = None):
    """Config plus named float64 parameters in an ``.npz`` archive."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "kind": type(model).__name__,
        "config": asdict(model.config),
        "extra": extra or {},
    }
    arrays = {f"param:{k}": v.data for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (model, extra)."""
    from .baselines import MlpConfig, MlpHazardModel

    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"unsupported checkpoint format {meta.get('format')!r}")
        params = {
            k[len("param:"):]: Tensor(np.array(z[k]), requires_grad=True, name=k[len("param:"):])
            for k in z.files if k.startswith("param:")
        }
    kind = meta["kind"]
    if kind == "MaskedSurvivalTransformer":
        model = MaskedSurvivalTransformer(SurvivalModelConfig(**meta["config"]), params)
    elif kind == "MlpHazardModel":
        cfg = meta["config"]
        cfg["hidden"] = tuple(cfg["hidden"])
        model = MlpHazardModel(MlpConfig(**cfg), params)
    else:
        raise ContractError(f"unknown model kind {kind!r}")
    return model, meta["extra"]


def with_config(config: SurvivalModelConfig, **changes) -> SurvivalModelConfig:
    return replace(config, **changes)
