"""Graph-attention actor-critic over the nurse + patient token sequence.

Tokens are ordered nurses first (slots ``0..max_nurses-1``) then patients.
The encoder block follows the propagation rule

    H' = LayerNorm(H + MHSA(H)) + FFN(H)

with the FFN applied to the block input outside the normalisation. Setting
``standard_block=True`` switches to the usual post-norm block
``LN2(H1 + FFN(H1))`` with ``H1 = LN1(H + MHSA(H))``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import numcore as nc
from .env import (
    D_EDGE,
    D_NURSE,
    D_PATIENT,
    NULL,
    Action,
    EnvState,
    FeatureEncoding,
    encode_features,
    enumerate_actions,
    index_to_action,
    action_to_index,
)
from .numcore import ParamStore, Tensor
from .rng import Rng


@dataclass(frozen=True)
class PolicyConfig:
    d_h: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_n: int = D_NURSE
    d_p: int = D_PATIENT
    d_e: int = D_EDGE
    max_nurses: int = 12
    max_patients: int = 8
    ffn_mult: int = 4
    standard_block: bool = False

    def __post_init__(self):
        if self.d_h % self.n_heads:
            raise ValueError(f"d_h={self.d_h} is not divisible by n_heads={self.n_heads}")
        if min(self.d_h, self.n_heads, self.n_layers, self.max_nurses, self.max_patients) < 1:
            raise ValueError("policy dimensions must be positive")

    @property
    def n_tokens(self) -> int:
        return self.max_nurses + self.max_patients

    @property
    def n_actions(self) -> int:
        return self.max_nurses * self.max_patients + 1

    def to_dict(self) -> dict:
        return asdict(self)


ACTOR_INIT_SCALE = 0.01


def init_params(config: PolicyConfig, rng: Rng) -> ParamStore:
    """Glorot-uniform linear maps (the actor output vector scaled by ``ACTOR_INIT_SCALE``),
    N(0, 0.02) positional table, unit LayerNorm gain."""
    d, f = config.d_h, config.d_h * config.ffn_mult
    store = ParamStore()

    def linear(name, n_in, n_out, bias=True):
        store.add(f"{name}.W", nc.glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        if bias:
            store.add(f"{name}.b", np.zeros(n_out))

    linear("enc.nurse", config.d_n, d)
    linear("enc.patient", config.d_p, d)
    store.add("enc.pos", nc.normal_init(rng, (config.n_tokens, d), 0.02))
    for l in range(config.n_layers):
        p = f"layer{l}"
        for w in ("q", "k", "v", "o"):
            linear(f"{p}.attn.{w}", d, d, bias=False)
        store.add(f"{p}.ln.gain", np.ones(d))
        store.add(f"{p}.ln.bias", np.zeros(d))
        linear(f"{p}.ffn1", d, f)
        linear(f"{p}.ffn2", f, d)
        if config.standard_block:
            store.add(f"{p}.ln2.gain", np.ones(d))
            store.add(f"{p}.ln2.bias", np.zeros(d))
    linear("actor.n", d, d, bias=False)
    linear("actor.p", d, d, bias=False)
    linear("actor.e", config.d_e, d, bias=False)
    # small output weights start the actor near uniform over the feasible actions
    store.add("actor.phi", ACTOR_INIT_SCALE * nc.glorot_uniform(rng, d, 1, (d,)))
    store.add("actor.null", np.zeros(()))
    linear("critic", d, d)
    store.add("critic.w", nc.glorot_uniform(rng, d, 1, (d,)))
    return store


@dataclass
class Batch:
    """Stacked feature encodings, leading axis = batch."""

    nurse_features: np.ndarray
    patient_features: np.ndarray
    edge_features: np.ndarray
    nurse_present: np.ndarray
    patient_present: np.ndarray
    action_mask: np.ndarray

    @classmethod
    def stack(cls, encodings: Sequence[FeatureEncoding]) -> "Batch":
        return cls(
            np.stack([e.nurse_features for e in encodings]),
            np.stack([e.patient_features for e in encodings]),
            np.stack([e.edge_features for e in encodings]),
            np.stack([e.nurse_present for e in encodings]),
            np.stack([e.patient_present for e in encodings]),
            np.stack([e.action_mask for e in encodings]),
        )

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, k)[idx] for k in self.__dataclass_fields__))

    @property
    def presence(self) -> np.ndarray:
        return np.concatenate([self.nurse_present, self.patient_present], axis=-1)

    def __len__(self) -> int:
        return self.nurse_features.shape[0]


def _as_batch(enc) -> Batch:
    if isinstance(enc, Batch):
        return enc
    return Batch.stack([enc])


def _check_dims(batch: Batch, config: PolicyConfig) -> None:
    want = {
        "nurse_features": (config.max_nurses, config.d_n),
        "patient_features": (config.max_patients, config.d_p),
        "edge_features": (config.max_nurses, config.max_patients, config.d_e),
    }
    for k, shape in want.items():
        got = getattr(batch, k).shape[1:]
        if got != shape:
            raise nc.ShapeError(f"{k} has shape {got}, policy expects {shape}")


def mhsa(h: Tensor, key_present: np.ndarray, store: ParamStore, prefix: str, config: PolicyConfig):
    B, T, d = h.shape
    nh, dk = config.n_heads, d // config.n_heads

    def heads(x):
        return x.reshape(B, T, nh, dk).transpose(0, 2, 1, 3)

    q = heads(h @ store[f"{prefix}.q.W"])
    k = heads(h @ store[f"{prefix}.k.W"])
    v = heads(h @ store[f"{prefix}.v.W"])
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    attn = nc.masked_softmax(scores, key_present[:, None, None, :])
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    return out @ store[f"{prefix}.o.W"], attn.data


def encode(enc, store: ParamStore, config: PolicyConfig, return_attention: bool = False):
    """Contextual embeddings ``(B, n_tokens, d_h)`` for a feature encoding or batch."""
    batch = _as_batch(enc)
    _check_dims(batch, config)
    hn = Tensor(batch.nurse_features) @ store["enc.nurse.W"] + store["enc.nurse.b"]
    hp = Tensor(batch.patient_features) @ store["enc.patient.W"] + store["enc.patient.b"]
    h = nc.concat([hn, hp], axis=1) + store["enc.pos"]
    present = batch.presence
    attentions = []
    for l in range(config.n_layers):
        p = f"layer{l}"
        a, weights = mhsa(h, present, store, f"{p}.attn", config)
        attentions.append(weights)
        normed = nc.layer_norm(h + a, store[f"{p}.ln.gain"], store[f"{p}.ln.bias"])
        ffn_in = normed if config.standard_block else h
        ffn = nc.relu(ffn_in @ store[f"{p}.ffn1.W"] + store[f"{p}.ffn1.b"]) @ store[f"{p}.ffn2.W"] + store[f"{p}.ffn2.b"]
        if config.standard_block:
            h = nc.layer_norm(normed + ffn, store[f"{p}.ln2.gain"], store[f"{p}.ln2.bias"])
        else:
            h = normed + ffn
    if return_attention:
        return h, attentions
    return h


def score_pairs(h: Tensor, edge_features: np.ndarray, store: ParamStore, config: PolicyConfig) -> Tensor:
    """Flat logits ``(B, N*P + 1)``: pair scores in row-major order, then the null logit."""
    N, P = config.max_nurses, config.max_patients
    B = h.shape[0]
    hn, hp = h[:, :N], h[:, N:]
    a = (hn @ store["actor.n.W"]).reshape(B, N, 1, config.d_h)
    b = (hp @ store["actor.p.W"]).reshape(B, 1, P, config.d_h)
    e = Tensor(np.asarray(edge_features).reshape(B, N, P, config.d_e)) @ store["actor.e.W"]
    z = nc.tanh(a + b + e) @ store["actor.phi"]
    null = nc.mul(np.ones((B, 1)), store["actor.null"])
    return nc.concat([z.reshape(B, N * P), null], axis=1)


def value(h: Tensor, presence: np.ndarray, store: ParamStore) -> Tensor:
    """Critic ``w . tanh(W mean_pool(h) + b)`` over present tokens, shape ``(B,)``."""
    pooled = nc.mean_pool(h, presence)
    return nc.tanh(pooled @ store["critic.W"] + store["critic.b"]) @ store["critic.w"]


def forward(enc, store: ParamStore, config: PolicyConfig) -> tuple[Tensor, Tensor]:
    batch = _as_batch(enc)
    h = encode(batch, store, config)
    return score_pairs(h, batch.edge_features, store, config), value(h, batch.presence, store)


def distribution(logits: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """``(probs, log_probs, entropy)`` of the masked categorical; entropy has shape ``(B,)``."""
    logp = nc.masked_log_softmax(logits, mask)
    probs = nc.masked_softmax(logits, mask)
    safe_logp = nc.where(mask, logp, 0.0)
    entropy = -(probs * safe_logp).sum(axis=-1)
    return probs, logp, entropy


@dataclass
class PolicyOutput:
    actions: list
    action_probs: np.ndarray
    log_probs: np.ndarray
    entropy: float
    value: float


def policy_output(state: EnvState, store: ParamStore, config: PolicyConfig) -> PolicyOutput:
    """Distribution over ``enumerate_actions(state)`` in that order."""
    enc = encode_features(state)
    with nc.no_grad():
        logits, v = forward(enc, store, config)
        probs, logp, ent = distribution(logits, enc.action_mask[None])
    actions = enumerate_actions(state)
    idx = [action_to_index(a, state.config) for a in actions]
    return PolicyOutput(actions, probs.data[0, idx], logp.data[0, idx], float(ent.data[0]), float(v.data[0]))


def sample_index(probs: np.ndarray, rng: Rng) -> int:
    """Inverse-CDF draw; zero-probability entries can never be returned."""
    u = rng.uniform()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return int(np.flatnonzero(probs > 0)[-1])


@dataclass
class ActResult:
    action: Action
    index: int
    log_prob: float
    value: float
    entropy: float
    encoding: FeatureEncoding


def act(state: EnvState, store: ParamStore, config: PolicyConfig, rng: Optional[Rng] = None, greedy: bool = False) -> ActResult:
    """Sample (or argmax when ``greedy``) an action from the masked policy."""
    enc = encode_features(state)
    with nc.no_grad():
        logits, v = forward(enc, store, config)
        probs, logp, ent = distribution(logits, enc.action_mask[None])
    p = probs.data[0]
    if greedy:
        i = int(np.argmax(p))
    else:
        if rng is None:
            raise ValueError("sampling needs an rng; pass greedy=True for argmax")
        i = sample_index(p, rng)
    return ActResult(index_to_action(i, state.config), i, float(logp.data[0, i]), float(v.data[0]), float(ent.data[0]), enc)
