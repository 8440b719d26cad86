"""
Masked multimodal transformer actor-critic.

Input sequence: ``[cls] + observation tokens + [sep] + reference tokens``.
Reference tokens of environments whose availability mask is 0 are hidden
through the attention key-padding mask, and their inputs are zeroed before
embedding, so those rows never depend on reference content. When no row in
the batch has a reference the reference tokens are left out entirely.
The actor and critic are separate heads on the final ``[cls]`` vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.numerics import ops
from humimic.numerics.nn import Linear, Module, Parameter, RMSNorm, TransformerEncoder
from humimic.numerics.tape import DiffArray, as_diff
from humimic.policy.embeddings import make_embedding
from humimic.policy.lora import attach_lora
from humimic.policy.spec import LoraConfig, ObservationSpec, PolicyConfig

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PolicyOutput:
    mean: DiffArray
    log_std: DiffArray
    value: DiffArray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std.value)


class MMTransformerPolicy(Module):
    def __init__(
        self,
        obs_spec: ObservationSpec,
        action_dim: int,
        config: Optional[PolicyConfig] = None,
        ref_spec: Optional[ObservationSpec] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.config = config or PolicyConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        d = self.config.transformer.d_model
        self.obs_spec = obs_spec
        self.ref_spec = ref_spec
        self.action_dim = action_dim
        hidden = self.config.glu_hidden or 0
        self.obs_embed = make_embedding(obs_spec, d, rng, hidden)
        # no reference parameters at all for reference-free policies
        self.ref_embed = make_embedding(ref_spec, d, rng, hidden) if ref_spec is not None else None
        self.cls = Parameter(rng.normal(0.0, 0.02, (d,)), "cls")
        self.sep = Parameter(rng.normal(0.0, 0.02, (d,)), "sep")
        self.input_norm = RMSNorm(d)
        self.encoder = TransformerEncoder(d, self.config.transformer.layers, self.config.transformer.heads, rng)
        self.actor = Linear(d, action_dim, rng, scale=0.01)
        self.critic = Linear(d, 1, rng)
        self.log_std = Parameter(np.full(action_dim, self.config.init_log_std), "log_std")
        self.lora: Optional[LoraConfig] = None

    # -- encoding ---------------------------------------------------------
    def _special(self, param: Parameter, batch: int) -> DiffArray:
        d = param.shape[0]
        return ops.broadcast_to(ops.reshape(param.data(), (1, 1, d)), (batch, 1, d))

    def encode(self, obs, ref=None, mask=None) -> DiffArray:
        """Final ``[cls]`` representation, (B, d_model)."""
        obs = as_diff(obs)
        if obs.ndim == 1:
            obs = ops.reshape(obs, (1, -1))
        B = obs.shape[0]
        pieces = [self._special(self.cls, B), self.obs_embed(obs), self._special(self.sep, B)]
        key_padding = None

        mask = np.zeros(B, dtype=bool) if mask is None else np.asarray(mask).reshape(B).astype(bool)
        if ref is not None and self.ref_embed is None and mask.any():
            raise ContractViolation("policy was built without a reference stream")
        if self.ref_embed is not None and ref is not None and mask.any():
            ref_value = ref.value if isinstance(ref, DiffArray) else np.asarray(ref, dtype=np.float64)
            ref_value = ref_value.reshape(B, -1)
            # rows without a reference must not see its content, not even NaNs
            ref_value = np.where(mask[:, None], ref_value, 0.0)
            ref_tokens = self.ref_embed(ref_value)
            pieces.append(ref_tokens)
            n_ref = ref_tokens.shape[1]
            key_padding = np.zeros((B, 1 + pieces[1].shape[1] + 1 + n_ref), dtype=bool)
            key_padding[:, -n_ref:] = ~mask[:, None]
        tokens = self.input_norm(ops.concatenate(pieces, axis=1))
        hidden = self.encoder(tokens, key_padding)
        return hidden[:, 0, :]

    def forward(self, obs, ref=None, mask=None) -> PolicyOutput:
        cls = self.encode(obs, ref, mask)
        return PolicyOutput(mean=self.actor(cls), log_std=self.log_std.data(), value=self.critic(cls))

    def actor_forward(self, obs, ref=None, mask=None) -> DiffArray:
        return self.actor(self.encode(obs, ref, mask))

    def critic_forward(self, obs, ref=None, mask=None) -> DiffArray:
        return self.critic(self.encode(obs, ref, mask))

    # -- sampling -----------------------------------------------------------
    def act(self, obs, ref=None, mask=None, rng: Optional[np.random.Generator] = None,
            deterministic: bool = False):
        """Actions, log-probabilities and values as plain arrays."""
        out = self.forward(obs, ref, mask)
        mean = out.mean.value
        std = np.exp(out.log_std.value)
        if deterministic or rng is None:
            actions = mean.copy()
        else:
            actions = mean + std * rng.standard_normal(mean.shape)
        return actions, gaussian_log_prob_np(actions, mean, out.log_std.value), out.value.value[:, 0]

    # -- adapters -------------------------------------------------------------
    def attach_adapters(self, config: LoraConfig, rng: np.random.Generator) -> None:
        """Freeze everything, add adapters on the encoder's attention and FFN
        projections and optionally keep the actor head trainable."""
        self.freeze()
        attach_lora(self.encoder, config.rank, config.alpha, rng)
        if config.train_heads:
            for p in self.actor.parameters():
                p.trainable = True
        self.lora = config


def gaussian_log_prob(actions, mean, log_std) -> DiffArray:
    """Sum over action dims of the diagonal Gaussian log-density."""
    mean = as_diff(mean)
    log_std = as_diff(log_std)
    z = (actions - mean) / ops.exp(log_std)
    per_dim = -0.5 * ops.square(z) - log_std - 0.5 * LOG_2PI
    return ops.sum(per_dim, axis=-1)


def gaussian_log_prob_np(actions, mean, log_std) -> np.ndarray:
    z = (np.asarray(actions) - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> DiffArray:
    return ops.sum(as_diff(log_std) + 0.5 * (1.0 + LOG_2PI))
