"""Masked multimodal transformer actor-critic with low-rank adapters."""

from humimic.policy.checkpoint import load_policy, policy_from_checkpoint, policy_to_checkpoint, save_policy
from humimic.policy.embeddings import BasicEmbedding, GroupedEmbedding, GroupEmbedding, make_embedding
from humimic.policy.lora import LoraAdapter, adapter_parameters, attach_lora, base_checksum, lora_apply
from humimic.policy.spec import (
    EmbeddingMode,
    LoraConfig,
    ObservationGroup,
    ObservationSpec,
    ObservationTerm,
    PolicyConfig,
    TransformerConfig,
    default_groups,
    make_spec,
)
from humimic.policy.transformer import (
    MMTransformerPolicy,
    PolicyOutput,
    gaussian_entropy,
    gaussian_log_prob,
    gaussian_log_prob_np,
)

__all__ = [
    "BasicEmbedding",
    "EmbeddingMode",
    "GroupEmbedding",
    "GroupedEmbedding",
    "LoraAdapter",
    "LoraConfig",
    "MMTransformerPolicy",
    "ObservationGroup",
    "ObservationSpec",
    "ObservationTerm",
    "PolicyConfig",
    "PolicyOutput",
    "TransformerConfig",
    "adapter_parameters",
    "attach_lora",
    "base_checksum",
    "default_groups",
    "gaussian_entropy",
    "gaussian_log_prob",
    "gaussian_log_prob_np",
    "load_policy",
    "lora_apply",
    "make_embedding",
    "make_spec",
    "policy_from_checkpoint",
    "policy_to_checkpoint",
    "save_policy",
]
