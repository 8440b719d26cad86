"""Policy checkpoints on top of the shared HMCK container."""

from __future__ import annotations

import logging
from typing import Any, Dict, Optional

import numpy as np

from humimic.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from humimic.exceptions import CheckpointError
from humimic.policy.spec import LoraConfig, ObservationSpec, PolicyConfig
from humimic.policy.transformer import MMTransformerPolicy

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "policy"


def _is_adapter(name: str) -> bool:
    return ".adapter." in f".{name}"


def policy_to_checkpoint(policy: MMTransformerPolicy, meta: Optional[Dict[str, Any]] = None) -> Checkpoint:
    state = policy.state_dict()
    config = {
        "action_dim": policy.action_dim,
        "policy": policy.config.model_dump(mode="json"),
        "obs_spec": policy.obs_spec.model_dump(mode="json"),
        "ref_spec": policy.ref_spec.model_dump(mode="json") if policy.ref_spec is not None else None,
        "lora": policy.lora.model_dump(mode="json") if policy.lora is not None else None,
    }
    return Checkpoint(
        kind=CHECKPOINT_KIND,
        config=config,
        parameters={k: v for k, v in state.items() if not _is_adapter(k)},
        adapters={k: v for k, v in state.items() if _is_adapter(k)},
        meta=meta or {},
    )


def save_policy(path, policy: MMTransformerPolicy, meta: Optional[Dict[str, Any]] = None):
    return save_checkpoint(path, policy_to_checkpoint(policy, meta))


def policy_from_checkpoint(ckpt: Checkpoint, with_adapters: bool = True) -> MMTransformerPolicy:
    config = ckpt.config
    try:
        policy = MMTransformerPolicy(
            ObservationSpec.model_validate(config["obs_spec"]),
            int(config["action_dim"]),
            PolicyConfig.model_validate(config["policy"]),
            ObservationSpec.model_validate(config["ref_spec"]) if config.get("ref_spec") else None,
        )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"policy config in checkpoint is invalid: {e}") from e
    state: Dict[str, np.ndarray] = dict(ckpt.parameters)
    if with_adapters and config.get("lora") and ckpt.adapters:
        policy.attach_adapters(LoraConfig.model_validate(config["lora"]), np.random.default_rng(0))
        state.update(ckpt.adapters)
    policy.load_state_dict(state)
    return policy


def load_policy(path, with_adapters: bool = True) -> MMTransformerPolicy:
    return policy_from_checkpoint(load_checkpoint(path, kind=CHECKPOINT_KIND), with_adapters)
