"""Robot model parsing, forward kinematics and sagittal mirroring."""

from humimic.kinematics.fk import FkResult, forward_kinematics, keypoint_positions, reach
from humimic.kinematics.symmetry import MirrorKind, SignedPermutation, SymmetryMap, mirror, partner_name
from humimic.kinematics.tree import (
    Correspondence,
    Joint,
    KeypointMap,
    KeypointSpec,
    KinematicTree,
    Link,
    bundled_path,
    bundled_robot,
    clamp_to_limits,
    load_keypoint_map,
    load_robot,
    parse_robot_model,
)

__all__ = [
    "Correspondence",
    "FkResult",
    "Joint",
    "KeypointMap",
    "KeypointSpec",
    "KinematicTree",
    "Link",
    "MirrorKind",
    "SignedPermutation",
    "SymmetryMap",
    "bundled_path",
    "bundled_robot",
    "clamp_to_limits",
    "forward_kinematics",
    "keypoint_positions",
    "load_keypoint_map",
    "load_robot",
    "mirror",
    "parse_robot_model",
    "partner_name",
    "reach",
]
