"""
Robot model parsing.

Robot descriptions use the URDF link/joint schema (``<robot>`` containing
``<link>`` and ``<joint>`` elements with ``<parent>``, ``<child>``,
``<origin xyz rpy>``, ``<axis xyz>`` and ``<limit lower upper>``). Only
``revolute`` and ``fixed`` joints are accepted.

The logical keypoint map is a separate JSON document::

    {
      "keypoints": {"left_knee": {"link": "left_shin", "weight": 1.0}, ...},
      "feet": ["left_sole", "right_sole"],
      "correspondence": [
        {"robot_joint": "left_knee", "human_joint": "left_knee",
         "axis": 1, "sign": 1.0, "single_dof": true}, ...
      ],
      "t_pose": {"human": {"left_shoulder": [1.57, 0, 0]}, "robot": {...}}
    }
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field, ValidationError

from humimic.exceptions import (
    ConfigError,
    CyclicTreeError,
    MalformedDocumentError,
    MissingLimitError,
    MissingLinkError,
    UnsupportedJointError,
)
from humimic.numerics.linalg import rpy_matrix

logger = logging.getLogger(__name__)

SUPPORTED_JOINTS = ("revolute", "fixed")


@dataclass(frozen=True)
class Link:
    name: str
    mass: float = 0.0


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str
    parent: str
    child: str
    xyz: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rpy: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    lower: float = 0.0
    upper: float = 0.0
    effort: float = 0.0

    @property
    def actuated(self) -> bool:
        return self.kind == "revolute"

    @property
    def origin_rotation(self) -> np.ndarray:
        return rpy_matrix(self.rpy)


@dataclass(frozen=True)
class KeypointSpec:
    name: str
    link: str
    weight: float = 1.0


@dataclass(frozen=True)
class Correspondence:
    """Robot joint driven by one angle-axis component of a human joint."""

    robot_joint: str
    human_joint: str
    axis: int
    sign: float = 1.0
    single_dof: bool = False


# --- keypoint map file -------------------------------------------------------


class _KeypointEntry(BaseModel):
    link: str
    weight: float = Field(1.0, ge=0.0, description="Residual weight of this keypoint")


class _CorrespondenceEntry(BaseModel):
    robot_joint: str
    human_joint: str
    axis: int = Field(..., ge=0, le=2)
    sign: float = 1.0
    single_dof: bool = False


class _PoseEntry(BaseModel):
    human: Dict[str, List[float]] = Field(default_factory=dict)
    robot: Dict[str, float] = Field(default_factory=dict)


class KeypointMap(BaseModel):
    keypoints: Dict[str, _KeypointEntry]
    feet: List[str] = Field(default_factory=list)
    correspondence: List[_CorrespondenceEntry] = Field(default_factory=list)
    t_pose: Optional[_PoseEntry] = None


def load_keypoint_map(source: Union[str, Path, Mapping]) -> KeypointMap:
    if isinstance(source, Mapping):
        data = dict(source)
    else:
        try:
            data = json.loads(Path(source).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc})", field=str(source)) from exc
    try:
        return KeypointMap.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc), field="keypoint_map") from exc


# --- tree -------------------------------------------------------------------


@dataclass(frozen=True)
class KinematicTree:
    """Immutable parsed robot. ``joints`` and ``links`` follow the traversal order."""

    name: str
    root: str
    links: Tuple[Link, ...]
    joints: Tuple[Joint, ...]
    keypoints: Tuple[KeypointSpec, ...] = ()
    feet: Tuple[str, ...] = ()
    correspondence: Tuple[Correspondence, ...] = ()
    t_pose: Optional[Dict[str, Dict]] = field(default=None, compare=False)

    @property
    def actuated_joints(self) -> Tuple[Joint, ...]:
        return tuple(j for j in self.joints if j.actuated)

    @property
    def dof(self) -> int:
        return len(self.actuated_joints)

    @property
    def joint_names(self) -> List[str]:
        return [j.name for j in self.actuated_joints]

    @property
    def link_names(self) -> List[str]:
        return [link.name for link in self.links]

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.actuated_joints], dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.actuated_joints], dtype=np.float64)

    @property
    def keypoint_names(self) -> List[str]:
        return [k.name for k in self.keypoints]

    @property
    def keypoint_weights(self) -> np.ndarray:
        return np.array([k.weight for k in self.keypoints], dtype=np.float64)

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    def link_index(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise MissingLinkError("unknown link", element=name)

    def joint_index(self, name: str) -> int:
        """Index of an actuated joint in the joint vector."""
        for i, joint in enumerate(self.actuated_joints):
            if joint.name == name:
                return i
        raise ConfigError(f"unknown joint {name!r}", field="joint")

    def joint(self, name: str) -> Joint:
        for joint in self.joints:
            if joint.name == name:
                return joint
        raise ConfigError(f"unknown joint {name!r}", field="joint")

    def vector(self, angles: Mapping[str, float]) -> np.ndarray:
        """Joint vector from a sparse ``{joint: angle}`` mapping, zeros elsewhere."""
        q = np.zeros(self.dof)
        for name, value in angles.items():
            q[self.joint_index(name)] = float(value)
        return q

    def with_keypoint_map(self, keymap: KeypointMap) -> "KinematicTree":
        known = set(self.link_names)
        keypoints = []
        for name, entry in keymap.keypoints.items():
            if entry.link not in known:
                raise MissingLinkError(f"keypoint {name!r} references a missing link", element=entry.link)
            keypoints.append(KeypointSpec(name, entry.link, float(entry.weight)))
        for foot in keymap.feet:
            if foot not in known:
                raise MissingLinkError("foot references a missing link", element=foot)
        actuated = set(self.joint_names)
        correspondence = []
        for entry in keymap.correspondence:
            if entry.robot_joint not in actuated:
                raise ConfigError(f"unknown robot joint {entry.robot_joint!r}", field="correspondence")
            correspondence.append(Correspondence(**entry.model_dump()))
        t_pose = keymap.t_pose.model_dump() if keymap.t_pose is not None else None
        return replace(
            self,
            keypoints=tuple(keypoints),
            feet=tuple(keymap.feet),
            correspondence=tuple(correspondence),
            t_pose=t_pose,
        )


def _floats(text: Optional[str], default: Sequence[float], element: str) -> Tuple[float, ...]:
    if text is None:
        return tuple(default)
    try:
        values = tuple(float(v) for v in text.split())
    except ValueError as exc:
        raise MalformedDocumentError(f"non-numeric vector {text!r}", element=element) from exc
    if len(values) != len(default):
        raise MalformedDocumentError(f"expected {len(default)} values, got {text!r}", element=element)
    return values


def _parse_link(node: ET.Element) -> Link:
    name = node.get("name")
    if not name:
        raise MalformedDocumentError("link without a name", element="link")
    mass = 0.0
    mass_node = node.find("inertial/mass")
    if mass_node is not None:
        mass = float(mass_node.get("value", "0"))
    return Link(name, mass)


def _parse_joint(node: ET.Element) -> Joint:
    name = node.get("name")
    if not name:
        raise MalformedDocumentError("joint without a name", element="joint")
    kind = node.get("type", "")
    if kind not in SUPPORTED_JOINTS:
        raise UnsupportedJointError(f"joint type {kind!r} is not supported", element=name)
    parent = node.find("parent")
    child = node.find("child")
    if parent is None or child is None or not parent.get("link") or not child.get("link"):
        raise MalformedDocumentError("joint needs <parent link> and <child link>", element=name)

    origin = node.find("origin")
    xyz = _floats(origin.get("xyz") if origin is not None else None, (0.0, 0.0, 0.0), name)
    rpy = _floats(origin.get("rpy") if origin is not None else None, (0.0, 0.0, 0.0), name)
    axis_node = node.find("axis")
    axis = np.asarray(_floats(axis_node.get("xyz") if axis_node is not None else None, (1.0, 0.0, 0.0), name))

    lower = upper = effort = 0.0
    if kind == "revolute":
        norm = float(np.linalg.norm(axis))
        if norm == 0.0:
            raise MalformedDocumentError("zero rotation axis", element=name)
        axis = axis / norm
        limit = node.find("limit")
        if limit is None or limit.get("lower") is None or limit.get("upper") is None:
            raise MissingLimitError("revolute joint needs <limit lower upper>", element=name)
        lower, upper = float(limit.get("lower")), float(limit.get("upper"))
        effort = float(limit.get("effort", "0"))
        if lower > upper:
            raise MalformedDocumentError(f"lower limit {lower} > upper limit {upper}", element=name)
    return Joint(
        name=name,
        kind=kind,
        parent=parent.get("link"),
        child=child.get("link"),
        xyz=xyz,  # type: ignore[arg-type]
        rpy=rpy,  # type: ignore[arg-type]
        axis=tuple(float(a) for a in axis),  # type: ignore[arg-type]
        lower=lower,
        upper=upper,
        effort=effort,
    )


def _dfs_joint_order(graph: nx.DiGraph, root: str) -> List[str]:
    """Depth-first joint order, children visited by joint name."""
    order: List[str] = []

    def visit(link: str) -> None:
        for _, child, joint in sorted(graph.out_edges(link, data="joint"), key=lambda e: e[2]):
            order.append(joint)
            visit(child)

    visit(root)
    return order


def parse_robot_model(document: str, keypoint_map: Optional[Union[KeypointMap, Mapping]] = None) -> KinematicTree:
    """Build a ``KinematicTree`` from a robot description string."""
    try:
        root_node = ET.fromstring(document)
    except ET.ParseError as exc:
        raise MalformedDocumentError(f"not well-formed XML ({exc})", element="robot") from exc
    if root_node.tag != "robot":
        raise MalformedDocumentError(f"root element is <{root_node.tag}>", element=root_node.tag)

    links: Dict[str, Link] = {}
    for node in root_node.findall("link"):
        link = _parse_link(node)
        if link.name in links:
            raise MalformedDocumentError("duplicate link", element=link.name)
        links[link.name] = link
    joints: Dict[str, Joint] = {}
    for node in root_node.findall("joint"):
        joint = _parse_joint(node)
        if joint.name in joints:
            raise MalformedDocumentError("duplicate joint", element=joint.name)
        for end in (joint.parent, joint.child):
            if end not in links:
                raise MissingLinkError(f"joint {joint.name!r} references a missing link", element=end)
        joints[joint.name] = joint
    if not links:
        raise MalformedDocumentError("robot has no links", element="robot")

    graph = nx.DiGraph()
    graph.add_nodes_from(links)
    for joint in joints.values():
        if graph.has_edge(joint.parent, joint.child):
            raise MalformedDocumentError("two joints connect the same links", element=joint.name)
        graph.add_edge(joint.parent, joint.child, joint=joint.name)

    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        first = cycle[0]
        raise CyclicTreeError("cyclic parentage", element=graph.edges[first[0], first[1]]["joint"])
    for link, degree in graph.in_degree():
        if degree > 1:
            parents = sorted(graph.predecessors(link))
            raise MalformedDocumentError(f"link has several parents {parents}", element=link)
    roots = sorted(n for n, d in graph.in_degree() if d == 0)
    if len(roots) != 1:
        raise MalformedDocumentError(f"expected exactly one root link, found {roots}", element=roots[-1])
    root = roots[0]

    joint_order = _dfs_joint_order(graph, root)
    ordered_joints = tuple(joints[name] for name in joint_order)
    ordered_links = (links[root],) + tuple(links[j.child] for j in ordered_joints)
    tree = KinematicTree(
        name=root_node.get("name", "robot"),
        root=root,
        links=ordered_links,
        joints=ordered_joints,
    )
    logger.debug(f"parsed robot {tree.name!r}: {len(tree.links)} links, dof={tree.dof}")
    if keypoint_map is not None:
        if not isinstance(keypoint_map, KeypointMap):
            keypoint_map = load_keypoint_map(keypoint_map)
        tree = tree.with_keypoint_map(keypoint_map)
    return tree


def load_robot(path: Union[str, Path], keypoint_map: Optional[Union[str, Path]] = None) -> KinematicTree:
    document = Path(path).read_text(encoding="utf-8")
    keymap = load_keypoint_map(keypoint_map) if keypoint_map is not None else None
    return parse_robot_model(document, keymap)


def clamp_to_limits(tree: KinematicTree, q) -> np.ndarray:
    """Element-wise clamp into [lower, upper]; idempotent."""
    return np.clip(np.asarray(q, dtype=np.float64), tree.lower, tree.upper)


def bundled_robot(name: str) -> KinematicTree:
    """One of the robots shipped in ``humimic/data/robots`` (``planar_arm``, ``planar_biped``)."""
    base = Path(__file__).resolve().parent.parent / "data" / "robots"
    urdf = base / f"{name}.urdf"
    if not urdf.exists():
        raise ConfigError(f"no bundled robot named {name!r}", field="robot")
    keymap = base / f"{name}_keypoints.json"
    return load_robot(urdf, keymap if keymap.exists() else None)


def bundled_path(filename: str) -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "robots" / filename
