"""Raw retargeted streams to expert sequences and dataset directories."""

from humimic.postprocess.augment import (
    ContactConfig,
    augment_references,
    detect_contacts,
    encode_phase,
    foot_positions,
    projected_gravity,
    root_velocities,
)
from humimic.postprocess.cycles import extract_cycle, extract_cycle_bruteforce
from humimic.postprocess.dataset import (
    Manifest,
    build_dataset,
    load_dataset,
    load_motion,
    read_manifest,
    save_motion,
)
from humimic.postprocess.filters import CausalFilter262, FilterConfig, butterworth_lowpass, causal_ma_262
from humimic.postprocess.pipeline import PostprocessConfig, process_motion, smooth_sequence
from humimic.postprocess.resample import resample
from humimic.postprocess.sequence import MotionSequence, integrate_root, tilt_from_gravity

__all__ = [
    "CausalFilter262",
    "ContactConfig",
    "FilterConfig",
    "Manifest",
    "MotionSequence",
    "PostprocessConfig",
    "augment_references",
    "build_dataset",
    "butterworth_lowpass",
    "causal_ma_262",
    "detect_contacts",
    "encode_phase",
    "extract_cycle",
    "extract_cycle_bruteforce",
    "foot_positions",
    "integrate_root",
    "load_dataset",
    "load_motion",
    "process_motion",
    "projected_gravity",
    "read_manifest",
    "resample",
    "root_velocities",
    "save_motion",
    "smooth_sequence",
    "tilt_from_gravity",
]
