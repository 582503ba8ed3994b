"""Sub-Riemannian geometry toolkit: privileged frames, tangent groups, distances and surface measures."""

__version__ = "1.0.0"

from .dsl import ManifoldSpec, builtin, emit_spec, load_manifold, parse_manifold_spec
from .frame_core import PrivilegedFrame, build_privileged_frame, compute_flag
from .nilpotent import NilpotentFrame, nilpotent_frame_at, verify_stratified

__all__ = [
    "ManifoldSpec", "builtin", "emit_spec", "load_manifold", "parse_manifold_spec",
    "PrivilegedFrame", "build_privileged_frame", "compute_flag",
    "NilpotentFrame", "nilpotent_frame_at", "verify_stratified",
    "__version__",
]
