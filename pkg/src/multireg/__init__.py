"""Multi-instance rigid point cloud registration with instance-masked attention."""

from .errors import MultiRegError
from .geometry import RigidTransform, add_distance, add_s_distance, apply_transform, rre_rte, weighted_svd

__all__ = [
    "MultiRegError",
    "RigidTransform",
    "add_distance",
    "add_s_distance",
    "apply_transform",
    "rre_rte",
    "weighted_svd",
]
__version__ = "0.1.0"
