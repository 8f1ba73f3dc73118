"""Template-to-target surface flows with a path-length (minimal energy) regularizer."""

from .flow import SeedSpec, Trajectory, VelocityGridStack, backprop, init_params, integrate, sample_velocity
from .losses import LossReport, LossWeights, chamfer, edge_loss, med_loss, normal_consistency, total_loss
from .mesh import CoupledSurfaces, Mesh, face_normals, icosphere, vertex_curvature, vertex_normals
from .metrics import RunBundle, assd, deformation_energy, rmsd, sif_percent, trt_reliability
from .optim import FitConfig, adam_step, fit
from .spatial import KdTree, TriBvh, point_triangle_distance, self_intersecting_faces

__version__ = "0.1.0"
