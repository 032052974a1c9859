from .config import MimosaConfig, MimosaConfigError
from .neighbors import neighbor_graph, brute_force_neighbors
from .local_svd import LocalBasis, local_svd, local_svd_block, choose_dim, tangent_plane_cos, pairwise_tangent_cos
from .components import (
    ComponentSet, ManifoldComponent, UnionFind, build_components, detect_edges,
    edge_match_matrix, merge_components, neighbor_lengthscale, annotate,
)
from .structure import construct_hierarchy, enclosure_ratios, enclosure_tree, tree_to_hierarchy
from .pipeline import MimosaResult, StructureNotFoundError, reduce, discover, run_mimosa

__all__ = [
    "MimosaConfig", "MimosaConfigError", "neighbor_graph", "brute_force_neighbors",
    "LocalBasis", "local_svd", "local_svd_block", "choose_dim", "tangent_plane_cos",
    "pairwise_tangent_cos", "ComponentSet", "ManifoldComponent", "UnionFind",
    "build_components", "detect_edges", "edge_match_matrix", "merge_components",
    "neighbor_lengthscale", "annotate", "construct_hierarchy", "enclosure_ratios",
    "enclosure_tree", "tree_to_hierarchy", "MimosaResult", "StructureNotFoundError",
    "reduce", "discover", "run_mimosa",
]
