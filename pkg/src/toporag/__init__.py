"""Topology-aware retrieval-augmented generation over text-attributed graphs."""

from .embeddings import EmbeddingMatrix, load_embedding, save_embedding
from .graph import (
    SplitAssignment,
    TextAttributedGraph,
    load_graph,
    normalized_adjacency,
    remove_partial_partial_edges,
    sample_subgraph,
    split_nodes,
)
from .proximity import DiffusionConfig, diffuse, gaussian_projection, proximity_embeddings, proximity_similarity
from .retrieval import RetrievalPlan, TopKIndex, build_index, retrieve, two_stage_retrieve
from .role import WaveConfig, characteristic_embedding, heat_wavelets, laplacian, role_embeddings, role_similarity

__version__ = "0.1.0"

__all__ = [
    "DiffusionConfig",
    "EmbeddingMatrix",
    "RetrievalPlan",
    "SplitAssignment",
    "TextAttributedGraph",
    "TopKIndex",
    "WaveConfig",
    "build_index",
    "characteristic_embedding",
    "diffuse",
    "gaussian_projection",
    "heat_wavelets",
    "laplacian",
    "load_embedding",
    "load_graph",
    "normalized_adjacency",
    "proximity_embeddings",
    "proximity_similarity",
    "remove_partial_partial_edges",
    "retrieve",
    "role_embeddings",
    "role_similarity",
    "sample_subgraph",
    "save_embedding",
    "split_nodes",
    "two_stage_retrieve",
]
