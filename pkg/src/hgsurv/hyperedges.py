"""Hyperedge builders: spatial intra-slide, feature-similarity inter-slide,
and attention-driven gene-patch edges, plus their union.

Every builder emits one edge per center vertex containing the center and
its lambda-1 neighbors (rank-based realization of the distance/similarity
thresholds). Ties are broken toward the lowest vertex index so edge lists
are fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .attention import AttnParams, attn_scores, softmax_rows
from .hgcore import Hypergraph


class TieRule(Enum):
    LOWEST_INDEX_FIRST = "lowest_index_first"


@dataclass
class EdgeBuildConfig:
    lam: int = 9  # hyperedge size; each edge = center + (lam - 1) neighbors
    beta_fraction: float = 0.05  # fraction of patches kept per gene edge
    tie_rule: TieRule = TieRule.LOWEST_INDEX_FIRST

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if not 0 < self.beta_fraction <= 1:
            raise ValueError("beta_fraction must be in (0, 1]")


def _nearest_by_key(keys: np.ndarray, n_pick: int) -> np.ndarray:
    """Indices of the n_pick smallest keys; equal keys resolved by lowest index."""
    order = np.argsort(keys, kind="stable")
    return order[:n_pick]


def intra_slide_edges(
    coords: np.ndarray, lam: int, index_offset: int = 0
) -> list[tuple[frozenset[int], float]]:
    """One spatial edge per patch of a single slide.

    coords: N x 2 patch coordinates. Vertex ids are index_offset + row id,
    letting callers stack several slides into one vertex space.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n < 1:
        raise ValueError("slide must contain at least one patch")
    n_pick = min(lam, n) - 1
    edges = []
    for center in range(n):
        d = np.linalg.norm(coords - coords[center], axis=1)
        d[center] = np.inf  # self excluded, re-added below
        picked = _nearest_by_key(d, n_pick)
        members = frozenset(int(j) + index_offset for j in picked) | {center + index_offset}
        edges.append((members, 1.0))
    return edges


def cosine_similarity_matrix(feats: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; rows with zero norm score 0 against everything."""
    feats = np.asarray(feats, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = feats / safe[:, None]
    sims = unit @ unit.T
    zero = norms == 0
    sims[zero, :] = 0.0
    sims[:, zero] = 0.0
    return sims


def inter_slide_edges(feats: np.ndarray, lam: int) -> list[tuple[frozenset[int], float]]:
    """One feature-similarity edge per patch over the pooled multi-slide patch set."""
    feats = np.asarray(feats, dtype=np.float64)
    n = feats.shape[0]
    if n < 1:
        raise ValueError("at least one patch required")
    sims = cosine_similarity_matrix(feats)
    n_pick = min(lam, n) - 1
    edges = []
    for center in range(n):
        key = -sims[center]
        key[center] = np.inf
        picked = _nearest_by_key(key, n_pick)
        members = frozenset(int(j) for j in picked) | {center}
        edges.append((members, 1.0))
    return edges


@dataclass
class GeneEdgeBuild:
    """Gene-attentive edges plus the attention intermediates training needs.

    Vertex convention: patches occupy ids 0..N-1, gene group w gets id N+w.
    Edge weights are the retained softmax mass rescaled so that uniform
    attention yields weight 1.0; this keeps the loss differentiable in the
    attention parameters.
    """

    edges: list[tuple[frozenset[int], float]]
    scores: np.ndarray  # W x N raw attention scores
    probs: np.ndarray  # W x N softmax rows
    retained: list[np.ndarray]  # per gene, retained patch indices


def gene_attentive_edges(
    gene_feats: np.ndarray,
    patch_feats: np.ndarray,
    attn_params: AttnParams,
    beta_fraction: float,
) -> GeneEdgeBuild:
    gene_feats = np.asarray(gene_feats, dtype=np.float64)
    patch_feats = np.asarray(patch_feats, dtype=np.float64)
    n_genes, n_patches = gene_feats.shape[0], patch_feats.shape[0]
    if n_genes < 1 or n_patches < 1:
        raise ValueError("need at least one gene group and one patch")
    keep = math.ceil(beta_fraction * n_patches)
    if keep <= 0:
        raise ValueError("empty gene edge")
    keep = min(keep, n_patches)
    scores = attn_scores(gene_feats, patch_feats, attn_params)
    probs = softmax_rows(scores)
    edges = []
    retained = []
    for w in range(n_genes):
        picked = _nearest_by_key(-probs[w], keep)
        picked = np.sort(picked)
        retained.append(picked)
        weight = float(probs[w, picked].sum() * n_patches / keep)
        members = frozenset(int(j) for j in picked) | {n_patches + w}
        edges.append((members, weight))
    return GeneEdgeBuild(edges=edges, scores=scores, probs=probs, retained=retained)


def random_gene_edges(
    n_genes: int, n_patches: int, beta_fraction: float, rng: np.random.Generator
) -> list[tuple[frozenset[int], float]]:
    """Feature-blind uniform edge sampler with the same edge sizes (ablation baseline)."""
    keep = math.ceil(beta_fraction * n_patches)
    if keep <= 0:
        raise ValueError("empty gene edge")
    keep = min(keep, n_patches)
    edges = []
    for w in range(n_genes):
        picked = rng.choice(n_patches, size=keep, replace=False)
        members = frozenset(int(j) for j in picked) | {n_patches + w}
        edges.append((members, 1.0))
    return edges


def merge(num_vertices: int, *edge_lists) -> Hypergraph:
    """Union of edge lists; set-identical edges are kept once (first weight wins)."""
    seen: dict[frozenset[int], float] = {}
    for edges in edge_lists:
        for members, w in edges:
            members = frozenset(members)
            if members not in seen:
                seen[members] = float(w)
    return Hypergraph(num_vertices, list(seen.items()))
