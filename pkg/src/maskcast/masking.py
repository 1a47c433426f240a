"""Dual masking: walk-based edge masking and patch-based temporal masking.

Also provides the uniform variants used by the ablation study.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import biased_random_walk


@dataclass
class MaskPlan:
    """One training step's sampled masks."""

    masked_edges: set  # undirected (u, v) pairs, u < v
    patch_mask: np.ndarray  # bool, length P, True = masked
    p_s: float
    p_t: float
    patch_length: int
    walks: list = field(default_factory=list)  # walk paths backing masked_edges

    def to_json(self):
        return json.dumps({
            "masked_edges": sorted(list(e) for e in self.masked_edges),
            "patch_mask": [bool(b) for b in self.patch_mask],
            "p_s": self.p_s,
            "p_t": self.p_t,
            "patch_length": self.patch_length,
        })


def _canonical(u, v):
    return (u, v) if u < v else (v, u)


def mask_target_size(n_edges, p_s):
    """round(|E| * p_s), at least 1 when p_s > 0, capped at |E|."""
    if p_s <= 0:
        return 0
    return min(n_edges, max(1, int(round(n_edges * p_s))))


def trace_spatial_mask(g, p_s, cfg, rng):
    """Walk-based edge mask; returns (edge set, list of walks).

    Roots are drawn uniformly without replacement until exhausted, then with
    replacement; walks are truncated so the target edge count is hit exactly.
    """
    if not (0 <= p_s <= 1):
        raise ValueError(f"p_s must be in [0, 1], got {p_s}")
    target = mask_target_size(g.n_edges, p_s)
    if target == 0:
        return set(), []
    if g.n_edges == 0:
        raise ValueError("cannot sample a spatial mask from an edgeless graph")

    roots_with_nbrs = [n for n in range(g.n_nodes) if g.adjacency[n].any()]
    root_order = list(rng.permutation(roots_with_nbrs))

    masked = set()
    walks = []
    while len(masked) < target:
        if root_order:
            root = int(root_order.pop())
        else:
            root = int(rng.choice(roots_with_nbrs))
        path = biased_random_walk(g, root, cfg, rng)
        kept = [path[0]]
        for a, b in zip(path, path[1:]):
            kept.append(b)
            masked.add(_canonical(a, b))
            if len(masked) == target:
                break
        walks.append(kept)
    return masked, walks


def sample_spatial_mask(g, p_s, cfg, rng):
    """Walk-based spatial edge mask of size round(|E| * p_s)."""
    masked, _ = trace_spatial_mask(g, p_s, cfg, rng)
    return masked


def sample_uniform_spatial_mask(g, p_s, rng):
    """Uniform without-replacement edge mask (ablation variant)."""
    if not (0 <= p_s <= 1):
        raise ValueError(f"p_s must be in [0, 1], got {p_s}")
    target = mask_target_size(g.n_edges, p_s)
    if target == 0:
        return set()
    picks = rng.choice(g.n_edges, size=target, replace=False)
    return {_canonical(g.edges[i][0], g.edges[i][1]) for i in picks}


def apply_spatial_mask(g, masked):
    """Adjacency copy with both entries of each masked edge zeroed."""
    edge_set = g.edge_set()
    out = g.adjacency.copy()
    for u, v in masked:
        if _canonical(u, v) not in edge_set:
            raise ValueError(f"masked edge ({u}, {v}) is not in the graph")
        out[u, v] = 0.0
        out[v, u] = 0.0
    return out


def edge_mask_matrix(n_nodes, masked):
    """0/1 matrix that zeroes masked entries when multiplied elementwise.

    Used on learned dense adjacencies, where masking must stay inside the
    differentiable graph.
    """
    m = np.ones((n_nodes, n_nodes))
    for u, v in masked:
        m[u, v] = 0.0
        m[v, u] = 0.0
    return m


def sample_temporal_mask(n_patches, p_t, rng):
    """Independent Bernoulli(p_t) per patch; at least one patch stays visible."""
    if not (0 <= p_t < 1):
        raise ValueError(f"p_t must be in [0, 1), got {p_t}")
    if n_patches < 1:
        raise ValueError(f"need at least one patch, got {n_patches}")
    mask = rng.random(n_patches) < p_t
    if mask.all():
        mask[-1] = False
    return mask


def sample_uniform_temporal_mask(n_steps, p_t, rng):
    """Per-timestep Bernoulli masking (patch length 1, ablation variant)."""
    return sample_temporal_mask(n_steps, p_t, rng)


def apply_temporal_mask(x_emb, patch_mask, mask_token):
    """Replace masked patches of an embedded window with the shared token.

    ``x_emb`` has shape [..., H, N, D]; the token (shape [D]) is broadcast
    over every masked position, so its gradient comes only from masked
    patches.
    """
    h, n, d = x_emb.shape[-3:]
    n_patches = len(patch_mask)
    if h % n_patches != 0:
        raise ad.ShapeError(f"apply_temporal_mask: history {h} not divisible into {n_patches} patches")
    if mask_token.shape != (d,):
        raise ad.ShapeError(f"apply_temporal_mask: token shape {tuple(mask_token.shape)} != ({d},)")
    patch_len = h // n_patches

    step_masked = np.repeat(np.asarray(patch_mask, dtype=bool), patch_len)
    keep = ad.Tensor((~step_masked).astype(np.float64).reshape(h, 1, 1))
    fill = ad.Tensor(step_masked.astype(np.float64).reshape(h, 1, 1))
    return ad.add(ad.mul(x_emb, keep), ad.mul(mask_token, fill))


def temporal_mask_entries(patch_mask, h, n, c):
    """0/1 array [H, N, C] marking raw-value positions under masked patches."""
    patch_len = h // len(patch_mask)
    step_masked = np.repeat(np.asarray(patch_mask, dtype=bool), patch_len)
    out = np.zeros((h, n, c))
    out[step_masked] = 1.0
    return out
