"""Enzyme modeling stack.

Interleaves global self-attention sub-layers (full-sequence context)
with neighborhood equivariant sub-layers (k-nearest-neighbor message
passing that also moves Cα coordinates), on top of residue + EC-tag +
positional embeddings. The output head reuses the amino-acid embedding
matrix to score the 20 types per position.
"""
from __future__ import annotations

import numpy as np

from . import geometry
from . import numerics as nm
from .config import ConfigError, ModelConfig
from .numerics import Tensor


def embed_inputs(seq_indices, known_mask, tag_indices, params,
                 config: ModelConfig) -> Tensor:
    """Initial residue embeddings h⁰.

    Known (motif) positions look up their amino-acid row; all other
    positions get the mask embedding. Every position then receives the
    sum of the four EC-level tag embeddings plus its positional
    embedding.
    """
    seq_indices = np.asarray(seq_indices, dtype=np.intp)
    known = np.asarray(known_mask, dtype=bool)
    n = len(seq_indices)
    if n == 0:
        raise ConfigError("empty sequence")
    if n > config.max_len:
        raise ConfigError(f"sequence length {n} exceeds max_len {config.max_len}")

    aa_rows = nm.take(params["emb/amino"], np.where(known, seq_indices, 0))
    known_col = Tensor(known.astype(np.float64)[:, None])
    mask_row = nm.reshape(params["emb/mask"], (1, config.d))
    h = aa_rows * known_col + nm.broadcast_to(mask_row, (n, config.d)) * (1.0 - known_col)

    tag_indices = np.asarray(tag_indices, dtype=np.intp)
    for k in range(4):
        table = params[f"emb/tag_l{k + 1}"]
        if not 0 <= tag_indices[k] < table.shape[0]:
            raise KeyError(f"tag index {tag_indices[k]} out of vocabulary "
                           f"at level {k + 1}")
        row = nm.reshape(nm.take(table, np.array([tag_indices[k]])), (1, config.d))
        h = h + nm.broadcast_to(row, (n, config.d))
    h = h + nm.take(params["emb/pos"], np.arange(n))
    return h


def _linear(x, params, name):
    y = x @ params[name + "/w"]
    if name + "/b" in params:
        y = y + params[name + "/b"]
    return y


def _ln_affine(x, params, name, eps):
    return nm.layer_norm(x, eps) * params[name + "/g"] + params[name + "/b"]


def global_attention_sublayer(h: Tensor, params, prefix: str,
                              config: ModelConfig) -> Tensor:
    """Pre-softmax scaled dot-product MHA + FFN, post-norm residuals."""
    n, d = h.shape
    heads = config.num_heads
    if d % heads != 0:
        raise ConfigError(f"d={d} not divisible by {heads} heads")
    dh = d // heads

    def split(t):  # (N, d) -> (heads, N, dh)
        return nm.transpose(nm.reshape(t, (n, heads, dh)), (1, 0, 2))

    q = split(_linear(h, params, f"{prefix}/q"))
    k = split(_linear(h, params, f"{prefix}/k"))
    v = split(_linear(h, params, f"{prefix}/v"))
    scores = (q @ nm.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    attn = nm.softmax(scores, axis=-1)
    ctx = nm.reshape(nm.transpose(attn @ v, (1, 0, 2)), (n, d))
    ctx = _linear(ctx, params, f"{prefix}/o")

    h_tilde = _ln_affine(ctx + h, params, f"{prefix}/ln1", config.layer_norm_eps)
    ffn = _linear(nm.relu(_linear(h_tilde, params, f"{prefix}/ffn1")),
                  params, f"{prefix}/ffn2")
    return _ln_affine(ffn + h_tilde, params, f"{prefix}/ln2", config.layer_norm_eps)


def neighborhood_messages(h: Tensor, x: Tensor, neighbors: np.ndarray,
                          params, prefix: str):
    """Softmax-weighted edge messages m_ik over each node's neighbor list.

    Returns (weighted messages (N,K,d), weights (N,K,1)). The only
    coordinate dependence is through the pairwise distance, which keeps
    the whole block rigid-motion invariant.
    """
    n = h.shape[0]
    kc = neighbors.shape[1]
    hk = nm.take(h, neighbors)
    hi = nm.broadcast_to(nm.reshape(h, (n, 1, h.shape[1])), hk.shape)
    xk = nm.take(x, neighbors)
    xi = nm.broadcast_to(nm.reshape(x, (n, 1, 3)), (n, kc, 3))
    dist = nm.l2_norm(xi - xk, axis=-1, keepdims=True)
    z = nm.concat([hi, hk, dist], axis=-1)
    m = nm.silu(_linear(nm.silu(_linear(z, params, f"{prefix}/msg1")),
                        params, f"{prefix}/msg2"))
    w = nm.softmax(_linear(m, params, f"{prefix}/attn"), axis=1)
    return w * m, w


def gated_node_update(h: Tensor, messages: Tensor, params, prefix: str) -> Tensor:
    """h_i ← h_i + σ(FFN(g_i)) ⊙ g_i with g_i the aggregated message."""
    g = nm.tensor_sum(messages, axis=1)
    gate = nm.sigmoid(_linear(nm.relu(_linear(g, params, f"{prefix}/gate1")),
                              params, f"{prefix}/gate2"))
    return h + gate * g


def neighborhood_sublayer(h: Tensor, x: Tensor, neighbors: np.ndarray,
                          params, prefix: str, config: ModelConfig,
                          motif_mask=None):
    """One equivariant sub-layer: messages, coordinate update, node update.

    Coordinates move along the radial directions x_i − x_k scaled by a
    per-edge scalar, which preserves SE(3) equivariance. When
    ``freeze_motif_coords`` is set, motif rows keep their incoming
    coordinates.
    """
    n = h.shape[0]
    kc = neighbors.shape[1]
    m, _ = neighborhood_messages(h, x, neighbors, params, prefix)

    scale = _linear(nm.silu(_linear(m, params, f"{prefix}/coord1")),
                    params, f"{prefix}/coord2")
    xk = nm.take(x, neighbors)
    xi = nm.broadcast_to(nm.reshape(x, (n, 1, 3)), (n, kc, 3))
    x_new = x + nm.tensor_sum((xi - xk) * scale, axis=1)
    if config.freeze_motif_coords and motif_mask is not None:
        keep = Tensor(np.asarray(motif_mask, dtype=np.float64)[:, None])
        x_new = x * keep + x_new * (1.0 - keep)

    h_new = gated_node_update(h, m, params, prefix)
    return h_new, x_new


def forward_stack(seq_indices, known_mask, tag_indices, coords, params,
                  config: ModelConfig):
    """Full enzyme forward pass.

    ``coords`` is the complete N×3 coordinate input (motif values plus
    spherical initialization for free residues, see
    ``geometry.init_coordinates``). Returns (logits N×20, output
    coordinates N×3, final features N×d), all Tensors.
    """
    config.validate()
    h = embed_inputs(seq_indices, known_mask, tag_indices, params, config)
    x = coords if isinstance(coords, Tensor) else Tensor(np.asarray(coords, dtype=np.float64))
    if x.shape != (h.shape[0], 3):
        raise ConfigError(f"coords shape {x.shape} does not match sequence "
                          f"length {h.shape[0]}")

    frozen_graph = None
    if config.knn_mode == "frozen":
        frozen_graph = geometry.knn(x.data, config.k_neighbors)

    neigh_used = 0
    for i in range(config.attention_sublayers):
        h = global_attention_sublayer(h, params, f"attn{i}", config)
        due = (i + 1) % config.interleave_period == 0
        if due and neigh_used < config.neighborhood_sublayers:
            graph = (frozen_graph if frozen_graph is not None
                     else geometry.knn(x.data, config.k_neighbors))
            h, x = neighborhood_sublayer(h, x, graph, params,
                                         f"neigh{neigh_used}", config,
                                         motif_mask=known_mask)
            neigh_used += 1

    logits = h @ nm.transpose(params["emb/amino"])
    return logits, x, h


def greedy_decode(logits, seq_indices, known_mask) -> np.ndarray:
    """Per-position argmax at free positions, motif residues copied verbatim.

    Ties resolve to the lowest amino-acid index (np.argmax convention).
    """
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    seq_indices = np.asarray(seq_indices, dtype=np.intp)
    known = np.asarray(known_mask, dtype=bool)
    picks = arr.argmax(axis=-1)
    return np.where(known, seq_indices, picks)
