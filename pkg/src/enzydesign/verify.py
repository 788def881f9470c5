"""Executable property suites: SE(3) equivariance and gradient audits.

Both suites run against any parameter store (the equivariance property
is architectural, so random weights suffice) and report the worst
observed deviation per property.
"""
from __future__ import annotations

import numpy as np

from . import geometry
from .config import ModelConfig
from .enzyme_model import forward_stack
from .numerics import Tensor, finite_difference_gradient
from .parameters import TagVocabulary, init_parameters
from .residues import NUM_AMINO_ACIDS
from .substrate_model import binding_probabilities, substrate_forward
from .training import record_loss


def random_instance(config: ModelConfig, n: int, rng):
    """Random sequence, motif mask, tag indices, and coordinates."""
    seq = rng.integers(0, NUM_AMINO_ACIDS, size=n)
    mask = rng.random(n) < 0.4
    if not mask.any():
        mask[int(rng.integers(n))] = True
    tag_idx = np.zeros(4, dtype=np.intp)
    coords = rng.normal(0.0, 4.0, size=(n, 3))
    return seq, mask, tag_idx, coords


def equivariance_deviation(params, config: ModelConfig, n: int, rng) -> dict:
    """Max deviations for one random (input, rigid transform) pair.

    Feature/logit deviations are absolute; the coordinate deviation is
    relative to the coordinate scale.
    """
    seq, mask, tag_idx, coords = random_instance(config, n, rng)
    rot, t = geometry.random_rigid(rng)
    logits_a, x_a, h_a = forward_stack(seq, mask, tag_idx, coords, params, config)
    logits_b, x_b, h_b = forward_stack(seq, mask, tag_idx,
                                       geometry.apply_rigid(rot, t, coords),
                                       params, config)
    expected = geometry.apply_rigid(rot, t, x_a.data)
    scale = max(np.abs(expected).max(), 1.0)
    return {
        "features": float(np.abs(h_b.data - h_a.data).max()),
        "logits": float(np.abs(logits_b.data - logits_a.data).max()),
        "coords": float(np.abs(x_b.data - expected).max() / scale),
    }


def run_equivariance_suite(params=None, config: ModelConfig | None = None,
                           trials: int = 200, seed: int = 0,
                           feature_tol: float = 1e-9,
                           coord_tol: float = 1e-9) -> dict:
    """Random (model, input, transform) triples across d and N settings."""
    rng = np.random.default_rng(seed)
    vocab = TagVocabulary.from_tags(["1.1.1.1"])
    worst = {"features": 0.0, "logits": 0.0, "coords": 0.0}
    settings = [(8, 5), (8, 50), (64, 5), (64, 50)]
    for trial in range(trials):
        d, n = settings[trial % len(settings)]
        if params is None or config is None or config.d != d:
            cfg = ModelConfig(d=d, num_heads=2 if d == 8 else 4,
                              attention_sublayers=2, interleave_period=1,
                              k_neighbors=6).validate()
            p = init_parameters(cfg, vocab, rng, zero_coord_scale=False)
        else:
            cfg, p = config, params
        dev = equivariance_deviation(p, cfg, n, rng)
        for key in worst:
            worst[key] = max(worst[key], dev[key])
    worst["passed"] = (worst["features"] < feature_tol
                       and worst["logits"] < feature_tol
                       and worst["coords"] < coord_tol)
    return worst


def run_gradient_suite(params, config: ModelConfig, vocab, seed: int = 0,
                       samples_per_tensor: int = 5, h: float = 1e-5,
                       tol: float = 1e-5) -> dict:
    """Central finite differences of the full joint loss, every tensor.

    Samples >= ``samples_per_tensor`` coordinates in each parameter
    tensor and compares the analytic gradient against (f(θ+h)-f(θ-h))/2h.
    """
    from .data import EnzymeRecord, SubstrateRecord

    rng = np.random.default_rng(seed)
    n = 6
    seq = "".join("ACDEFGHIKLMNPQRSTVWY"[i]
                  for i in rng.integers(0, NUM_AMINO_ACIDS, n))
    rec = EnzymeRecord("grad-check", seq, rng.normal(0.0, 3.0, (n, 3)),
                       sites=[0, 2], tag="1.1.1.1")
    rec.tag_idx = vocab.encode(rec.tag)
    substrate = SubstrateRecord("sub", rng.normal(0.0, 1.0, (4, 5)),
                                rng.normal(0.0, 2.0, (4, 3)))
    init_seed = int(rng.integers(2 ** 31))

    def loss_value() -> float:
        (total, _), _ = record_loss(rec, params, config,
                                    np.random.default_rng(init_seed),
                                    substrate, 1)
        return total.item()

    from .parameters import zero_grads
    zero_grads(params)
    (total, _), _ = record_loss(rec, params, config,
                                np.random.default_rng(init_seed), substrate, 1)
    total.backward()

    worst = 0.0
    worst_name = ""
    for name in sorted(params):
        p = params[name]
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        count = min(samples_per_tensor, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_value()
            flat[i] = orig - h
            fm = loss_value()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            # relative error with an absolute floor: FD roundoff at h=1e-5
            # is ~1e-10 even where the true gradient is exactly zero
            rel = abs(gflat[i] - fd) / (max(abs(gflat[i]), abs(fd)) + 1e-3)
            if rel > worst:
                worst, worst_name = rel, name
    return {"max_relative_error": worst, "worst_tensor": worst_name,
            "passed": worst < tol}


def run_binding_invariance_suite(params, config: ModelConfig, trials: int = 100,
                                 seed: int = 0, perm_tol: float = 1e-12,
                                 rigid_tol: float = 1e-9) -> dict:
    """Binding probabilities under atom permutation and rigid transforms."""
    rng = np.random.default_rng(seed)
    worst_perm, worst_rigid = 0.0, 0.0
    for _ in range(trials):
        m = int(rng.integers(2, 8))
        n = int(rng.integers(4, 12))
        seq, mask, tag_idx, coords = random_instance(config, n, rng)
        feats = rng.normal(0.0, 1.0, (m, config.substrate_feature_dim))
        sub_coords = rng.normal(0.0, 2.0, (m, 3))

        _, _, h_e = forward_stack(seq, mask, tag_idx, coords, params, config)
        h_s = substrate_forward(feats, sub_coords, params, config)
        base = binding_probabilities(h_e, h_s, params).data

        perm = rng.permutation(m)
        h_s_perm = substrate_forward(feats[perm], sub_coords[perm], params, config)
        p_perm = binding_probabilities(h_e, h_s_perm, params).data
        worst_perm = max(worst_perm, float(np.abs(p_perm - base).max()))

        rot_e, t_e = geometry.random_rigid(rng)
        rot_s, t_s = geometry.random_rigid(rng)
        _, _, h_e2 = forward_stack(seq, mask, tag_idx,
                                   geometry.apply_rigid(rot_e, t_e, coords),
                                   params, config)
        h_s2 = substrate_forward(feats,
                                 geometry.apply_rigid(rot_s, t_s, sub_coords),
                                 params, config)
        p_rigid = binding_probabilities(h_e2, h_s2, params).data
        worst_rigid = max(worst_rigid, float(np.abs(p_rigid - base).max()))
    return {"permutation": worst_perm, "rigid": worst_rigid,
            "passed": worst_perm < perm_tol and worst_rigid < rigid_tol}
