"""Shared test utilities."""
import numpy as np

import enzydesign.numerics as nm
from enzydesign.numerics import Tensor, finite_difference_gradient


def check_gradient(op, x, h=1e-5, tol=1e-6):
    """Compare analytic gradient of a random projection of op(x) against
    central differences.

    A fixed random weighting avoids losses that are constant by
    construction (softmax and layer_norm outputs have invariant sums).
    """
    probe = {}

    def loss_of(out):
        if out.size == 1:
            return out
        if "r" not in probe:
            probe["r"] = Tensor(np.random.default_rng(99).normal(size=out.shape))
        return nm.tensor_sum(out * probe["r"])

    t = Tensor(x, requires_grad=True)
    loss_of(op(t)).backward()

    def f(arr):
        return loss_of(op(Tensor(arr))).item()

    fd = finite_difference_gradient(f, np.array(x, dtype=np.float64), h=h)
    rel = np.abs(t.grad - fd) / (np.abs(fd) + 1e-8)
    assert rel.max() < tol, f"max relative error {rel.max():.3e}"
