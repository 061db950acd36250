"""Central finite-difference gradient oracle shared by the test modules.

The oracle never touches the autodiff tape: it re-runs the forward function
with perturbed raw arrays and differences the scalar outputs.
"""

import numpy as np

EPS = 1e-5


def finite_difference(f, arrays, eps=EPS):
    """Central-difference gradients of scalar ``f()`` w.r.t. each array.

    ``f`` must read the (mutated in place) ``arrays`` on every call and
    return a python float.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + eps
            fp = f()
            a[idx] = orig - eps
            fm = f()
            a[idx] = orig
            g[idx] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_err(a, b):
    """Relative error that degrades to absolute error for small gradients."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients_sampled(build_loss, arrays, n_per_array=4, tol=1e-4, eps=EPS, seed=0):
    """Like ``check_gradients`` but differences only sampled coordinates.

    Keeps end-to-end network checks tractable: every parameter tensor is
    checked at up to ``n_per_array`` randomly chosen coordinates.
    """
    rng = np.random.default_rng(seed)
    loss, leaves = build_loss(arrays)
    loss.backward()
    auto = [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(a)
            for leaf, a in zip(leaves, arrays)]

    def f():
        out, _ = build_loss(arrays)
        return float(out.data.reshape(()))

    worst = 0.0
    for a, g_auto in zip(arrays, auto):
        flat_idx = rng.choice(a.size, size=min(n_per_array, a.size), replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, a.shape)
            orig = a[idx]
            a[idx] = orig + eps
            fp = f()
            a[idx] = orig - eps
            fm = f()
            a[idx] = orig
            g_num = (fp - fm) / (2.0 * eps)
            worst = max(worst, max_rel_err(g_auto[idx], g_num))
    assert worst < tol, f"sampled gradient mismatch: max rel err {worst:.3e} >= {tol}"
    return worst


def check_gradients(build_loss, arrays, tol=1e-4, eps=EPS):
    """Assert autodiff gradients of ``build_loss`` match finite differences.

    ``build_loss(arrays) -> (loss_tensor, [tensor_per_array])`` constructs a
    fresh graph each call; leaf tensors must wrap the given arrays directly.
    """
    loss, leaves = build_loss(arrays)
    loss.backward()
    auto = [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(a)
            for leaf, a in zip(leaves, arrays)]

    def f():
        out, _ = build_loss(arrays)
        return float(out.data.reshape(()))

    numeric = finite_difference(f, arrays, eps=eps)
    worst = max(max_rel_err(g_a, g_n) for g_a, g_n in zip(auto, numeric))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol}"
    return worst
