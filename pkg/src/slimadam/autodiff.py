"""Tape-based reverse-mode differentiation over numpy arrays.

A Tape records nodes in topological order during the forward pass; backward()
walks the tape in reverse, accumulating gradients additively at fan-out.  The
op set is fixed to what the model zoo needs: matmul (batched), elementwise
add/mul, broadcast add, relu, tanh-approximation gelu, layernorm with
learnable scale/shift, fused softmax cross-entropy, embedding gather, plus
reshape/transpose/masking plumbing for composing attention.
"""

import numpy as np


class Node:
    __slots__ = ("value", "parents", "vjp", "grad", "is_param")

    def __init__(self, value, parents=(), vjp=None, is_param=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp  # fn(upstream grad) -> tuple of grads, one per parent
        self.grad = None
        self.is_param = is_param


class Tape:
    """Single-owner record of one forward pass."""

    def __init__(self):
        self.nodes = []

    def _add(self, node):
        self.nodes.append(node)
        return node

    def param(self, value):
        return self._add(Node(value, is_param=True))

    def constant(self, value):
        return self._add(Node(value))

    # ---- primitives -------------------------------------------------

    def matmul(self, a, b):
        out = a.value @ b.value

        def vjp(g):
            av, bv = a.value, b.value
            ga = g @ np.swapaxes(bv, -1, -2)
            if bv.ndim == 2 and av.ndim > 2:
                # contract batch dims directly instead of materializing a
                # stacked gradient and summing it afterwards
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
            return _unbroadcast(ga, av.shape), gb

        return self._add(Node(out, (a, b), vjp))

    def add(self, a, b):
        out = a.value + b.value

        def vjp(g):
            return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

        return self._add(Node(out, (a, b), vjp))

    def mul(self, a, b):
        out = a.value * b.value

        def vjp(g):
            return (
                _unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape),
            )

        return self._add(Node(out, (a, b), vjp))

    def scale(self, a, c: float):
        def vjp(g):
            return (g * c,)

        return self._add(Node(a.value * c, (a,), vjp))

    def add_const(self, a, c):
        # constant offset, used for the causal mask
        def vjp(g):
            return (g,)

        return self._add(Node(a.value + c, (a,), vjp))

    def relu(self, a):
        mask = a.value > 0

        def vjp(g):
            return (g * mask,)

        return self._add(Node(a.value * mask, (a,), vjp))

    def gelu(self, a):
        # tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715 x^3)))
        c = np.sqrt(2.0 / np.pi)
        x = a.value
        inner = c * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def vjp(g):
            dinner = c * (1.0 + 3 * 0.044715 * x**2)
            dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
            return (g * dx,)

        return self._add(Node(out, (a,), vjp))

    def reshape(self, a, shape):
        orig = a.value.shape

        def vjp(g):
            return (g.reshape(orig),)

        return self._add(Node(a.value.reshape(shape), (a,), vjp))

    def transpose(self, a, axes):
        inv = np.argsort(axes)

        def vjp(g):
            return (np.transpose(g, inv),)

        return self._add(Node(np.transpose(a.value, axes), (a,), vjp))

    def sum(self, a):
        shape = a.value.shape

        def vjp(g):
            return (np.broadcast_to(g, shape).copy(),)

        return self._add(Node(a.value.sum(), (a,), vjp))

    def embedding(self, table, ids):
        """Gather rows of table by token id; backward is a dense scatter-add.

        The dense gradient keeps (near-)zero rows for tokens absent from the
        batch, which is exactly the rare-token starvation the second-moment
        statistics are sensitive to.
        """
        ids = np.asarray(ids)
        out = table.value[ids]

        def vjp(g):
            gt = np.zeros_like(table.value)
            np.add.at(gt, ids, g)
            return (gt,)

        return self._add(Node(out, (table,), vjp))

    def layernorm(self, x, gain, shift=None, eps: float = 1e-5):
        """Normalize the last dim; analytic backward for stability."""
        v = x.value
        mu = v.mean(axis=-1, keepdims=True)
        var = v.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (v - mu) * inv
        out = xhat * gain.value
        if shift is not None:
            out = out + shift.value
        n = v.shape[-1]
        parents = (x, gain) if shift is None else (x, gain, shift)

        def vjp(g):
            ggain = (g * xhat).reshape(-1, n).sum(axis=0)
            gx_hat = g * gain.value
            # d/dx of (x - mu)/sqrt(var + eps)
            gx = inv * (
                gx_hat
                - gx_hat.mean(axis=-1, keepdims=True)
                - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
            )
            if shift is None:
                return gx, ggain
            gshift = g.reshape(-1, n).sum(axis=0)
            return gx, ggain, gshift

        return self._add(Node(out, parents, vjp))

    def softmax_cross_entropy(self, logits, targets):
        """Mean cross-entropy over all positions; fused stable log-sum-exp.

        logits: (..., n_classes); targets: integer array of shape (...).
        """
        z = logits.value
        t = np.asarray(targets)
        zmax = z.max(axis=-1, keepdims=True)
        lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
        logp = z - lse
        flat_logp = logp.reshape(-1, z.shape[-1])
        flat_t = t.reshape(-1)
        n = flat_t.size
        loss = -flat_logp[np.arange(n), flat_t].mean()
        p = np.exp(logp)  # saved for backward

        def vjp(g):
            gz = p * (g / n)
            gz_flat = gz.reshape(-1, z.shape[-1])
            gz_flat[np.arange(n), flat_t] -= g / n
            return (gz,)

        return self._add(Node(loss, (logits,), vjp))

    def masked_softmax(self, scores, mask):
        """Softmax over the last dim with additive mask (0 or -inf pattern)."""
        z = scores.value + mask
        zmax = z.max(axis=-1, keepdims=True)
        e = np.exp(z - zmax)
        p = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            dot = (g * p).sum(axis=-1, keepdims=True)
            return (p * (g - dot),)

        return self._add(Node(p, (scores,), vjp))

    # ---- backward ----------------------------------------------------

    def backward(self, loss):
        """Gradient of a scalar loss node w.r.t. every parameter node."""
        if loss.value.ndim != 0:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.asarray(1.0)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            grads = node.vjp(node.grad)
            for parent, g in zip(node.parents, grads):
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64)
                else:
                    parent.grad = parent.grad + g
        return {
            id(n): (n.grad if n.grad is not None else np.zeros_like(n.value))
            for n in self.nodes
            if n.is_param
        }


def _unbroadcast(g, shape):
    """Sum g down to shape, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def grad_check(loss_fn, params, eps: float = 1e-5, max_coords: int = 30, seed: int = 0):
    """Max relative error between analytic and central-difference gradients.

    loss_fn(params) -> (scalar loss, dict name -> gradient array); params is
    a dict name -> array, perturbed in place per sampled coordinate.
    """
    loss0, grads = loss_fn(params)
    if not np.isfinite(loss0):
        raise FloatingPointError("non-finite loss in grad_check")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, w in params.items():
        n = w.size
        idxs = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in idxs:
            orig = w.flat[i]
            w.flat[i] = orig + eps
            lp, _ = loss_fn(params)
            w.flat[i] = orig - eps
            lm, _ = loss_fn(params)
            w.flat[i] = orig
            numeric = (lp - lm) / (2 * eps)
            analytic = grads[name].flat[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
