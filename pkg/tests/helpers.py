"""Shared test oracles: finite differences and brute-force attention.

Everything here is written independently of the package internals (explicit
loops, direct formulas) so tests compare two genuinely different routes to
the same number.
"""
import numpy as np
import torch


def _probe_indices(numel, cap):
    if cap is None or numel <= cap:
        return np.arange(numel)
    return np.unique(np.linspace(0, numel - 1, cap).astype(int))


def central_diff_param_grads(fn, params, eps=1e-5, cap=None):
    """Central-difference gradients of scalar fn() w.r.t. each parameter.

    With ``cap`` set, only an evenly strided subset of each tensor's elements
    is probed; the untouched positions come back as NaN and are skipped by the
    comparison.
    """
    grads = []
    for p in params:
        flat = p.data.view(-1)
        g = np.full(flat.numel(), np.nan)
        for i in _probe_indices(flat.numel(), cap):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g.reshape(tuple(p.shape)))
    return grads


def max_rel_error(analytic, numeric, atol=1e-7):
    """Largest relative discrepancy, ignoring pairs within atol of each other.

    The absolute floor absorbs one-sided finite-difference residue at ReLU
    kinks (a unit whose pre-activation sits within eps of zero contributes
    O(eps) on one side only).
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    probed = ~np.isnan(n)
    a, n = a[probed], n[probed]
    gap = np.abs(a - n)
    rel = gap / np.maximum(np.abs(a) + np.abs(n), 1e-6)
    rel[gap <= atol] = 0.0
    return float(np.max(rel))


def assert_grads_match(model, loss_fn, rel_tol=1e-4, eps=1e-5, cap=None):
    """Autograd vs central differences for every parameter of a f64 model."""
    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [
        p.grad.detach().numpy().copy() if p.grad is not None
        else np.zeros(tuple(p.shape))  # parameter unused by this loss
        for p in params
    ]
    with torch.no_grad():
        numeric = central_diff_param_grads(loss_fn, params, eps=eps, cap=cap)
    worst = max(max_rel_error(a, n) for a, n in zip(analytic, numeric))
    assert worst <= rel_tol, f"gradient mismatch: max rel err {worst:.3e}"
    return worst


def softmax_rows(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _linear(x, layer):
    w = layer.weight.detach().numpy().astype(np.float64)
    out = x @ w.T
    if layer.bias is not None:
        out = out + layer.bias.detach().numpy().astype(np.float64)
    return out


def _attention_oracle(q, k, v, heads, scale):
    """Explicit per-head attention with loops over queries and keys."""
    tq, d = q.shape
    tk = k.shape[0]
    hd = d // heads
    ctx = np.zeros((tq, d))
    for h in range(heads):
        qh = q[:, h * hd:(h + 1) * hd]
        kh = k[:, h * hd:(h + 1) * hd]
        vh = v[:, h * hd:(h + 1) * hd]
        logits = np.empty((tq, tk))
        for i in range(tq):
            for j in range(tk):
                logits[i, j] = float(np.dot(qh[i], kh[j])) * scale
        weights = softmax_rows(logits)
        for i in range(tq):
            ctx[i, h * hd:(h + 1) * hd] = sum(
                weights[i, j] * vh[j] for j in range(tk))
    return ctx


def oracle_pair_encoder(encoder, query_traj, memory_traj):
    """Recompute a PairEncoder stack from its weights, numpy-only."""
    x = np.asarray(query_traj, dtype=np.float64)
    memory = np.asarray(memory_traj, dtype=np.float64)
    for layer in encoder.layers:
        q = _linear(x, layer.q)
        k = _linear(memory, layer.k)
        v = _linear(memory, layer.v)
        ctx = _attention_oracle(q, k, v, layer.heads, layer.scale)
        inner = ctx + q
        h = np.maximum(_linear(inner, layer.ffn.net[0]), 0.0)
        x = _linear(h, layer.ffn.net[2]) + inner
    return x


def oracle_decoder(decoder, action_vec, memory):
    """Recompute an InteractionDecoder stack from its weights, numpy-only."""
    x = np.asarray(action_vec, dtype=np.float64)
    mem = np.asarray(memory, dtype=np.float64)
    for layer in decoder.layers:
        q = _linear(x[None, :], layer.q)
        k = _linear(mem, layer.k)
        v = _linear(mem, layer.v)
        ctx = _attention_oracle(q, k, v, layer.heads, layer.scale)
        inner = (ctx + q)[0]
        h = np.maximum(_linear(inner[None, :], layer.ffn.net[0])[0], 0.0)
        x = _linear(h[None, :], layer.ffn.net[2])[0] + inner
    return x
