"""Deterministic desk-scale training workloads with exact gradients.

Two workloads: a noisy quadratic for fast property tests, and a small
decoder-only character transformer with hand-written reverse-mode
differentiation. Both produce bit-identical gradient streams for
identical (seed, data_seed, spec) triples, which is what makes run
records byte-reproducible downstream.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .linalg import sym_eigh

LN_EPS = 1e-5
VALIDATION_BATCHES = 16
_BATCH_CACHE_CAP = 4096

NOISY_QUADRATIC = "noisy_quadratic"
TINY_LM = "tiny_lm"

MATRIX_CLASSES = ("attention_qkv", "attention_out", "mlp_in", "mlp_out")
FIXED_CLASSES = ("embed", "output_head", "layernorm")
PARAM_CLASSES = MATRIX_CLASSES + FIXED_CLASSES


@dataclass(frozen=True)
class WorkloadSpec:
    """Workload identity. Hashable so batches can be cached across runs."""

    kind: str
    batch_size: int = 32
    total_steps: int = 2000
    warmup_steps: int = 40
    seed: int = 0
    data_seed: int = 0
    # noisy quadratic
    dim: int = 8
    noise_scale: float = 0.0
    curvature_spectrum: tuple = ()
    # transformer
    layers: int = 2
    d_model: int = 64
    heads: int = 4
    vocab: int = 96
    seq_len: int = 64

    def __post_init__(self):
        if self.kind not in (NOISY_QUADRATIC, TINY_LM):
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")
        if self.kind == NOISY_QUADRATIC:
            if self.dim < 1:
                raise ValueError("dim must be positive")
            if len(self.curvature_spectrum) != self.dim:
                raise ValueError("curvature_spectrum length must equal dim")
            if any(c <= 0 for c in self.curvature_spectrum):
                raise ValueError("curvatures must be positive")
            if self.noise_scale < 0:
                raise ValueError("noise_scale must be nonnegative")
        else:
            if min(self.layers, self.d_model, self.heads, self.vocab, self.seq_len) < 1:
                raise ValueError("transformer dimensions must be positive")
            if self.d_model % self.heads != 0:
                raise ValueError("heads must divide d_model")


def noisy_quadratic_spec(dim=8, noise_scale=0.0, curvature_spectrum=None, **kw):
    if curvature_spectrum is None:
        curvature_spectrum = tuple(np.geomspace(1.0, 100.0, dim))
    kw.setdefault("total_steps", 500)
    kw.setdefault("warmup_steps", 10)
    kw.setdefault("batch_size", 1)
    return WorkloadSpec(
        kind=NOISY_QUADRATIC,
        dim=dim,
        noise_scale=noise_scale,
        curvature_spectrum=tuple(float(c) for c in curvature_spectrum),
        **kw,
    )


def tiny_lm_spec(**kw):
    return WorkloadSpec(kind=TINY_LM, **kw)


def make_workload(spec):
    if spec.kind == NOISY_QUADRATIC:
        return NoisyQuadratic(spec)
    return TinyLM(spec)


class NoisyQuadratic:
    """loss(theta) = 0.5 theta' H theta with optional gradient noise.

    The minimizer is the origin, so distance-to-optimum is just the
    parameter norm. H has the exact eigenvalues named in the spec.
    """

    def __init__(self, spec):
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 71])
        raw = rng.standard_normal((spec.dim, spec.dim))
        q = sym_eigh(raw + raw.T).eigenvectors
        lam = np.array(spec.curvature_spectrum, dtype=np.float64)
        self.hessian = q @ (lam[:, None] * q.T)

    def init_params(self, seed):
        rng = np.random.default_rng([seed, 17])
        return {"quadratic": rng.standard_normal((self.spec.dim, 1))}

    def param_class(self, name):
        return "quadratic"

    def next_batch(self, step):
        if self.spec.noise_scale == 0.0:
            return None
        rng = np.random.default_rng([self.spec.data_seed, step])
        return rng.standard_normal((self.spec.dim, 1))

    def loss_and_grads(self, params, batch):
        theta = params["quadratic"]
        # overflow to inf is how divergence is detected; no warning needed
        with np.errstate(over="ignore", invalid="ignore"):
            h_theta = self.hessian @ theta
            loss = float(0.5 * np.sum(theta * h_theta))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite quadratic loss")
        grad = h_theta
        if batch is not None:
            grad = grad + self.spec.noise_scale * batch
        return loss, {"quadratic": grad}

    def validation_loss(self, params):
        theta = params["quadratic"]
        return float(0.5 * np.sum(theta * (self.hessian @ theta)))


# ---------------------------------------------------------------------------
# character transformer

# batches are pure functions of (data_seed, stream, step, geometry), so a
# single process-wide cache serves every run in a sweep; validation draws
# from the same transition table through its own stream
_TRAIN_STREAM = 0
_VALIDATION_STREAM = 1
_batch_cache = OrderedDict()
_table_cache = {}


def _softmax_last(logits):
    logits = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    return p


def _transition_table(data_seed, vocab):
    """Markov table P[a, b] -> distribution of the next char.

    Half the mass is a sharp bigram component, learnable through the
    direct embedding -> head path from the first steps; the other half
    is second-order and only reachable by combining two positions
    through attention.  Dropping either half costs real loss, so both
    circuit depths contribute to the optimizer comparison.
    """
    key = (data_seed, vocab)
    if key not in _table_cache:
        rng = np.random.default_rng([data_seed, 929])
        second = _softmax_last(2.0 * rng.standard_normal((vocab, vocab, vocab)))
        bigram = _softmax_last(2.0 * rng.standard_normal((vocab, vocab)))
        p = 0.5 * bigram[None, :, :] + 0.5 * second
        p = 0.999 * p + 0.001 / vocab
        _table_cache[key] = np.cumsum(p, axis=2)
    return _table_cache[key]


def _sample_batch(data_seed, stream, step, batch_size, seq_len, vocab):
    cum = _transition_table(data_seed, vocab)
    rng = np.random.default_rng([data_seed, stream, step])
    seq = np.empty((batch_size, seq_len + 1), dtype=np.int64)
    seq[:, 0] = rng.integers(0, vocab, batch_size)
    seq[:, 1] = rng.integers(0, vocab, batch_size)
    draws = rng.random((batch_size, seq_len - 1))
    for t in range(2, seq_len + 1):
        rows = cum[seq[:, t - 2], seq[:, t - 1]]
        seq[:, t] = (draws[:, t - 2, None] > rows).sum(axis=1)
    return seq[:, :-1].copy(), seq[:, 1:].copy()


def _cached_batch(data_seed, stream, step, batch_size, seq_len, vocab):
    key = (data_seed, stream, step, batch_size, seq_len, vocab)
    hit = _batch_cache.get(key)
    if hit is None:
        hit = _sample_batch(data_seed, stream, step, batch_size, seq_len, vocab)
        _batch_cache[key] = hit
        if len(_batch_cache) > _BATCH_CACHE_CAP:
            _batch_cache.popitem(last=False)
    return hit


def _layernorm_forward(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return scale * xh + shift, (xh, inv)


def _layernorm_backward(dy, scale, cache):
    xh, inv = cache
    lead = tuple(range(dy.ndim - 1))
    dscale = np.sum(dy * xh, axis=lead)
    dshift = np.sum(dy, axis=lead)
    dxh = dy * scale
    # centering first is harmless in the xh projection: mean(xh) = 0
    dxh -= dxh.mean(axis=-1, keepdims=True)
    dxh -= xh * (dxh * xh).mean(axis=-1, keepdims=True)
    dxh *= inv
    return dxh, dscale, dshift


def _act_forward(u):
    """Squared rectifier max(u, 0)^2.

    Chosen over tanh-style gates because the activation runs on half a
    million float64 entries per step and transcendental ufuncs dominate
    the whole forward pass otherwise. Continuously differentiable, so
    finite-difference gradient checks stay clean.
    """
    pos = np.maximum(u, 0.0)
    return pos * pos, pos


def _act_backward(du_out, pos):
    d = 2.0 * pos
    d *= du_out
    return d


class TinyLM:
    """Pre-norm decoder-only transformer over synthetic character data.

    All weights are float64 and all linear layers are bias-free, so
    every matrix-shaped parameter is a clean target for the matrix
    update rules. Embeddings, the output head, and layernorm vectors
    form the fixed (non-matrix) groups.
    """

    def __init__(self, spec):
        self.spec = spec
        self.head_dim = spec.d_model // spec.heads
        self.mask = np.triu(
            np.full((spec.seq_len, spec.seq_len), -np.inf), k=1
        )

    def init_params(self, seed):
        s = self.spec
        rng = np.random.default_rng([seed, 5])
        std = 0.02
        # residual-entering projections get the usual depth rescale
        res_std = std / np.sqrt(2.0 * s.layers)
        p = {}
        p["embed.token"] = std * rng.standard_normal((s.vocab, s.d_model))
        p["embed.position"] = std * rng.standard_normal((s.seq_len, s.d_model))
        for l in range(s.layers):
            b = f"block{l}"
            p[f"{b}.ln1.scale"] = np.ones(s.d_model)
            p[f"{b}.ln1.shift"] = np.zeros(s.d_model)
            p[f"{b}.attn_qkv"] = std * rng.standard_normal(
                (s.d_model, 3 * s.d_model)
            )
            p[f"{b}.attn_out"] = res_std * rng.standard_normal(
                (s.d_model, s.d_model)
            )
            p[f"{b}.ln2.scale"] = np.ones(s.d_model)
            p[f"{b}.ln2.shift"] = np.zeros(s.d_model)
            p[f"{b}.mlp_in"] = std * rng.standard_normal(
                (s.d_model, 4 * s.d_model)
            )
            p[f"{b}.mlp_out"] = res_std * rng.standard_normal(
                (4 * s.d_model, s.d_model)
            )
        p["final_ln.scale"] = np.ones(s.d_model)
        p["final_ln.shift"] = np.zeros(s.d_model)
        p["output_head"] = std * rng.standard_normal((s.d_model, s.vocab))
        return p

    def param_class(self, name):
        if name.startswith("embed."):
            return "embed"
        if name == "output_head":
            return "output_head"
        if ".ln" in name or name.startswith("final_ln"):
            return "layernorm"
        for cls in ("attn_qkv", "attn_out", "mlp_in", "mlp_out"):
            if name.endswith(cls):
                return cls.replace("attn_", "attention_")
        raise KeyError(name)

    def next_batch(self, step):
        s = self.spec
        return _cached_batch(
            s.data_seed, _TRAIN_STREAM, step, s.batch_size, s.seq_len, s.vocab
        )

    def validation_batches(self):
        s = self.spec
        return [
            _cached_batch(
                s.data_seed, _VALIDATION_STREAM, i, s.batch_size, s.seq_len, s.vocab
            )
            for i in range(VALIDATION_BATCHES)
        ]

    # forward with caches kept for the manual backward pass

    def _attention(self, h_flat, w_qkv, B):
        s = self.spec
        T, C, H, hd = s.seq_len, s.d_model, s.heads, self.head_dim
        qkv = h_flat @ w_qkv
        q, k, v = (
            qkv[:, i * C : (i + 1) * C]
            .reshape(B, T, H, hd)
            .transpose(0, 2, 1, 3)
            for i in range(3)
        )
        # 1/sqrt(hd) folded into q: scaling (B,H,T,hd) is 4x cheaper
        # than scaling the (B,H,T,T) score matrix
        q = q * (1.0 / np.sqrt(hd))
        scores = q @ k.transpose(0, 1, 3, 2)
        scores += self.mask
        scores -= scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores, out=scores)
        probs /= probs.sum(axis=-1, keepdims=True)
        out = probs @ v
        out_flat = out.transpose(0, 2, 1, 3).reshape(B * T, C)
        return out_flat, (q, k, v, probs)

    def _attention_backward(self, d_out_flat, cache, B):
        s = self.spec
        T, C, H, hd = s.seq_len, s.d_model, s.heads, self.head_dim
        q, k, v, probs = cache
        d_out = d_out_flat.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        dv = probs.transpose(0, 1, 3, 2) @ d_out
        dp = d_out @ v.transpose(0, 1, 3, 2)
        dp -= (dp * probs).sum(axis=-1, keepdims=True)
        ds = dp
        ds *= probs
        # cached q already carries the 1/sqrt(hd) factor, so dk needs no
        # extra scale while dq picks it up explicitly
        dq = ds @ k
        dq *= 1.0 / np.sqrt(hd)
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.empty((B * T, 3 * C))
        for i, d in enumerate((dq, dk, dv)):
            dqkv[:, i * C : (i + 1) * C] = d.transpose(0, 2, 1, 3).reshape(
                B * T, C
            )
        return dqkv

    def _forward(self, params, inputs):
        s = self.spec
        B, T, C = inputs.shape[0], s.seq_len, s.d_model
        x = params["embed.token"][inputs] + params["embed.position"]
        caches = []
        for l in range(s.layers):
            b = f"block{l}"
            h, ln1 = _layernorm_forward(
                x, params[f"{b}.ln1.scale"], params[f"{b}.ln1.shift"]
            )
            h_flat = h.reshape(B * T, C)
            att_flat, att_cache = self._attention(
                h_flat, params[f"{b}.attn_qkv"], B
            )
            x += (att_flat @ params[f"{b}.attn_out"]).reshape(B, T, C)
            h2, ln2 = _layernorm_forward(
                x, params[f"{b}.ln2.scale"], params[f"{b}.ln2.shift"]
            )
            h2_flat = h2.reshape(B * T, C)
            u1 = h2_flat @ params[f"{b}.mlp_in"]
            act, act_pos = _act_forward(u1)
            x += (act @ params[f"{b}.mlp_out"]).reshape(B, T, C)
            caches.append(
                (ln1, h_flat, att_cache, att_flat, ln2, h2_flat, act, act_pos)
            )
        xf, lnf = _layernorm_forward(
            x, params["final_ln.scale"], params["final_ln.shift"]
        )
        xf_flat = xf.reshape(B * T, C)
        logits = xf_flat @ params["output_head"]
        return logits, (caches, lnf, xf_flat, B)

    def loss_and_grads(self, params, batch):
        inputs, targets = batch
        s = self.spec
        B, T, C, V = inputs.shape[0], s.seq_len, s.d_model, s.vocab
        n = B * T
        # overflow to inf is how divergence is detected; no warning needed
        with np.errstate(over="ignore", invalid="ignore"):
            logits, (caches, lnf, xf_flat, _) = self._forward(params, inputs)
            flat_targets = targets.reshape(n)
            rows = np.arange(n)
            zmax = logits.max(axis=1, keepdims=True)
            z = logits - zmax
            target_z = z[rows, flat_targets].copy()
            ez = np.exp(z, out=z)
            zsum = ez.sum(axis=1, keepdims=True)
            loss = float(np.mean(np.log(zsum[:, 0]) - target_z))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite transformer loss")

        dlogits = ez
        dlogits /= zsum
        dlogits[rows, flat_targets] -= 1.0
        dlogits *= 1.0 / n

        grads = {}
        grads["output_head"] = xf_flat.T @ dlogits
        dxf = (dlogits @ params["output_head"].T).reshape(B, T, C)
        dx, grads["final_ln.scale"], grads["final_ln.shift"] = (
            _layernorm_backward(dxf, params["final_ln.scale"], lnf)
        )
        for l in reversed(range(s.layers)):
            b = f"block{l}"
            ln1, h_flat, att_cache, att_flat, ln2, h2_flat, act, act_pos = (
                caches[l]
            )
            dx_flat = dx.reshape(n, C)
            # mlp branch
            grads[f"{b}.mlp_out"] = act.T @ dx_flat
            dact = dx_flat @ params[f"{b}.mlp_out"].T
            du1 = _act_backward(dact, act_pos)
            grads[f"{b}.mlp_in"] = h2_flat.T @ du1
            dh2 = (du1 @ params[f"{b}.mlp_in"].T).reshape(B, T, C)
            dres, grads[f"{b}.ln2.scale"], grads[f"{b}.ln2.shift"] = (
                _layernorm_backward(dh2, params[f"{b}.ln2.scale"], ln2)
            )
            dx += dres
            # attention branch
            dx_flat = dx.reshape(n, C)
            grads[f"{b}.attn_out"] = att_flat.T @ dx_flat
            datt = dx_flat @ params[f"{b}.attn_out"].T
            dqkv = self._attention_backward(datt, att_cache, B)
            grads[f"{b}.attn_qkv"] = h_flat.T @ dqkv
            dh = (dqkv @ params[f"{b}.attn_qkv"].T).reshape(B, T, C)
            dres, grads[f"{b}.ln1.scale"], grads[f"{b}.ln1.shift"] = (
                _layernorm_backward(dh, params[f"{b}.ln1.scale"], ln1)
            )
            dx += dres
        grads["embed.position"] = dx.sum(axis=0)
        flat_inputs = inputs.reshape(n)
        in_onehot = np.zeros((n, s.vocab))
        in_onehot[np.arange(n), flat_inputs] = 1.0
        grads["embed.token"] = in_onehot.T @ dx.reshape(n, C)
        return loss, grads

    def loss_only(self, params, batch):
        inputs, targets = batch
        n = inputs.shape[0] * self.spec.seq_len
        with np.errstate(over="ignore", invalid="ignore"):
            logits, _ = self._forward(params, inputs)
            zmax = logits.max(axis=1, keepdims=True)
            z = logits - zmax
            zsum = np.exp(z).sum(axis=1)
            loss = float(
                np.mean(np.log(zsum) - z[np.arange(n), targets.reshape(n)])
            )
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite transformer loss")
        return loss

    def validation_loss(self, params):
        batches = self.validation_batches()
        return float(
            np.mean([self.loss_only(params, b) for b in batches])
        )
