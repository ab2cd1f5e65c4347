"""Pre-norm transformer encoder with a softmax classifier over entities.

Everything runs in float64 numpy. Parameters live in a plain ``dict`` of
named arrays (insertion order is the canonical tensor order used by
checkpoints and gradient checks). Linear maps use the ``x @ W + b``
convention, so a projection weight has shape ``[in, out]``.

Forward functions come in pairs: the public one returns outputs, the
``*_fwd`` variant also returns a cache consumed by the matching ``*_bwd``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import InvalidConfig, ShapeMismatch
from .sequencer import PAD

LN_EPS = 1e-5
PROB_FLOOR = 1e-12
_GELU_C = np.sqrt(2.0 / np.pi)

LAYER_TENSORS = (
    "ln1.scale", "ln1.shift",
    "query.weight", "query.bias",
    "key.weight", "key.bias",
    "value.weight", "value.bias",
    "output.weight", "output.bias",
    "ln2.scale", "ln2.shift",
    "ffn_in.weight", "ffn_in.bias",
    "ffn_out.weight", "ffn_out.bias",
)


@dataclass(frozen=True)
class ModelConfig:
    token_vocab_size: int
    entity_count: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 72
    dropout: float = 0.0
    seed: int = 0

    def validate(self):
        for name in ("token_vocab_size", "entity_count", "d_model", "n_heads", "ff_dim", "max_len"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_layers < 0:
            raise InvalidConfig(f"n_layers must be >= 0, got {self.n_layers}")
        if self.d_model % self.n_heads:
            raise InvalidConfig(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout must be in [0, 1), got {self.dropout}")
        return self

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)


def parameter_shapes(cfg):
    d, f = cfg.d_model, cfg.ff_dim
    shapes = {
        "token_embedding": (cfg.token_vocab_size, d),
        "position_embedding": (cfg.max_len, d),
        "segment_embedding": (2, d),
    }
    per_layer = {
        "ln1.scale": (d,), "ln1.shift": (d,),
        "query.weight": (d, d), "query.bias": (d,),
        "key.weight": (d, d), "key.bias": (d,),
        "value.weight": (d, d), "value.bias": (d,),
        "output.weight": (d, d), "output.bias": (d,),
        "ln2.scale": (d,), "ln2.shift": (d,),
        "ffn_in.weight": (d, f), "ffn_in.bias": (f,),
        "ffn_out.weight": (f, d), "ffn_out.bias": (d,),
    }
    for i in range(cfg.n_layers):
        for name in LAYER_TENSORS:
            shapes[f"layers.{i}.{name}"] = per_layer[name]
    shapes["classifier.weight"] = (d, cfg.entity_count)
    shapes["classifier.bias"] = (cfg.entity_count,)
    return shapes


def init_parameters(cfg):
    """Seeded initialisation.

    Embeddings and weight matrices are N(0, 1/d_model); biases and
    layer-norm shifts are 0; layer-norm scales are 1.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    std = 1.0 / np.sqrt(cfg.d_model)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".scale"):
            params[name] = np.ones(shape)
        elif name.endswith((".bias", ".shift")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, std, size=shape)
    return params


def check_parameters(params, cfg):
    expected = parameter_shapes(cfg)
    if list(params) != list(expected):
        raise ShapeMismatch("parameter names do not match the model config")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeMismatch(f"{name}: expected shape {shape}, got {params[name].shape}")


def layer_params(params, i):
    prefix = f"layers.{i}."
    return {name: params[prefix + name] for name in LAYER_TENSORS}


def softmax(logits, axis=-1):
    """Max-shifted softmax; ``-inf`` entries get probability exactly 0."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def gelu(x):
    """Tanh approximation of GELU, as in the reference BERT code."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


def _gelu_grad(x):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)


def _layer_norm_fwd(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv_std
    return xhat * scale + shift, (xhat, inv_std)


def _layer_norm_bwd(dy, scale, cache):
    xhat, inv_std = cache
    dxhat = dy * scale
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    lead = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=lead), dy.sum(axis=lead)


def _split_heads(x, n_heads):
    b, length, d = x.shape
    return x.reshape(b, length, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, length, h * dh)


def _attention_mask(pad_mask):
    # additive key mask, broadcast over heads and queries
    return np.where(pad_mask, -np.inf, 0.0)[:, None, None, :]


def _dropout_mask(rng, rate, shape):
    if rng is None or rate == 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def transformer_layer_fwd(x, pad_mask, lp, n_heads, dropout=0.0, rng=None):
    """One pre-norm layer on a batch ``x`` of shape ``[B, L, d]``.

    Dropout is applied to both residual branches only when ``rng`` is given.
    """
    a, ln1 = _layer_norm_fwd(x, lp["ln1.scale"], lp["ln1.shift"])
    q = _split_heads(a @ lp["query.weight"] + lp["query.bias"], n_heads)
    k = _split_heads(a @ lp["key.weight"] + lp["key.bias"], n_heads)
    v = _split_heads(a @ lp["value.weight"] + lp["value.bias"], n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale + _attention_mask(pad_mask)
    probs = softmax(scores)
    attended = _merge_heads(probs @ v)
    attn_out = attended @ lp["output.weight"] + lp["output.bias"]
    drop1 = _dropout_mask(rng, dropout, attn_out.shape)
    x1 = x + (attn_out if drop1 is None else attn_out * drop1)

    b, ln2 = _layer_norm_fwd(x1, lp["ln2.scale"], lp["ln2.shift"])
    pre = b @ lp["ffn_in.weight"] + lp["ffn_in.bias"]
    act = gelu(pre)
    ffn_out = act @ lp["ffn_out.weight"] + lp["ffn_out.bias"]
    drop2 = _dropout_mask(rng, dropout, ffn_out.shape)
    out = x1 + (ffn_out if drop2 is None else ffn_out * drop2)
    cache = (a, ln1, q, k, v, scale, probs, attended, b, ln2, pre, act, drop1, drop2)
    return out, cache


def transformer_layer(x, pad_mask, lp, n_heads):
    """Apply one layer to ``x`` (``[L, d]`` or ``[B, L, d]``)."""
    single = x.ndim == 2
    if single:
        x, pad_mask = x[None], np.asarray(pad_mask)[None]
    out, _ = transformer_layer_fwd(x, pad_mask, lp, n_heads)
    return out[0] if single else out


def attention_weights(x, pad_mask, lp, n_heads):
    """Per-head attention matrices ``[B, H, L, L]`` of one layer (for inspection)."""
    _, cache = transformer_layer_fwd(x, pad_mask, lp, n_heads)
    return cache[6]


def transformer_layer_bwd(dout, lp, cache):
    a, ln1, q, k, v, scale, probs, attended, b, ln2, pre, act, drop1, drop2 = cache
    grads = {}
    lead = (0, 1)

    # feed-forward branch
    dffn = dout if drop2 is None else dout * drop2
    grads["ffn_out.weight"] = np.tensordot(act, dffn, axes=(lead, lead))
    grads["ffn_out.bias"] = dffn.sum(axis=lead)
    dpre = (dffn @ lp["ffn_out.weight"].T) * _gelu_grad(pre)
    grads["ffn_in.weight"] = np.tensordot(b, dpre, axes=(lead, lead))
    grads["ffn_in.bias"] = dpre.sum(axis=lead)
    db = dpre @ lp["ffn_in.weight"].T
    dx1_ln, grads["ln2.scale"], grads["ln2.shift"] = _layer_norm_bwd(db, lp["ln2.scale"], ln2)
    dx1 = dout + dx1_ln

    # attention branch
    dattn = dx1 if drop1 is None else dx1 * drop1
    grads["output.weight"] = np.tensordot(attended, dattn, axes=(lead, lead))
    grads["output.bias"] = dattn.sum(axis=lead)
    n_heads = q.shape[1]
    dctx = _split_heads(dattn @ lp["output.weight"].T, n_heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    da = np.zeros_like(a)
    for name, dproj in (("query", dq), ("key", dk), ("value", dv)):
        dproj = _merge_heads(dproj)
        grads[f"{name}.weight"] = np.tensordot(a, dproj, axes=(lead, lead))
        grads[f"{name}.bias"] = dproj.sum(axis=lead)
        da += dproj @ lp[f"{name}.weight"].T
    dx_ln, grads["ln1.scale"], grads["ln1.shift"] = _layer_norm_bwd(da, lp["ln1.scale"], ln1)
    return dx1 + dx_ln, grads


def embed(params, tokens, segments):
    length = tokens.shape[-1]
    return (
        params["token_embedding"][tokens]
        + params["position_embedding"][:length]
        + params["segment_embedding"][segments]
    )


def _content_width(tokens):
    content = np.flatnonzero((tokens != PAD).any(axis=0))
    return int(content[-1]) + 1 if content.size else 1


def encode_batch_fwd(params, cfg, tokens, segments, rng=None):
    """CLS representations ``[B, d]`` plus the cache for backprop.

    Passing ``rng`` switches on training-mode dropout.
    """
    if tokens.shape[-1] != cfg.max_len:
        raise ShapeMismatch(
            f"sequence length {tokens.shape[-1]} does not match max_len={cfg.max_len}"
        )
    # trailing columns that are PAD in every row cannot reach position 0
    width = _content_width(tokens)
    tokens, segments = tokens[:, :width], segments[:, :width]
    pad_mask = tokens == PAD
    x = embed(params, tokens, segments)
    caches = []
    for i in range(cfg.n_layers):
        x, cache = transformer_layer_fwd(
            x, pad_mask, layer_params(params, i), cfg.n_heads, cfg.dropout, rng
        )
        caches.append(cache)
    return x[:, 0, :], (tokens, segments, x.shape, caches)


def encode_batch(params, cfg, tokens, segments):
    return encode_batch_fwd(params, cfg, tokens, segments)[0]


def encode(params, cfg, seq):
    """CLS representation ``[d]`` for one :class:`InputSequence`."""
    return encode_batch(params, cfg, seq.tokens[None], seq.segments[None])[0]


def logits_batch(params, cfg, tokens, segments):
    cls = encode_batch(params, cfg, tokens, segments)
    return cls @ params["classifier.weight"] + params["classifier.bias"]


def predict_proba_batch(params, cfg, tokens, segments):
    return softmax(logits_batch(params, cfg, tokens, segments))


def predict_tail_distribution(params, cfg, seq):
    """P(t | h, r) over all entities for one sequence."""
    if params["classifier.weight"].shape != (cfg.d_model, cfg.entity_count):
        raise ShapeMismatch("classifier weight does not match the model config")
    return predict_proba_batch(params, cfg, seq.tokens[None], seq.segments[None])[0]


def loss_and_gradients(params, cfg, tokens, segments, targets, rng=None):
    """Mean cross-entropy over the batch and its gradient for every tensor."""
    targets = np.asarray(targets)
    n = len(targets)
    cls, (tokens, segments, x_shape, caches) = encode_batch_fwd(
        params, cfg, tokens, segments, rng
    )
    logits = cls @ params["classifier.weight"] + params["classifier.bias"]
    probs = softmax(logits)
    picked = probs[np.arange(n), targets]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))

    grads = {}
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    grads["classifier.weight"] = cls.T @ dlogits
    grads["classifier.bias"] = dlogits.sum(axis=0)
    dx = np.zeros(x_shape)
    dx[:, 0, :] = dlogits @ params["classifier.weight"].T

    layer_grads = {}
    for i in reversed(range(cfg.n_layers)):
        dx, g = transformer_layer_bwd(dx, layer_params(params, i), caches[i])
        layer_grads[i] = g

    d_tok = np.zeros_like(params["token_embedding"])
    np.add.at(d_tok, tokens.ravel(), dx.reshape(-1, dx.shape[-1]))
    d_seg = np.zeros_like(params["segment_embedding"])
    np.add.at(d_seg, segments.ravel(), dx.reshape(-1, dx.shape[-1]))
    d_pos = np.zeros_like(params["position_embedding"])
    d_pos[: x_shape[1]] = dx.sum(axis=0)

    ordered = {"token_embedding": d_tok, "position_embedding": d_pos, "segment_embedding": d_seg}
    for i in range(cfg.n_layers):
        for name in LAYER_TENSORS:
            ordered[f"layers.{i}.{name}"] = layer_grads[i][name]
    ordered["classifier.weight"] = grads["classifier.weight"]
    ordered["classifier.bias"] = grads["classifier.bias"]
    return loss, ordered

