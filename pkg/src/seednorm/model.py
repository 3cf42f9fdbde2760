"""Desk-scale pre-norm transformer with fully manual backprop.

The model exists to exercise the normalization layers' hand-derived
gradients inside a real architecture, so nothing here touches an autodiff
framework. Token plus learned positional embeddings feed a stack of
causal-attention/FFN blocks with norms at the attention input, the query and
key projections, the FFN input, and the final output. Shapes follow
(batch, time, dim); norm layers see flattened (rows, dim) views. Per-head
query/key norms share one parameter vector of width dim/heads across every
attention head.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.special import erf

from .backward import (
    dyt_backward,
    layernorm_backward,
    mh_seednorm_backward,
    rmsnorm_backward,
    seednorm_backward,
)
from .forward import (
    dyt_forward,
    layernorm_forward,
    mh_seednorm_forward,
    rmsnorm_forward,
    seednorm_forward,
)
from .params import NormParams


class NormVariant(str, Enum):
    RMSNORM = "rmsnorm"
    LAYERNORM = "layernorm"
    DYT = "dyt"
    SEEDNORM = "seednorm"
    MH_SEEDNORM = "mh_seednorm"


@dataclass
class ModelConfig:
    layers: int = 2
    hidden_dim: int = 64
    attn_heads: int = 4
    vocab: int = 17
    context: int = 16
    norm_variant: NormVariant = NormVariant.SEEDNORM
    norm_heads: int = 1
    alpha_init: float = 1.0
    qk_norm_per_head: bool = True
    norm_eps: float = 1e-6
    ffn_mult: int = 4

    def __post_init__(self):
        self.norm_variant = NormVariant(self.norm_variant)
        if self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("layers and hidden_dim must be >= 1")
        if self.hidden_dim % self.attn_heads != 0:
            raise ValueError("attn_heads must divide hidden_dim")
        if self.norm_variant is NormVariant.MH_SEEDNORM:
            if self.hidden_dim % self.norm_heads != 0:
                raise ValueError("norm_heads must divide hidden_dim")
        if self.vocab < 2 or self.context < 2:
            raise ValueError("vocab and context must be >= 2")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.attn_heads


def _hidden_slot_heads(cfg: ModelConfig) -> int:
    return cfg.norm_heads if cfg.norm_variant is NormVariant.MH_SEEDNORM else 1


def _qk_slot_heads(cfg: ModelConfig) -> int:
    # Per-head slices already run at the reduced width where the coefficient
    # variance is small, so per-head query/key norms stay single-head.
    if cfg.qk_norm_per_head:
        return 1
    return _hidden_slot_heads(cfg)


def _norm_param_entries(prefix: str, width: int, variant: NormVariant):
    if variant is NormVariant.RMSNORM:
        return [(f"{prefix}.gamma", (width,))]
    if variant is NormVariant.LAYERNORM:
        return [(f"{prefix}.gamma", (width,)), (f"{prefix}.shift", (width,))]
    if variant is NormVariant.DYT:
        return [
            (f"{prefix}.gamma", (width,)),
            (f"{prefix}.shift", (width,)),
            (f"{prefix}.alpha", ()),
        ]
    return [
        (f"{prefix}.gamma", (width,)),
        (f"{prefix}.alpha", (width,)),
        (f"{prefix}.beta", (width,)),
    ]


def parameter_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list; defines build, count, and serialization order."""
    d = cfg.hidden_dim
    f = cfg.ffn_mult * d
    qk_width = cfg.head_dim if cfg.qk_norm_per_head else d
    v = cfg.norm_variant
    specs: list[tuple[str, tuple[int, ...]]] = [
        ("embed.weight", (cfg.vocab, d)),
        ("pos_embed.weight", (cfg.context, d)),
    ]
    for i in range(cfg.layers):
        pfx = f"layer{i}"
        specs += _norm_param_entries(f"{pfx}.attn_norm", d, v)
        specs += [
            (f"{pfx}.attn.wq", (d, d)),
            (f"{pfx}.attn.wk", (d, d)),
            (f"{pfx}.attn.wv", (d, d)),
            (f"{pfx}.attn.wo", (d, d)),
        ]
        specs += _norm_param_entries(f"{pfx}.q_norm", qk_width, v)
        specs += _norm_param_entries(f"{pfx}.k_norm", qk_width, v)
        specs += _norm_param_entries(f"{pfx}.ffn_norm", d, v)
        specs += [(f"{pfx}.ffn.w1", (d, f)), (f"{pfx}.ffn.w2", (f, d))]
    specs += _norm_param_entries("final_norm", d, v)
    specs += [("unembed.weight", (d, cfg.vocab))]
    return specs


def count_parameters(cfg: ModelConfig) -> int:
    """Total parameter count from the shape list, without allocating anything."""
    return sum(int(np.prod(shape, dtype=np.int64)) for _, shape in parameter_specs(cfg))


@dataclass
class Model:
    cfg: ModelConfig
    params: dict = field(default_factory=dict)


def build_model(cfg: ModelConfig, rng: np.random.Generator) -> Model:
    """Materialize parameters in canonical order.

    Norm parameters initialize deterministically (gamma 1, beta 0, alpha
    alpha_init, shift 0) and consume no random draws, so two variants built
    from equal seeds share bitwise-identical weight matrices.
    """
    res_scale = 1.0 / np.sqrt(2.0 * cfg.layers)
    params: dict = {}
    for name, shape in parameter_specs(cfg):
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith((".beta", ".shift")):
            params[name] = np.zeros(shape)
        elif name.endswith(".alpha"):
            params[name] = np.full(shape, float(cfg.alpha_init))
        else:
            w = rng.normal(0.0, 0.02, size=shape)
            if name.endswith((".attn.wo", ".ffn.w2")):
                w = w * res_scale
            params[name] = w
    return Model(cfg=cfg, params=params)


def _slot_params(params: dict, cfg: ModelConfig, prefix: str, n_heads: int) -> NormParams:
    return NormParams(
        gamma=params[f"{prefix}.gamma"],
        alpha=params[f"{prefix}.alpha"],
        beta=params[f"{prefix}.beta"],
        eps=cfg.norm_eps,
        n_heads=n_heads,
    )


def _slot_forward(params: dict, cfg: ModelConfig, prefix: str, rows, n_heads: int):
    v = cfg.norm_variant
    if v is NormVariant.RMSNORM:
        p = NormParams(gamma=params[f"{prefix}.gamma"], eps=cfg.norm_eps)
        return rmsnorm_forward(rows, p)
    if v is NormVariant.LAYERNORM:
        p = NormParams(gamma=params[f"{prefix}.gamma"], eps=cfg.norm_eps)
        return layernorm_forward(rows, p, params[f"{prefix}.shift"])
    if v is NormVariant.DYT:
        return dyt_forward(
            rows,
            float(params[f"{prefix}.alpha"]),
            params[f"{prefix}.gamma"],
            params[f"{prefix}.shift"],
        )
    p = _slot_params(params, cfg, prefix, n_heads)
    fwd = mh_seednorm_forward if v is NormVariant.MH_SEEDNORM else seednorm_forward
    return fwd(rows, p)


def _slot_backward(params: dict, cfg: ModelConfig, prefix: str, cache, upstream):
    v = cfg.norm_variant
    if v is NormVariant.RMSNORM:
        p = NormParams(gamma=params[f"{prefix}.gamma"], eps=cfg.norm_eps)
        b = rmsnorm_backward(cache, p, upstream)
        return b.d_x, {f"{prefix}.gamma": b.d_gamma}
    if v is NormVariant.LAYERNORM:
        p = NormParams(gamma=params[f"{prefix}.gamma"], eps=cfg.norm_eps)
        b = layernorm_backward(cache, p, upstream)
        return b.d_x, {f"{prefix}.gamma": b.d_gamma, f"{prefix}.shift": b.d_beta}
    if v is NormVariant.DYT:
        b = dyt_backward(cache, params[f"{prefix}.gamma"], upstream)
        return b.d_x, {
            f"{prefix}.gamma": b.d_gamma,
            f"{prefix}.shift": b.d_beta,
            f"{prefix}.alpha": np.asarray(b.d_alpha),
        }
    p = _slot_params(params, cfg, prefix, cache.n_heads)
    bwd = mh_seednorm_backward if v is NormVariant.MH_SEEDNORM else seednorm_backward
    b = bwd(cache, p, upstream)
    return b.d_x, {
        f"{prefix}.gamma": b.d_gamma,
        f"{prefix}.alpha": b.d_alpha,
        f"{prefix}.beta": b.d_beta,
    }


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(z):
    """Exact (erf-based) GELU; smooth everywhere, which keeps the whole-model
    finite-difference check clean."""
    return 0.5 * z * (1.0 + erf(z * _INV_SQRT2))


def gelu_prime(z):
    return 0.5 * (1.0 + erf(z * _INV_SQRT2)) + z * np.exp(-0.5 * z * z) * _INV_SQRT_2PI


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy over rows plus d loss / d logits."""
    rows = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    z = ex.sum(axis=1, keepdims=True)
    log_z = np.log(z) + m
    idx = np.arange(rows)
    loss = float(np.mean(log_z.ravel() - logits[idx, targets]))
    dlogits = ex / z
    dlogits[idx, targets] -= 1.0
    dlogits /= rows
    return loss, dlogits


def _note(sites, name, arr):
    if sites is not None:
        sites.append((name, bool(np.all(np.isfinite(arr)))))


def _attn_forward(params, cfg, pfx, xn, sites=None):
    b, t, d = xn.shape
    heads, hd = cfg.attn_heads, cfg.head_dim
    x2 = xn.reshape(b * t, d)
    q = x2 @ params[f"{pfx}.attn.wq"]
    k = x2 @ params[f"{pfx}.attn.wk"]
    v = x2 @ params[f"{pfx}.attn.wv"]
    qk_heads = _qk_slot_heads(cfg)
    if cfg.qk_norm_per_head:
        q_rows = q.reshape(b, t, heads, hd).transpose(0, 2, 1, 3).reshape(b * heads * t, hd)
        k_rows = k.reshape(b, t, heads, hd).transpose(0, 2, 1, 3).reshape(b * heads * t, hd)
        qn_rows, q_cache = _slot_forward(params, cfg, f"{pfx}.q_norm", q_rows, qk_heads)
        kn_rows, k_cache = _slot_forward(params, cfg, f"{pfx}.k_norm", k_rows, qk_heads)
        qn = qn_rows.reshape(b, heads, t, hd)
        kn = kn_rows.reshape(b, heads, t, hd)
    else:
        qn_rows, q_cache = _slot_forward(params, cfg, f"{pfx}.q_norm", q, qk_heads)
        kn_rows, k_cache = _slot_forward(params, cfg, f"{pfx}.k_norm", k, qk_heads)
        qn = qn_rows.reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
        kn = kn_rows.reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
    vh = v.reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
    inv_scale = 1.0 / np.sqrt(hd)
    scores = np.einsum("bhid,bhjd->bhij", qn, kn) * inv_scale
    causal = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores = np.where(causal, -np.inf, scores)
    m = scores.max(axis=-1, keepdims=True)
    ex = np.exp(scores - m)
    att = ex / ex.sum(axis=-1, keepdims=True)
    _note(sites, f"{pfx}.attn.softmax", att)
    o = np.einsum("bhij,bhjd->bhid", att, vh)
    oc = o.transpose(0, 2, 1, 3).reshape(b * t, d)
    out = oc @ params[f"{pfx}.attn.wo"]
    cache = {
        "x2": x2, "q": q, "k": k, "v": v, "qn": qn, "kn": kn, "vh": vh,
        "att": att, "oc": oc, "q_cache": q_cache, "k_cache": k_cache,
        "shape": (b, t, d),
    }
    return out.reshape(b, t, d), cache


def _attn_backward(params, cfg, pfx, cache, dout):
    b, t, d = cache["shape"]
    heads, hd = cfg.attn_heads, cfg.head_dim
    grads = {}
    dout2 = dout.reshape(b * t, d)
    grads[f"{pfx}.attn.wo"] = cache["oc"].T @ dout2
    d_oc = dout2 @ params[f"{pfx}.attn.wo"].T
    do = d_oc.reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
    att, vh, qn, kn = cache["att"], cache["vh"], cache["qn"], cache["kn"]
    datt = np.einsum("bhid,bhjd->bhij", do, vh)
    dvh = np.einsum("bhij,bhid->bhjd", att, do)
    dscores = att * (datt - np.sum(datt * att, axis=-1, keepdims=True))
    inv_scale = 1.0 / np.sqrt(hd)
    dqn = np.einsum("bhij,bhjd->bhid", dscores, kn) * inv_scale
    dkn = np.einsum("bhij,bhid->bhjd", dscores, qn) * inv_scale
    if cfg.qk_norm_per_head:
        dqn_rows = dqn.reshape(b * heads * t, hd)
        dkn_rows = dkn.reshape(b * heads * t, hd)
        dq_rows, gq = _slot_backward(params, cfg, f"{pfx}.q_norm", cache["q_cache"], dqn_rows)
        dk_rows, gk = _slot_backward(params, cfg, f"{pfx}.k_norm", cache["k_cache"], dkn_rows)
        dq = dq_rows.reshape(b, heads, t, hd).transpose(0, 2, 1, 3).reshape(b * t, d)
        dk = dk_rows.reshape(b, heads, t, hd).transpose(0, 2, 1, 3).reshape(b * t, d)
    else:
        dqn_rows = dqn.transpose(0, 2, 1, 3).reshape(b * t, d)
        dkn_rows = dkn.transpose(0, 2, 1, 3).reshape(b * t, d)
        dq, gq = _slot_backward(params, cfg, f"{pfx}.q_norm", cache["q_cache"], dqn_rows)
        dk, gk = _slot_backward(params, cfg, f"{pfx}.k_norm", cache["k_cache"], dkn_rows)
    grads.update(gq)
    grads.update(gk)
    dv = dvh.transpose(0, 2, 1, 3).reshape(b * t, d)
    x2 = cache["x2"]
    grads[f"{pfx}.attn.wq"] = x2.T @ dq
    grads[f"{pfx}.attn.wk"] = x2.T @ dk
    grads[f"{pfx}.attn.wv"] = x2.T @ dv
    dx2 = (
        dq @ params[f"{pfx}.attn.wq"].T
        + dk @ params[f"{pfx}.attn.wk"].T
        + dv @ params[f"{pfx}.attn.wv"].T
    )
    return dx2.reshape(b, t, d), grads


def _ffn_forward(params, pfx, rows):
    h1 = rows @ params[f"{pfx}.ffn.w1"]
    act = gelu(h1)
    out = act @ params[f"{pfx}.ffn.w2"]
    return out, {"rows": rows, "h1": h1, "act": act}


def _ffn_backward(params, pfx, cache, dout):
    grads = {f"{pfx}.ffn.w2": cache["act"].T @ dout}
    dact = dout @ params[f"{pfx}.ffn.w2"].T
    dh1 = dact * gelu_prime(cache["h1"])
    grads[f"{pfx}.ffn.w1"] = cache["rows"].T @ dh1
    d_rows = dh1 @ params[f"{pfx}.ffn.w1"].T
    return d_rows, grads


def _block_forward(params, cfg, i, x, sites=None):
    pfx = f"layer{i}"
    b, t, d = x.shape
    rows = x.reshape(b * t, d)
    hidden_heads = _hidden_slot_heads(cfg)
    na, c_an = _slot_forward(params, cfg, f"{pfx}.attn_norm", rows, hidden_heads)
    _note(sites, f"{pfx}.attn_norm", na)
    attn_out, c_attn = _attn_forward(params, cfg, pfx, na.reshape(b, t, d), sites)
    _note(sites, f"{pfx}.attn", attn_out)
    h = x + attn_out
    h_rows = h.reshape(b * t, d)
    nf, c_fn = _slot_forward(params, cfg, f"{pfx}.ffn_norm", h_rows, hidden_heads)
    _note(sites, f"{pfx}.ffn_norm", nf)
    ffn_out, c_ffn = _ffn_forward(params, pfx, nf)
    _note(sites, f"{pfx}.ffn", ffn_out)
    out = h + ffn_out.reshape(b, t, d)
    cache = {"attn_norm": c_an, "attn": c_attn, "ffn_norm": c_fn, "ffn": c_ffn,
             "shape": (b, t, d)}
    return out, cache


def _block_backward(params, cfg, i, cache, dout, grads):
    pfx = f"layer{i}"
    b, t, d = cache["shape"]
    d_ffn_out = dout.reshape(b * t, d)
    d_nf, g_ffn = _ffn_backward(params, pfx, cache["ffn"], d_ffn_out)
    grads.update(g_ffn)
    d_h_rows, g_fn = _slot_backward(params, cfg, f"{pfx}.ffn_norm", cache["ffn_norm"], d_nf)
    grads.update(g_fn)
    dh = dout + d_h_rows.reshape(b, t, d)
    d_attn_in, g_attn = _attn_backward(params, cfg, pfx, cache["attn"], dh)
    grads.update(g_attn)
    d_rows, g_an = _slot_backward(
        params, cfg, f"{pfx}.attn_norm", cache["attn_norm"], d_attn_in.reshape(b * t, d)
    )
    grads.update(g_an)
    return dh + d_rows.reshape(b, t, d)


def model_forward(params, cfg: ModelConfig, tokens, sites=None):
    """Token ids (batch, time) -> logits (batch*time, vocab) plus caches."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError("tokens must be (batch, time)")
    if tokens.shape[1] > cfg.context:
        raise ValueError(f"sequence length {tokens.shape[1]} exceeds context {cfg.context}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise ValueError("token id out of range")
    x = params["embed.weight"][tokens] + params["pos_embed.weight"][None, : tokens.shape[1], :]
    _note(sites, "embed", x)
    blocks = []
    for i in range(cfg.layers):
        x, bc = _block_forward(params, cfg, i, x, sites)
        blocks.append(bc)
    b, t, d = x.shape
    rows = x.reshape(b * t, d)
    fn_out, fn_cache = _slot_forward(params, cfg, "final_norm", rows, _hidden_slot_heads(cfg))
    _note(sites, "final_norm", fn_out)
    logits = fn_out @ params["unembed.weight"]
    _note(sites, "logits", logits)
    caches = {
        "tokens": tokens, "shape": (b, t, d), "blocks": blocks,
        "final_norm": fn_cache, "final_norm_out": fn_out,
    }
    return logits, caches


def model_backward(params, cfg: ModelConfig, caches, dlogits):
    b, t, d = caches["shape"]
    grads = {"unembed.weight": caches["final_norm_out"].T @ dlogits}
    d_fn = dlogits @ params["unembed.weight"].T
    d_rows, g_fn = _slot_backward(params, cfg, "final_norm", caches["final_norm"], d_fn)
    grads.update(g_fn)
    dx = d_rows.reshape(b, t, d)
    for i in reversed(range(cfg.layers)):
        dx = _block_backward(params, cfg, i, caches["blocks"][i], dx, grads)
    d_emb = np.zeros_like(params["embed.weight"])
    np.add.at(d_emb, caches["tokens"].ravel(), dx.reshape(b * t, d))
    grads["embed.weight"] = d_emb
    d_pos = np.zeros_like(params["pos_embed.weight"])
    d_pos[:t] = dx.sum(axis=0)
    grads["pos_embed.weight"] = d_pos
    return grads


def model_loss(params, cfg: ModelConfig, tokens, targets) -> float:
    logits, _ = model_forward(params, cfg, tokens)
    loss, _ = softmax_cross_entropy(logits, np.asarray(targets).reshape(-1))
    return loss


def loss_and_grads(model: Model, tokens, targets):
    logits, caches = model_forward(model.params, model.cfg, tokens)
    loss, dlogits = softmax_cross_entropy(logits, np.asarray(targets).reshape(-1))
    grads = model_backward(model.params, model.cfg, caches, dlogits)
    return loss, grads


def first_nonfinite_site(params, cfg: ModelConfig, tokens) -> str | None:
    """Name of the first activation checkpoint that went non-finite, if any."""
    sites: list = []
    try:
        model_forward(params, cfg, tokens, sites=sites)
    except (ValueError, FloatingPointError):
        # a layer rejecting non-finite input still leaves the trail so far
        pass
    for name, ok in sites:
        if not ok:
            return name
    return None


CHECKPOINT_FORMAT = "seednorm-checkpoint-v1"


def save_checkpoint(model: Model, path, opt_state=None) -> None:
    """Versioned JSON blob; parameters serialize flat in canonical order."""
    cfg_dict = asdict(model.cfg)
    cfg_dict["norm_variant"] = model.cfg.norm_variant.value
    blob = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg_dict,
        "params": {
            name: model.params[name].ravel().tolist()
            for name, _ in parameter_specs(model.cfg)
        },
    }
    if opt_state is not None:
        blob["optimizer"] = {
            "step": opt_state.step,
            "m": {k: v.ravel().tolist() for k, v in opt_state.m.items()},
            "v": {k: v.ravel().tolist() for k, v in opt_state.v.items()},
            "decay": dict(opt_state.decay),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def _restore_array(raw, name: str, shape, what: str):
    flat = np.asarray(raw, dtype=np.float64)
    expect = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if flat.size != expect:
        raise ValueError(f"checkpoint {what} {name} has wrong size")
    return flat.reshape(shape)


def load_checkpoint(path):
    """Returns (Model, OptimizerState or None). Shapes are validated."""
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {blob.get('format')!r}")
    cfg = ModelConfig(**blob["config"])
    specs = parameter_specs(cfg)
    params = {
        name: _restore_array(blob["params"][name], name, shape, "param")
        for name, shape in specs
    }
    model = Model(cfg=cfg, params=params)
    opt_blob = blob.get("optimizer")
    if opt_blob is None:
        return model, None
    from .optim import OptimizerState  # deferred: optim imports this module

    state = OptimizerState(
        m={n: _restore_array(opt_blob["m"][n], n, s, "moment") for n, s in specs},
        v={n: _restore_array(opt_blob["v"][n], n, s, "moment") for n, s in specs},
        step=int(opt_blob["step"]),
        decay={n: bool(opt_blob["decay"][n]) for n, _ in specs},
    )
    return model, state
