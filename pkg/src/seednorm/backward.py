"""Hand-derived backward passes and the finite-difference oracle.

Every backward consumes a ForwardCache and an upstream gradient of the same
shape as the input, and returns per-parameter gradients summed over rows next
to the full input gradient. Nothing here calls an autodiff framework; the
finite-difference oracle below is the independent check.

Derivation sketch for the dynamic layers, one row at a time. Write
r = x / rms(x), z_h = (x_h . beta_h) / (optional head width), c_h = act(z_h),
s = c broadcast per head * alpha, out = (s + gamma) * r, and let u be the
upstream row. Then with w = (s + gamma) * u and S_h = act'(z_h) *
sum_{k in head h} u_k alpha_k r_k:

    d_gamma   = u * r
    d_alpha_k = u_k r_k c_{h(k)}
    d_beta_l  = S_{h(l)} * x_l / (optional head width)
    d_x_l     = S_{h(l)} * beta_l / (optional head width)
                + w_l / rms - r_l * (w . r) / (dim * rms)

The last two terms are the RMSNorm input gradient; the same kernel serves
both layers so the beta = 0 reduction is exact to the bit. The projection
term uses d rms / d x_l = x_l / (dim * rms), which holds with eps inside the
radical, so these formulas are valid for eps > 0 unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Matrix, Vector, as_matrix
from .forward import ForwardCache
from .params import NormParams

# The upstream gradient is just a matrix shaped like the layer input; it gets
# a name only to make signatures self-describing.
UpstreamGrad = Matrix


@dataclass
class GradBundle:
    """Gradients of sum(upstream * layer(x)) w.r.t. parameters and input.

    d_beta doubles as the shift gradient for the layers whose second vector
    parameter is a shift (DyT, LayerNorm). Fields are None for parameters a
    layer does not have; zero-valued fields mean the parameter exists but the
    layer is insensitive to it.
    """

    d_gamma: Vector | None
    d_alpha: float | Vector | None
    d_beta: Vector | None
    d_x: Matrix


def _check_upstream(cache: ForwardCache, upstream, kinds: tuple[str, ...]) -> Matrix:
    if cache.kind not in kinds:
        raise ValueError(f"cache kind {cache.kind!r} not usable here (need {kinds})")
    u = as_matrix(upstream, "upstream")
    if u.shape != cache.x.shape:
        raise ValueError(f"upstream shape {u.shape} != input shape {cache.x.shape}")
    return u


def _rms_direction_backward(w: Matrix, r: Matrix, rms: np.ndarray, dim: int) -> Matrix:
    """Input gradient of the normalized direction: w/rms - r * (w.r)/(dim*rms)."""
    proj = np.sum(w * r, axis=1) / (dim * rms)
    return w / rms[:, None] - r * proj[:, None]


def rmsnorm_backward(cache: ForwardCache, p: NormParams, upstream) -> GradBundle:
    """Backward of gamma * x/rms(x). d_alpha and d_beta are exactly zero."""
    u = _check_upstream(cache, upstream, ("rmsnorm",))
    if p.dim != cache.dim:
        raise ValueError(f"params dim {p.dim} != cache dim {cache.dim}")
    d_gamma = np.sum(u * cache.r, axis=0)
    w = p.gamma * u
    d_x = _rms_direction_backward(w, cache.r, cache.rms, cache.dim)
    d_alpha = 0.0 if p.alpha_is_scalar else np.zeros(p.dim)
    return GradBundle(d_gamma=d_gamma, d_alpha=d_alpha, d_beta=np.zeros(p.dim), d_x=d_x)


def layernorm_backward(cache: ForwardCache, p: NormParams, upstream) -> GradBundle:
    """Backward of gamma * (x - mean)/sqrt(var + eps) + shift.

    The shift gradient is returned in the d_beta slot; there is no alpha.
    """
    u = _check_upstream(cache, upstream, ("layernorm",))
    if p.dim != cache.dim:
        raise ValueError(f"params dim {p.dim} != cache dim {cache.dim}")
    xhat = cache.r
    d_gamma = np.sum(u * xhat, axis=0)
    d_shift = np.sum(u, axis=0)
    g = p.gamma * u
    g_mean = np.mean(g, axis=1, keepdims=True)
    gx_mean = np.mean(g * xhat, axis=1, keepdims=True)
    d_x = cache.inv_std[:, None] * (g - g_mean - xhat * gx_mean)
    return GradBundle(d_gamma=d_gamma, d_alpha=None, d_beta=d_shift, d_x=d_x)


def dyt_backward(cache: ForwardCache, gamma, upstream) -> GradBundle:
    """Backward of gamma * tanh(alpha * x) + shift.

    d_alpha is the scalar sum over all entries; the shift gradient rides in
    the d_beta slot. Saturated entries (|alpha * x| large) contribute zero to
    d_x through sech^2 -> 0.
    """
    u = _check_upstream(cache, upstream, ("dyt",))
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (cache.dim,):
        raise ValueError("gamma dim mismatch with cache")
    t = cache.tanh_ax
    sech2 = 1.0 - t * t
    gu = gamma * u
    d_gamma = np.sum(u * t, axis=0)
    d_shift = np.sum(u, axis=0)
    d_alpha = float(np.sum(gu * cache.x * sech2))
    d_x = gu * (cache.alpha_scalar * sech2)
    return GradBundle(d_gamma=d_gamma, d_alpha=d_alpha, d_beta=d_shift, d_x=d_x)


def _check_dynamic_pair(cache: ForwardCache, p: NormParams) -> None:
    if p.dim != cache.dim:
        raise ValueError(f"params dim {p.dim} != cache dim {cache.dim}")
    if p.n_heads != cache.n_heads:
        raise ValueError(f"params n_heads {p.n_heads} != cache n_heads {cache.n_heads}")
    if bool(p.dim_scaled) != bool(cache.dim_scaled):
        raise ValueError("params/cache disagree on dim_scaled")
    if p.activation != cache.activation:
        raise ValueError("params/cache disagree on activation")
    if cache.dropout_mask is not None and p.dyn_dropout_rate != cache.dropout_rate:
        raise ValueError("params/cache disagree on dropout rate")


def _dynamic_backward(
    cache: ForwardCache, p: NormParams, upstream, consume_dropout: bool
) -> GradBundle:
    u = _check_upstream(cache, upstream, ("seednorm", "mh_seednorm"))
    _check_dynamic_pair(cache, p)
    if cache.dropout_mask is not None and not consume_dropout:
        raise ValueError(
            "cache has an active dropout mask; pass consume_dropout=True to "
            "backpropagate through the masked coefficient"
        )

    rows, dim = cache.x.shape
    heads = cache.n_heads
    head_dim = dim // heads

    sig_prime = cache.activation.derivative(cache.tanh_arg, cache.sigma_val)
    keep = None
    if cache.dropout_mask is not None:
        keep = cache.dropout_mask / (1.0 - cache.dropout_rate)

    ur = u * cache.r
    d_gamma = np.sum(ur, axis=0)

    coeff = np.repeat(cache.sigma_val, head_dim, axis=1)
    d_alpha_full = ur * coeff if keep is None else ur * coeff * keep
    if p.alpha_is_scalar:
        d_alpha = float(np.sum(d_alpha_full))
    else:
        d_alpha = np.sum(d_alpha_full, axis=0)

    aur = p.alpha_row() * ur
    if keep is not None:
        aur = aur * keep
    head_sums = aur.reshape(rows, heads, head_dim).sum(axis=2)
    dyn = np.repeat(sig_prime * head_sums, head_dim, axis=1)
    inv_hd = 1.0 / head_dim if cache.dim_scaled else 1.0

    d_beta = np.sum(dyn * cache.x, axis=0) * inv_hd

    w = (cache.s + p.gamma) * u
    d_x = dyn * (p.beta * inv_hd) + _rms_direction_backward(w, cache.r, cache.rms, dim)
    return GradBundle(d_gamma=d_gamma, d_alpha=d_alpha, d_beta=d_beta, d_x=d_x)


def seednorm_backward(
    cache: ForwardCache, p: NormParams, upstream, *, consume_dropout: bool = False
) -> GradBundle:
    """Backward of the single-head self-rescaling norm (see module docstring)."""
    if cache.n_heads != 1:
        raise ValueError("multi-head cache: use mh_seednorm_backward")
    return _dynamic_backward(cache, p, upstream, consume_dropout)


def mh_seednorm_backward(
    cache: ForwardCache, p: NormParams, upstream, *, consume_dropout: bool = False
) -> GradBundle:
    """Backward of the multi-head variant.

    Coefficient-path gradients are head-isolated: channels of head h only
    receive d_beta and first-term d_x contributions from upstream entries in
    head h. The RMS path still couples the full row.
    """
    return _dynamic_backward(cache, p, upstream, consume_dropout)


@dataclass
class EvalPoint:
    """Parameters-and-input bundle for the finite-difference oracle.

    Arrays set to None are not differentiated. alpha may be a 0-d array for
    layers with a scalar alpha; the matching gradient comes back as a float.
    """

    x: Matrix
    u: Matrix
    gamma: Vector | None = None
    alpha: np.ndarray | None = None
    beta: Vector | None = None

    def __post_init__(self):
        self.x = np.array(self.x, dtype=np.float64)
        self.u = np.array(self.u, dtype=np.float64)
        for name in ("gamma", "alpha", "beta"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.array(val, dtype=np.float64))


def finite_difference_jacobian(f, point: EvalPoint, step: float = 1e-5) -> GradBundle:
    """Central differences of L = sum(u * f(x, gamma, alpha, beta)).

    f must be a pure function of the supplied arrays (any fixed state such as
    a dropout mask has to be closed over). Every coordinate of every non-None
    array is perturbed by +/- step; a non-finite objective raises
    FloatingPointError naming the offending coordinate.
    """
    if step <= 0:
        raise ValueError("step must be > 0")

    def objective(tag: str) -> float:
        out = f(point.x, point.gamma, point.alpha, point.beta)
        val = float(np.sum(point.u * out))
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite objective at {tag}")
        return val

    def diff_array(arr: np.ndarray, label: str) -> np.ndarray:
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"], op_flags=["readonly"])
        for _ in it:
            idx = it.multi_index
            tag = f"{label}{list(idx)}" if idx else label
            orig = arr[idx]
            arr[idx] = orig + step
            plus = objective(tag + "+h")
            arr[idx] = orig - step
            minus = objective(tag + "-h")
            arr[idx] = orig
            grad[idx] = (plus - minus) / (2.0 * step)
        return grad

    d_x = diff_array(point.x, "x")
    d_gamma = diff_array(point.gamma, "gamma") if point.gamma is not None else None
    d_beta = diff_array(point.beta, "beta") if point.beta is not None else None
    d_alpha = None
    if point.alpha is not None:
        d_alpha_arr = diff_array(point.alpha, "alpha")
        d_alpha = float(d_alpha_arr) if d_alpha_arr.ndim == 0 else d_alpha_arr
    return GradBundle(d_gamma=d_gamma, d_alpha=d_alpha, d_beta=d_beta, d_x=d_x)


def central_difference(loss_fn, arrays, step: float = 1e-5) -> list[np.ndarray]:
    """Generic central-difference gradient of a scalar loss.

    arrays are perturbed in place one coordinate at a time and restored.
    Used for whole-model gradient checks where the loss is not a simple
    contraction with an upstream matrix.
    """
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"], op_flags=["readonly"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            plus = float(loss_fn())
            arr[idx] = orig - step
            minus = float(loss_fn())
            arr[idx] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise FloatingPointError(f"non-finite loss at coordinate {idx}")
            grad[idx] = (plus - minus) / (2.0 * step)
        grads.append(grad)
    return grads


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor); 0.0 for empty input."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
