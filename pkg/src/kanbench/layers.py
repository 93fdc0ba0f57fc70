"""Forward/backward passes for every architecture in the comparison.

Four kinds: `kan` (spline branch + SiLU shortcut per layer), `mlp` (plain
linear stack with a fixed activation between layers, either order), and the
two hybrids `mlp_spline_pre` / `mlp_spline_post` (MLP whose activation is a
learnable per-coordinate B-spline before or after the linear map).

Layers map (batch, d_in) -> (batch, d_out) with no cross-row interaction.
Gradients are computed analytically; caches returned by the forwards carry
exactly what the matching backward needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore
from .bspline import SplineSpec, basis_and_grad, basis_eval, make_knots
from .errors import ConfigError, ShapeError
from .nncore import ACTIVATIONS, activation_eval, activation_grad, layernorm, layernorm_backward, sigmoid

KINDS = ("kan", "mlp", "mlp_spline_pre", "mlp_spline_post")


@dataclass(frozen=True)
class ArchSpec:
    """Declarative model description driving building, training, accounting."""

    kind: str
    widths: tuple[int, ...]
    activation: str = "gelu"
    use_norm: bool = False
    spline: SplineSpec | None = None
    nonlinear_first: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be >= 2 positive entries, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.kind != "mlp" and self.spline is None:
            raise ConfigError(f"kind {self.kind!r} requires a spline spec")
        if self.kind == "kan" and self.use_norm:
            raise ConfigError("normalization is never applied inside KAN models")

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1


def arch_to_dict(arch: ArchSpec) -> dict:
    d = {
        "kind": arch.kind,
        "widths": list(arch.widths),
        "activation": arch.activation,
        "use_norm": arch.use_norm,
        "nonlinear_first": arch.nonlinear_first,
    }
    if arch.spline is not None:
        d["grid"] = arch.spline.grid_count
        d["order"] = arch.spline.order
        d["range"] = [arch.spline.lo, arch.spline.hi]
    return d


def arch_from_dict(d: dict) -> ArchSpec:
    known = {"kind", "widths", "activation", "use_norm", "nonlinear_first", "grid", "order", "range"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown arch keys: {sorted(unknown)}")
    if "kind" not in d or "widths" not in d:
        raise ConfigError("arch needs at least 'kind' and 'widths'")
    spline = None
    if "grid" in d or "order" in d or "range" in d:
        rng = d.get("range", [-1.0, 1.0])
        spline = SplineSpec(int(d.get("grid", 5)), int(d.get("order", 3)), float(rng[0]), float(rng[1]))
    return ArchSpec(
        kind=d["kind"],
        widths=tuple(d["widths"]),
        activation=d.get("activation", "gelu"),
        use_norm=bool(d.get("use_norm", False)),
        spline=spline,
        nonlinear_first=bool(d.get("nonlinear_first", False)),
    )


# ---------------------------------------------------------------------------
# parameter containers (also reused as gradient containers)

@dataclass
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray


@dataclass
class KanLayerParams:
    coef: np.ndarray        # (d_out, d_in, G+K) spline control coefficients
    w_spline: np.ndarray    # (d_out, d_in) scale on the spline branch
    w_shortcut: np.ndarray  # (d_out, d_in) SiLU branch weights
    bias: np.ndarray        # (d_out,)


@dataclass
class MlpLayerParams:
    weight: np.ndarray      # (d_out, d_in)
    bias: np.ndarray        # (d_out,)
    norm: LayerNormParams | None = None


@dataclass
class SplineMlpLayerParams:
    weight: np.ndarray
    bias: np.ndarray
    act_coef: np.ndarray    # (n_act, G+K); n_act = d_in (pre) or d_out (post)
    norm: LayerNormParams | None = None


Model = list


def layer_structure(arch: ArchSpec):
    """Per-layer construction plan: (kind_tag, d_in, d_out, n_act, with_norm).

    Single source of truth for what build_model allocates; n_act is the number
    of learnable spline activation positions (0 when the layer has none).
    """
    m = arch.spline.num_basis if arch.spline is not None else 0
    plan = []
    for l in range(arch.num_layers):
        d_in, d_out = arch.widths[l], arch.widths[l + 1]
        hidden = l < arch.num_layers - 1
        with_norm = arch.use_norm and hidden and arch.kind != "kan"
        if arch.kind == "kan":
            plan.append(("kan", d_in, d_out, 0, False))
        elif arch.kind == "mlp":
            plan.append(("mlp", d_in, d_out, 0, with_norm))
        elif arch.kind == "mlp_spline_pre":
            plan.append(("spline_mlp", d_in, d_out, d_in, with_norm))
        elif hidden:
            plan.append(("spline_mlp", d_in, d_out, d_out, with_norm))
        else:
            plan.append(("mlp", d_in, d_out, 0, False))
    return plan


def _make_layer(tag: str, d_in: int, d_out: int, n_act: int, with_norm: bool,
                m: int, rng: np.random.Generator | None):
    bound = np.sqrt(1.0 / d_in)

    def lin(shape):
        return rng.uniform(-bound, bound, size=shape) if rng is not None else np.zeros(shape)

    def coef(shape):
        return rng.normal(0.0, 0.1, size=shape) if rng is not None else np.zeros(shape)

    norm = LayerNormParams(gain=np.ones(d_out), bias=np.zeros(d_out)) if with_norm else None
    if tag == "kan":
        return KanLayerParams(coef=coef((d_out, d_in, m)), w_spline=np.ones((d_out, d_in)),
                              w_shortcut=lin((d_out, d_in)), bias=np.zeros(d_out))
    if tag == "mlp":
        return MlpLayerParams(weight=lin((d_out, d_in)), bias=np.zeros(d_out), norm=norm)
    return SplineMlpLayerParams(weight=lin((d_out, d_in)), bias=np.zeros(d_out),
                                act_coef=coef((n_act, m)), norm=norm)


def build_model(arch: ArchSpec, rng: np.random.Generator) -> Model:
    """Initialize parameters: linear weights ~ U(+-sqrt(1/d_in)), spline
    coefficients ~ N(0, 0.1), spline branch scale 1, biases 0."""
    m = arch.spline.num_basis if arch.spline is not None else 0
    return [_make_layer(*entry, m, rng) for entry in layer_structure(arch)]


def empty_model(arch: ArchSpec) -> Model:
    """Zero-filled model with build_model's exact structure (for counting and
    as a gradient/shape template; not meaningful for training)."""
    m = arch.spline.num_basis if arch.spline is not None else 0
    return [_make_layer(*entry, m, None) for entry in layer_structure(arch)]


def param_arrays(model: Model) -> list[np.ndarray]:
    """Learnable arrays in a fixed order (shared by gradients/optimizers)."""
    out = []
    for p in model:
        if isinstance(p, KanLayerParams):
            out += [p.coef, p.w_spline, p.w_shortcut, p.bias]
        elif isinstance(p, MlpLayerParams):
            out += [p.weight, p.bias]
        elif isinstance(p, SplineMlpLayerParams):
            out += [p.weight, p.bias, p.act_coef]
        else:
            raise ShapeError(f"unknown layer params {type(p)}")
        if getattr(p, "norm", None) is not None:
            out += [p.norm.gain, p.norm.bias]
    return out


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ShapeError(f"expected vector or batch matrix, got ndim={x.ndim}")
    return x, False


# ---------------------------------------------------------------------------
# KAN layer

def kan_layer_forward(p: KanLayerParams, spec: SplineSpec, x, need_input_grad: bool = True):
    """y_j = sum_i [w_spline_ji * spline_ji(x_i) + w_shortcut_ji * SiLU(x_i)] + bias_j."""
    xb, was_vec = _as_batch(x)
    d_out, d_in, m = p.coef.shape
    if xb.shape[1] != d_in:
        raise ShapeError(f"input width {xb.shape[1]} vs layer d_in {d_in}")
    knots = make_knots(spec)
    if need_input_grad and spec.order >= 1:
        basis, dbasis = basis_and_grad(knots, spec.order, xb)
    elif need_input_grad:
        # order-0 indicators are flat almost everywhere
        basis = basis_eval(knots, spec.order, xb)
        dbasis = np.zeros_like(basis)
    else:
        basis, dbasis = basis_eval(knots, spec.order, xb), None
    sig = sigmoid(xb)
    silu = xb * sig
    cmat = p.coef * p.w_spline[:, :, None]
    y = basis.reshape(xb.shape[0], d_in * m) @ cmat.reshape(d_out, d_in * m).T
    y += silu @ p.w_shortcut.T + p.bias
    cache = (xb, basis, dbasis, sig, silu, cmat)
    return (y[0] if was_vec else y), cache


def kan_layer_backward(p: KanLayerParams, spec: SplineSpec, cache, upstream, need_input_grad: bool = True):
    """Gradients for (coef, w_spline, w_shortcut, bias) and, optionally, x."""
    xb, basis, dbasis, sig, silu, cmat = cache
    u, was_vec = _as_batch(upstream)
    d_out, d_in, m = p.coef.shape
    if u.shape != (xb.shape[0], d_out):
        raise ShapeError(f"upstream shape {u.shape} vs ({xb.shape[0]}, {d_out})")
    nflat = basis.reshape(xb.shape[0], d_in * m)
    dcmat = (u.T @ nflat).reshape(d_out, d_in, m)
    grads = KanLayerParams(
        coef=dcmat * p.w_spline[:, :, None],
        w_spline=(dcmat * p.coef).sum(axis=2),
        w_shortcut=u.T @ silu,
        bias=u.sum(axis=0),
    )
    dx = None
    if need_input_grad:
        if dbasis is None:
            raise ShapeError("forward was run with need_input_grad=False")
        dsilu = sig * (1.0 + xb * (1.0 - sig))
        dx = (u @ p.w_shortcut) * dsilu
        proj = (u @ cmat.reshape(d_out, d_in * m)).reshape(xb.shape[0], d_in, m)
        dx += (proj * dbasis).sum(axis=2)
        if was_vec:
            dx = dx[0]
    return grads, dx


# ---------------------------------------------------------------------------
# plain MLP layer

def mlp_layer_forward(p: MlpLayerParams, act: str, nonlinear_first: bool, x):
    """nonlinear_first ? W*act(x)+b : W*x+b (the enclosing model places act)."""
    xb, was_vec = _as_batch(x)
    if xb.shape[1] != p.weight.shape[1]:
        raise ShapeError(f"input width {xb.shape[1]} vs layer d_in {p.weight.shape[1]}")
    a = activation_eval(act, xb) if nonlinear_first else xb
    y = a @ p.weight.T + p.bias
    cache = (xb, a)
    return (y[0] if was_vec else y), cache


def mlp_layer_backward(p: MlpLayerParams, act: str, nonlinear_first: bool, cache, upstream):
    xb, a = cache
    u, was_vec = _as_batch(upstream)
    grads = MlpLayerParams(weight=u.T @ a, bias=u.sum(axis=0))
    da = u @ p.weight
    dx = da * activation_grad(act, xb) if nonlinear_first else da
    return grads, (dx[0] if was_vec else dx)


# ---------------------------------------------------------------------------
# spline-activated MLP layer

def _spline_act(act_coef: np.ndarray, spec: SplineSpec, z: np.ndarray, need_grad: bool):
    """Per-coordinate learnable spline: out[b, i] = sum_m act_coef[i, m] B_m(z[b, i])."""
    knots = make_knots(spec)
    if need_grad and spec.order >= 1:
        basis, dbasis = basis_and_grad(knots, spec.order, z)
    elif need_grad:
        basis = basis_eval(knots, spec.order, z)
        dbasis = np.zeros_like(basis)  # order-0 indicators are flat a.e.
    else:
        basis, dbasis = basis_eval(knots, spec.order, z), None
    s = (basis * act_coef[None, :, :]).sum(axis=2)
    return s, basis, dbasis


def spline_mlp_layer_forward(p: SplineMlpLayerParams, spec: SplineSpec, variant: str, x,
                             need_input_grad: bool = True):
    """variant 'pre': y = W*spline(x)+b; 'post': y = spline(W*x+b)."""
    xb, was_vec = _as_batch(x)
    if xb.shape[1] != p.weight.shape[1]:
        raise ShapeError(f"input width {xb.shape[1]} vs layer d_in {p.weight.shape[1]}")
    if variant == "pre":
        if p.act_coef.shape[0] != p.weight.shape[1]:
            raise ShapeError("pre variant needs one coefficient row per input")
        s, basis, dbasis = _spline_act(p.act_coef, spec, xb, need_input_grad)
        y = s @ p.weight.T + p.bias
        cache = ("pre", xb, s, basis, dbasis)
    elif variant == "post":
        if p.act_coef.shape[0] != p.weight.shape[0]:
            raise ShapeError("post variant needs one coefficient row per output")
        z = xb @ p.weight.T + p.bias
        y, basis, dbasis = _spline_act(p.act_coef, spec, z, True)
        cache = ("post", xb, z, basis, dbasis)
    else:
        raise ConfigError(f"unknown spline-MLP variant {variant!r}")
    return (y[0] if was_vec else y), cache


def spline_mlp_layer_backward(p: SplineMlpLayerParams, spec: SplineSpec, cache, upstream,
                              need_input_grad: bool = True):
    u, was_vec = _as_batch(upstream)
    if cache[0] == "pre":
        _, xb, s, basis, dbasis = cache
        grads = SplineMlpLayerParams(
            weight=u.T @ s,
            bias=u.sum(axis=0),
            act_coef=np.einsum("bi,bim->im", u @ p.weight, basis),
        )
        dx = None
        if need_input_grad:
            if dbasis is None:
                raise ShapeError("forward was run with need_input_grad=False")
            ds = u @ p.weight
            dx = ds * (dbasis * p.act_coef[None, :, :]).sum(axis=2)
    else:
        _, xb, z, basis, dbasis = cache
        dz = u * (dbasis * p.act_coef[None, :, :]).sum(axis=2)
        grads = SplineMlpLayerParams(
            weight=dz.T @ xb,
            bias=dz.sum(axis=0),
            act_coef=np.einsum("bo,bom->om", u, basis),
        )
        dx = dz @ p.weight if need_input_grad else None
    if dx is not None and was_vec:
        dx = dx[0]
    return grads, dx


# ---------------------------------------------------------------------------
# full models

def model_forward(arch: ArchSpec, model: Model, batch: np.ndarray):
    """Sequential stack per ArchSpec; returns (outputs, caches) for backward.

    Layer norm (when enabled) follows each hidden linear output; KAN stacks
    apply their layers directly with no extra activation or normalization.
    """
    x = nncore.as_matrix(batch)
    if x.shape[1] != arch.widths[0]:
        raise ShapeError(f"batch width {x.shape[1]} vs input width {arch.widths[0]}")
    caches = []
    n = arch.num_layers
    for l, p in enumerate(model):
        hidden = l < n - 1
        if arch.kind == "kan":
            x, c = kan_layer_forward(p, arch.spline, x, need_input_grad=(l > 0))
            caches.append(("kan", c, None, None))
        elif arch.kind == "mlp":
            x, c = mlp_layer_forward(p, arch.activation, arch.nonlinear_first, x)
            nc = ac = None
            if p.norm is not None:
                x, nc = layernorm(x, p.norm.gain, p.norm.bias)
            if hidden and not arch.nonlinear_first:
                ac = x
                x = activation_eval(arch.activation, x)
            caches.append(("mlp", c, nc, ac))
        elif arch.kind == "mlp_spline_pre":
            x, c = spline_mlp_layer_forward(p, arch.spline, "pre", x, need_input_grad=(l > 0))
            nc = None
            if p.norm is not None:
                x, nc = layernorm(x, p.norm.gain, p.norm.bias)
            caches.append(("pre", c, nc, None))
        else:  # mlp_spline_post
            if isinstance(p, SplineMlpLayerParams):
                if p.norm is not None:
                    z, c0 = mlp_layer_forward(MlpLayerParams(p.weight, p.bias), "relu", False, x)
                    z, nc = layernorm(z, p.norm.gain, p.norm.bias)
                    s, basis, dbasis = _spline_act(p.act_coef, arch.spline, z, True)
                    x = s
                    caches.append(("post_norm", (c0, z, basis, dbasis), nc, None))
                else:
                    x, c = spline_mlp_layer_forward(p, arch.spline, "post", x)
                    caches.append(("post", c, None, None))
            else:
                x, c = mlp_layer_forward(p, arch.activation, False, x)
                caches.append(("lin", c, None, None))
    return x, caches


def model_backward(arch: ArchSpec, model: Model, caches, upstream) -> Model:
    """Gradients for every layer, walking the caches in reverse."""
    u = np.asarray(upstream, dtype=np.float64)
    grads: Model = [None] * len(model)
    for l in range(len(model) - 1, -1, -1):
        p = model[l]
        tag, c, nc, ac = caches[l]
        need_dx = l > 0
        gnorm = None
        if tag == "kan":
            g, u = kan_layer_backward(p, arch.spline, c, u, need_input_grad=need_dx)
        elif tag == "mlp":
            if ac is not None:
                u = u * activation_grad(arch.activation, ac)
            if nc is not None:
                u, dgain, dbias = layernorm_backward(u, nc)
                gnorm = LayerNormParams(dgain, dbias)
            g, u = mlp_layer_backward(p, arch.activation, arch.nonlinear_first, c, u)
        elif tag == "pre":
            if nc is not None:
                u, dgain, dbias = layernorm_backward(u, nc)
                gnorm = LayerNormParams(dgain, dbias)
            g, u = spline_mlp_layer_backward(p, arch.spline, c, u, need_input_grad=need_dx)
        elif tag == "post":
            g, u = spline_mlp_layer_backward(p, arch.spline, c, u, need_input_grad=need_dx)
        elif tag == "post_norm":
            c0, z, basis, dbasis = c
            dz = u * (dbasis * p.act_coef[None, :, :]).sum(axis=2)
            dact = np.einsum("bo,bom->om", u, basis)
            dz, dgain, dbias = layernorm_backward(dz, nc)
            gnorm = LayerNormParams(dgain, dbias)
            g0, u = mlp_layer_backward(MlpLayerParams(p.weight, p.bias), "relu", False, c0, dz)
            g = SplineMlpLayerParams(weight=g0.weight, bias=g0.bias, act_coef=dact)
        else:  # plain final linear of the post variant
            g, u = mlp_layer_backward(p, arch.activation, False, c, u)
        if gnorm is not None:
            g.norm = gnorm
        grads[l] = g
    return grads
