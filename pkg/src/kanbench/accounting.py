"""Parameter and FLOPs accounting.

Two parameter conventions coexist: "paper" mode, the published closed form
(d_in*d_out*(G+K+3) + d_out per KAN layer) used as the budget coordinate for
sweeps, and "exact" mode, the count of scalars this construction actually
stores (G+K coefficients plus the two branch weights per edge, one fewer per
edge than the paper form). The gap is d_in*d_out per layer, constant and
reported, never silently absorbed.

FLOPs convention: arithmetic scalar ops cost 1, boolean ops cost 0; the
order-0 De Boor step is purely boolean so it costs nothing. Fixed-activation
costs are configurable since they are a convention, not a measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .layers import ArchSpec, Model, SplineMlpLayerParams, model_forward, param_arrays

PARAM_MODES = ("paper", "exact")
BUDGET_KINDS = ("params", "flops")


@dataclass(frozen=True)
class FlopsConvention:
    """Per-element costs of the fixed activations; arithmetic=1, boolean=0."""

    relu: float = 0.0
    gelu: float = 9.0
    silu: float = 5.0

    boolean_cost: float = 0.0
    arithmetic_cost: float = 1.0

    def __post_init__(self):
        if min(self.relu, self.gelu, self.silu) < 0:
            raise ConfigError("activation FLOPs must be >= 0")

    def cost(self, activation: str) -> float:
        try:
            return float(getattr(self, activation))
        except AttributeError:
            raise InputError(f"unknown activation {activation!r}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "FlopsConvention":
        unknown = set(d) - {"relu", "gelu", "silu"}
        if unknown:
            raise ConfigError(f"unknown flops table keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class Budget:
    kind: str  # "params" | "flops"
    value: float

    def __post_init__(self):
        if self.kind not in BUDGET_KINDS:
            raise ConfigError(f"unknown budget kind {self.kind!r}")
        if self.value < 0:
            raise ConfigError("budget value must be >= 0")


def _check_dims(d_in: int, d_out: int):
    if d_in < 1 or d_out < 1:
        raise InputError(f"dimensions must be positive, got ({d_in}, {d_out})")


# ---------------------------------------------------------------------------
# closed forms

def params_kan_formula(d_in: int, d_out: int, grid: int, order: int) -> int:
    """Published KAN layer count: (d_in*d_out)*(G+K+3) + d_out."""
    _check_dims(d_in, d_out)
    return d_in * d_out * (grid + order + 3) + d_out


def params_mlp_formula(d_in: int, d_out: int) -> int:
    """Linear layer count: d_in*d_out + d_out."""
    _check_dims(d_in, d_out)
    return d_in * d_out + d_out


def params_introspect(model: Model) -> int:
    """Ground truth: enumerate every learnable scalar actually stored."""
    return int(sum(a.size for a in param_arrays(model)))


def spline_eval_bracket(grid: int, order: int) -> float:
    """Per-spline evaluation cost: De Boor levels plus coefficient contraction.

    Equals the published per-edge bracket 9K(G+1.5K) + 2G - 2.5K - 1.
    """
    return 9.0 * order * (grid + 1.5 * order) + 2.0 * grid - 2.5 * order - 1.0


def flops_spline_branch_formula(d_in: int, d_out: int, grid: int, order: int) -> float:
    """Published spline-branch FLOPs; order 0 is rejected (all-boolean)."""
    _check_dims(d_in, d_out)
    if order < 1:
        raise InputError("order-0 splines are boolean-only; no spline-branch FLOPs")
    return d_in * d_out * spline_eval_bracket(grid, order)


def flops_kan_formula(d_in: int, d_out: int, grid: int, order: int,
                      conv: FlopsConvention) -> float:
    """Total KAN layer FLOPs: f_silu*d_in + E*(9K(G+1.5K) + 2G - 2.5K + 3)."""
    _check_dims(d_in, d_out)
    bracket = 9.0 * order * (grid + 1.5 * order) + 2.0 * grid - 2.5 * order + 3.0
    return conv.silu * d_in + d_in * d_out * bracket


def flops_mlp_formula(d_in: int, d_out: int, conv: FlopsConvention, act: str,
                      nonlinear_first: bool = False) -> float:
    """MLP layer FLOPs: 2*d_in*d_out + f_nl*(d_in if nonlinear-first else d_out)."""
    _check_dims(d_in, d_out)
    f = conv.cost(act)
    return 2.0 * d_in * d_out + f * (d_in if nonlinear_first else d_out)


def flops_diff_identity(d_in: int, d_out: int, grid: int, order: int,
                        conv: FlopsConvention, nonlinear_first: bool = False) -> float:
    """Published KAN-minus-MLP difference; the activation term drops when the
    MLP applies its nonlinearity first."""
    _check_dims(d_in, d_out)
    bracket = 9.0 * order * (grid + 1.5 * order) + 2.0 * grid - 2.5 * order + 1.0
    first = 0.0 if nonlinear_first else conv.silu * (d_in - d_out)
    return first + d_in * d_out * bracket


def layernorm_flops(width: int) -> float:
    """Arithmetic ops of one layer-norm row: mean, center, variance, scale."""
    return 7.0 * width + 2.0


def deboor_flops(grid: int, order: int) -> float:
    """Arithmetic ops of one full De Boor pyramid (order-0 level is boolean)."""
    return float(sum(9 * (grid + 2 * order - k) for k in range(1, order + 1)))


# ---------------------------------------------------------------------------
# architecture-level budgets

def _layer_dims(arch: ArchSpec):
    n = arch.num_layers
    for l in range(n):
        yield l, arch.widths[l], arch.widths[l + 1], l < n - 1


def _layer_params(arch: ArchSpec, l: int, d_in: int, d_out: int, hidden: bool,
                  mode: str) -> float:
    m = arch.spline.num_basis if arch.spline is not None else 0
    norm = 2 * d_out if (arch.use_norm and hidden and arch.kind != "kan") else 0
    if arch.kind == "kan":
        if mode == "paper":
            return params_kan_formula(d_in, d_out, arch.spline.grid_count, arch.spline.order)
        return d_in * d_out * (m + 2) + d_out
    if arch.kind == "mlp":
        return params_mlp_formula(d_in, d_out) + norm
    # hybrids have no published closed form; both modes count stored scalars
    if arch.kind == "mlp_spline_pre":
        return params_mlp_formula(d_in, d_out) + d_in * m + norm
    if hidden:
        return params_mlp_formula(d_in, d_out) + d_out * m + norm
    return params_mlp_formula(d_in, d_out)


def _layer_flops(arch: ArchSpec, l: int, d_in: int, d_out: int, hidden: bool,
                 conv: FlopsConvention) -> float:
    norm = layernorm_flops(d_out) if (arch.use_norm and hidden and arch.kind != "kan") else 0.0
    if arch.kind == "kan":
        return flops_kan_formula(d_in, d_out, arch.spline.grid_count, arch.spline.order, conv)
    if arch.kind == "mlp":
        f = conv.cost(arch.activation)
        if arch.nonlinear_first:
            return 2.0 * d_in * d_out + f * d_in + norm
        return 2.0 * d_in * d_out + (f * d_out if hidden else 0.0) + norm
    bracket = spline_eval_bracket(arch.spline.grid_count, arch.spline.order)
    if arch.kind == "mlp_spline_pre":
        return 2.0 * d_in * d_out + d_in * bracket + norm
    if hidden:
        return 2.0 * d_in * d_out + d_out * bracket + norm
    return 2.0 * d_in * d_out


def budget_of(arch: ArchSpec, kind: str, conv: FlopsConvention | None = None,
              params_mode: str = "paper") -> Budget:
    """Model budget: PARAMS by closed forms (paper or exact mode), FLOPS by
    the published per-layer formulas, summed over the stack."""
    if kind not in BUDGET_KINDS:
        raise ConfigError(f"unknown budget kind {kind!r}")
    if params_mode not in PARAM_MODES:
        raise ConfigError(f"unknown params mode {params_mode!r}")
    if kind == "params":
        total = sum(_layer_params(arch, *dims, params_mode) for dims in _layer_dims(arch))
    else:
        conv = conv or FlopsConvention()
        total = sum(_layer_flops(arch, *dims, conv) for dims in _layer_dims(arch))
    return Budget(kind, float(total))


def layer_param_counts(arch: ArchSpec) -> list[dict]:
    """Per-layer parameter counts in both conventions (for reporting)."""
    return [
        {"layer": l, "d_in": d_in, "d_out": d_out,
         "paper": _layer_params(arch, l, d_in, d_out, hidden, "paper"),
         "exact": _layer_params(arch, l, d_in, d_out, hidden, "exact")}
        for l, d_in, d_out, hidden in _layer_dims(arch)
    ]


def layer_flop_counts(arch: ArchSpec, conv: FlopsConvention) -> list[dict]:
    """Per-layer closed-form FLOPs (for reporting)."""
    return [
        {"layer": l, "d_in": d_in, "d_out": d_out,
         "flops": _layer_flops(arch, l, d_in, d_out, hidden, conv)}
        for l, d_in, d_out, hidden in _layer_dims(arch)
    ]


def width_for_budget(kind: str, d_in: int, d_out: int, n_hidden: int, target: float,
                     **arch_kwargs) -> int:
    """Hidden width (uniform across hidden layers) whose paper-mode parameter
    count is nearest the target. Used to build budget-matched pairs."""
    if n_hidden < 1:
        raise ConfigError("need at least one hidden layer")

    def params_at(h: int) -> float:
        arch = ArchSpec(kind=kind, widths=(d_in, *([h] * n_hidden), d_out), **arch_kwargs)
        return budget_of(arch, "params").value

    lo, hi = 1, 2
    while params_at(hi) < target and hi < 1 << 20:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if params_at(mid) < target:
            lo = mid
        else:
            hi = mid
    return min((lo, hi), key=lambda h: (abs(params_at(h) - target), h))


# ---------------------------------------------------------------------------
# instrumented counter

class _Tally:
    __slots__ = ("total",)

    def __init__(self):
        self.total = 0.0

    def add(self, n: float):
        self.total += n


def instrumented_forward(model: Model, arch: ArchSpec, conv: FlopsConvention,
                         probe: np.ndarray):
    """One-sample forward pass that also tallies every arithmetic scalar op.

    Counts reflect this implementation: the De Boor pyramid is evaluated once
    per input element and shared across outputs, so KAN counts differ from the
    published per-edge closed form whenever d_out > 1 (the closed form remains
    the budgeting contract; this counter is a diagnostic). Returns (y, flops).
    """
    x = np.asarray(probe, dtype=np.float64).reshape(1, -1)
    t = _Tally()
    g = arch.spline.grid_count if arch.spline is not None else 0
    k = arch.spline.order if arch.spline is not None else 0
    m = g + k
    for (l, d_in, d_out, hidden), p in zip(_layer_dims(arch), model):
        e = d_in * d_out
        norm_here = arch.use_norm and hidden and arch.kind != "kan"
        if arch.kind == "kan":
            t.add(conv.silu * d_in)                # shortcut activation
            t.add(deboor_flops(g, k) * d_in)       # shared basis per input
            t.add(e * (2 * m + 3))                 # contraction, scales, merge, reduce
        elif arch.kind == "mlp":
            f = conv.cost(arch.activation)
            if arch.nonlinear_first:
                t.add(f * d_in)
            t.add(2.0 * e)                          # matmul + bias
            if norm_here:
                t.add(layernorm_flops(d_out))
            if hidden and not arch.nonlinear_first:
                t.add(f * d_out)
        elif arch.kind == "mlp_spline_pre":
            t.add((deboor_flops(g, k) + 2 * m - 1) * d_in)
            t.add(2.0 * e)
            if norm_here:
                t.add(layernorm_flops(d_out))
        else:  # mlp_spline_post
            t.add(2.0 * e)
            if norm_here:
                t.add(layernorm_flops(d_out))
            if isinstance(p, SplineMlpLayerParams):
                t.add((deboor_flops(g, k) + 2 * m - 1) * d_out)
    y, _ = model_forward(arch, model, x)
    return y[0], t.total


def flops_measured(model: Model, arch: ArchSpec, conv: FlopsConvention,
                   probe: np.ndarray) -> float:
    """Instrumented per-sample FLOP count of this implementation's forward."""
    return instrumented_forward(model, arch, conv, probe)[1]
