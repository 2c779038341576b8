"""Dense and GRU building blocks, Adam, and finite-difference verification.

Layers hold their parameters by reference, so the same forward code runs on
plain arrays (inference) or on Tensors (training); see the autodiff module.
Parameters live in a flat name -> float64 ndarray mapping (ParamStore), which
keeps optimization, gradient checking, and serialization trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, ShapeError

GRU_GATE_NAMES = (
    "W_ir", "W_iz", "W_in", "W_hr", "W_hz", "W_hn",
    "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn",
)


class ParamStore(dict):
    """Ordered name -> ndarray map of every trainable array in a model."""

    def __setitem__(self, key, value):
        if not isinstance(key, str):
            raise InvalidInputError(f"parameter name must be str, got {key!r}")
        super().__setitem__(key, np.asarray(value, dtype=np.float64))

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.values())

    def copy_arrays(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.items():
            out[k] = v.copy()
        return out

    def as_tensors(self) -> dict:
        """Fresh Tensor leaves sharing nothing with the stored arrays."""
        return {k: ad.Tensor(v.copy()) for k, v in self.items()}


class DenseLayer:
    """Affine map W x + b with W shaped (out, in)."""

    def __init__(self, W, b):
        Wv, bv = ad.value_of(W), ad.value_of(b)
        if Wv.ndim != 2 or bv.ndim != 1 or Wv.shape[0] != bv.shape[0]:
            raise ShapeError(f"inconsistent dense shapes {Wv.shape}, {bv.shape}")
        self.W, self.b = W, b

    @property
    def n_in(self) -> int:
        return ad.value_of(self.W).shape[1]

    @property
    def n_out(self) -> int:
        return ad.value_of(self.W).shape[0]

    def __call__(self, x):
        return ad.affine(x, self.W, self.b)


class GruCell:
    """Gated recurrent cell.

    Convention (fixed here, used everywhere): reset gate r and update gate u
    are sigmoids of their affine maps; the candidate applies r to the hidden
    *contribution* (r * (W_hn h + b_hn)); the new state is the convex blend
        h' = (1 - u) * h + u * n.
    With all parameters zero this gives h' = h/2.
    """

    def __init__(self, **gates):
        missing = set(GRU_GATE_NAMES) - set(gates)
        if missing:
            raise ShapeError(f"missing GRU parameters: {sorted(missing)}")
        for name in GRU_GATE_NAMES:
            setattr(self, name, gates[name])
        shapes = {n: ad.value_of(gates[n]).shape for n in GRU_GATE_NAMES}
        n_h, n_in = shapes["W_ir"]
        for n in ("W_iz", "W_in"):
            if shapes[n] != (n_h, n_in):
                raise ShapeError(f"{n} shape {shapes[n]} != ({n_h}, {n_in})")
        for n in ("W_hr", "W_hz", "W_hn"):
            if shapes[n] != (n_h, n_h):
                raise ShapeError(f"{n} shape {shapes[n]} != ({n_h}, {n_h})")
        for n in GRU_GATE_NAMES[6:]:
            if shapes[n] != (n_h,):
                raise ShapeError(f"{n} shape {shapes[n]} != ({n_h},)")
        self.n_h, self.n_in = n_h, n_in

    def __call__(self, x, h):
        if ad.value_of(x).shape[-1] != self.n_in:
            raise ShapeError(f"GRU input width {ad.value_of(x).shape[-1]} != {self.n_in}")
        if ad.value_of(h).shape[-1] != self.n_h:
            raise ShapeError(f"GRU hidden width {ad.value_of(h).shape[-1]} != {self.n_h}")
        r = ad.sigmoid(ad.add(ad.affine(x, self.W_ir, self.b_ir),
                              ad.affine(h, self.W_hr, self.b_hr)))
        u = ad.sigmoid(ad.add(ad.affine(x, self.W_iz, self.b_iz),
                              ad.affine(h, self.W_hz, self.b_hz)))
        n = ad.tanh(ad.add(ad.affine(x, self.W_in, self.b_in),
                           ad.mul(r, ad.affine(h, self.W_hn, self.b_hn))))
        return ad.add(ad.mul(ad.sub(1.0, u), h), ad.mul(u, n))


def init_dense(params: ParamStore, name: str, n_in: int, n_out: int,
               rng: np.random.Generator) -> None:
    """U(+-sqrt(1/fan_in)) weights, zero bias."""
    bound = np.sqrt(1.0 / n_in)
    params[f"{name}.W"] = rng.uniform(-bound, bound, size=(n_out, n_in))
    params[f"{name}.b"] = np.zeros(n_out)


def init_gru(params: ParamStore, name: str, n_in: int, n_h: int,
             rng: np.random.Generator) -> None:
    bi, bh = np.sqrt(1.0 / n_in), np.sqrt(1.0 / n_h)
    for gate in ("ir", "iz", "in"):
        params[f"{name}.W_{gate}"] = rng.uniform(-bi, bi, size=(n_h, n_in))
        params[f"{name}.b_{gate}"] = np.zeros(n_h)
    for gate in ("hr", "hz", "hn"):
        params[f"{name}.W_{gate}"] = rng.uniform(-bh, bh, size=(n_h, n_h))
        params[f"{name}.b_{gate}"] = np.zeros(n_h)


def bind_dense(params: dict, name: str) -> DenseLayer:
    return DenseLayer(params[f"{name}.W"], params[f"{name}.b"])


def bind_gru(params: dict, name: str) -> GruCell:
    return GruCell(**{g: params[f"{name}.{g}"] for g in GRU_GATE_NAMES})


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update, in place on the stored arrays.

    A missing or None gradient counts as zero for that array.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class FdReport:
    max_rel_error: float
    passed: bool
    n_checked: int
    worst_param: str = ""


def finite_diff_check(params: ParamStore, loss_fn, tolerance: float = 1e-4,
                      step: float = 1e-5, max_checks: int = 200,
                      rng: np.random.Generator | None = None,
                      corrupt: str | None = None) -> FdReport:
    """Central-difference audit of reverse-mode gradients.

    loss_fn maps a parameter dict (Tensors or arrays) to a scalar. Checks all
    coordinates, or a random subsample of max_checks for large models. The
    error measure is |analytic - numeric| / max(|analytic|, |numeric|, 1), so
    tiny gradients are compared absolutely. ``corrupt`` names a parameter
    whose analytic gradient gets +1 added, as a self-test of the checker.
    """
    leaves = params.as_tensors()
    loss = loss_fn(leaves)
    ad.backward(loss)
    analytic = {}
    for name in params:
        g = leaves[name].grad
        analytic[name] = np.zeros_like(params[name]) if g is None else g
    if corrupt is not None:
        analytic[corrupt] = analytic[corrupt] + 1.0

    coords = [(name, idx) for name, p in params.items() for idx in range(p.size)]
    if len(coords) > max_checks:
        rng = rng if rng is not None else np.random.default_rng(0)
        picked = rng.choice(len(coords), size=max_checks, replace=False)
        coords = [coords[i] for i in picked]

    work = params.copy_arrays()
    worst, worst_param = 0.0, ""
    for name, idx in coords:
        flat = work[name].reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + step
        f_plus = float(ad.value_of(loss_fn(work)))
        flat[idx] = keep - step
        f_minus = float(ad.value_of(loss_fn(work)))
        flat[idx] = keep
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic[name].reshape(-1)[idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
        if err > worst:
            worst, worst_param = err, name
    return FdReport(worst, worst < tolerance, len(coords), worst_param)
