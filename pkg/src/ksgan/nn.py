"""Fully connected networks, Adam, and spectral normalisation."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Var

ACTIVATIONS = ("relu", "leaky_relu")


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden_dims: tuple[int, ...]
    out_dim: int
    activation: str = "relu"
    leaky_slope: float = 0.2
    bias: bool = True
    spectral_norm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min((self.in_dim, self.out_dim) + self.hidden_dims) < 1:
            raise ValueError(f"all layer widths must be >= 1, got {self.dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.in_dim, *self.hidden_dims, self.out_dim)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1


def generator_spec(latent_dim=8, hidden=(512, 512, 512), out_dim=2) -> MlpSpec:
    return MlpSpec(latent_dim, tuple(hidden), out_dim, activation="relu")


def critic_spec(in_dim=2, hidden=(512, 512, 512), spectral_norm=False) -> MlpSpec:
    return MlpSpec(in_dim, tuple(hidden), 1, activation="leaky_relu",
                   leaky_slope=0.2, spectral_norm=spectral_norm)


@dataclass
class ParamStore:
    """Named parameters plus Adam moments and spectral-norm vectors.

    Weights are stored as ``(fan_in, fan_out)`` and applied as ``x @ W``.
    """
    params: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    sn_u: dict[str, np.ndarray] = field(default_factory=dict)

    def as_vars(self) -> dict[str, Var]:
        """Fresh leaf variables for one optimisation step."""
        return {k: Var(v, requires_grad=True) for k, v in self.params.items()}

    def copy(self) -> ParamStore:
        return copy.deepcopy(self)

    def norm(self) -> float:
        return float(np.sqrt(np.sum([np.sum(np.square(v)) for v in self.params.values()])))

    def __eq__(self, other):
        if not isinstance(other, ParamStore) or self.step != other.step:
            return False
        for a, b in ((self.params, other.params), (self.adam_m, other.adam_m),
                     (self.adam_v, other.adam_v), (self.sn_u, other.sn_u)):
            if a.keys() != b.keys() or any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True


def init(spec: MlpSpec, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    for i, (fan_in, fan_out) in enumerate(zip(spec.dims[:-1], spec.dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        store.params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if spec.bias:
            store.params[f"b{i}"] = rng.uniform(-bound, bound, size=(fan_out,))
        if spec.spectral_norm:
            u = rng.standard_normal(fan_out)
            store.sn_u[f"W{i}"] = u / np.linalg.norm(u)
    for k, v in store.params.items():
        store.adam_m[k] = np.zeros_like(v)
        store.adam_v[k] = np.zeros_like(v)
    return store


def _normalize(x: np.ndarray) -> np.ndarray:
    return x / max(np.linalg.norm(x), 1e-12)


def power_iteration(w: np.ndarray, u: np.ndarray, n_iter: int = 1):
    """Refine the right singular vector estimate ``u`` of ``w``; return (u, v, sigma)."""
    for _ in range(n_iter):
        v = _normalize(w @ u)
        u = _normalize(w.T @ v)
    return u, v, float(v @ w @ u)


def spectral_normalize(w: Var, u: np.ndarray) -> tuple[Var, np.ndarray]:
    """One power-iteration step; returns ``w / sigma`` and the updated ``u``.

    Gradient flows through ``sigma = v^T W u`` with ``u, v`` held constant.
    """
    u, v, _ = power_iteration(w.value, u)
    sigma = ad.sum(ad.mul(w, np.outer(v, u)))
    return ad.div(w, sigma), u


def forward(store: ParamStore, spec: MlpSpec, x, params: dict[str, Var] | None = None) -> Var:
    """Apply the network to a batch ``x`` of shape ``(n, in_dim)``.

    ``params`` supplies differentiable leaves (see :meth:`ParamStore.as_vars`);
    without it the stored arrays are used as constants.  With spectral norm on,
    each call advances the stored power-iteration vectors by one step.
    """
    x = ad.as_var(x)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"forward: expected input (n, {spec.in_dim}), got {x.shape}")
    h = x
    for i in range(spec.n_layers):
        name = f"W{i}"
        w = params[name] if params is not None else Var(store.params[name])
        if spec.spectral_norm:
            w, store.sn_u[name] = spectral_normalize(w, store.sn_u[name])
        h = ad.matmul(h, w)
        if spec.bias:
            b = params[f"b{i}"] if params is not None else Var(store.params[f"b{i}"])
            h = ad.add(h, b)
        if i < spec.n_layers - 1:
            if spec.activation == "relu":
                h = ad.relu(h)
            else:
                h = ad.leaky_relu(h, spec.leaky_slope)
    return h


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float = 1e-4,
              beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8) -> None:
    """Bias-corrected Adam, in place."""
    unknown = set(grads) - set(store.params)
    if unknown:
        raise KeyError(f"adam_step: unknown parameters {sorted(unknown)}")
    for k, g in grads.items():
        if np.shape(g) != store.params[k].shape:
            raise ShapeError(f"adam_step: gradient for {k!r} has shape {np.shape(g)}, "
                             f"parameter has shape {store.params[k].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m, v = store.adam_m[k], store.adam_v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        store.params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
