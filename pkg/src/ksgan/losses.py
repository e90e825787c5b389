"""Training objectives and the plug-in Generalized KS estimator.

A critic ``c`` defines nested sublevel sets ``{x : c(x) <= lam}``.  The
coverage gap at level ``lam`` is the difference between the fractions of two
batches falling inside that set; the negated critic gives the complementary
family ``{x : c(x) >= lam}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Var

MODES = ("max", "mean")


@dataclass
class GeneratorLossParts:
    loss_f: Var
    loss_g: Var
    total: Var
    argmax_lambda_f: float | None = None
    argmax_lambda_g: float | None = None


def level_grid(c_f, c_g) -> np.ndarray:
    """Sorted union of critic values on both batches."""
    return np.sort(np.concatenate([np.ravel(ad.as_var(c_f).value), np.ravel(ad.as_var(c_g).value)]))


def _coverage(c: Var, lam: np.ndarray, indicator: str, tau: float, clip) -> Var:
    """Fraction of ``c`` at or below each level, shape ``(len(lam),)``."""
    col = ad.reshape(c, (c.size, 1))
    row = lam[None, :]
    if indicator == "smooth":
        ind = ad.indicator_smooth(col, row, tau)
    else:
        ind = ad.indicator_ste(col, row, clip)
    return ad.mean(ind, axis=0)


def _one_side(c_f: Var, c_g: Var, lam: np.ndarray, mode: str, indicator, tau, clip,
              last: bool = False):
    """Aggregate |cov_G - cov_F| over ``lam``; in max mode return the winning level too."""
    if mode == "max":
        # locate the maximiser on plain arrays, then build the graph at that level only
        cf = np.sort(c_f.value.ravel())
        cg = np.sort(c_g.value.ravel())
        kf = np.searchsorted(cf, lam, side="right")
        kg = np.searchsorted(cg, lam, side="right")
        gap = np.abs(kg * cf.size - kf * cg.size)
        # lam is ascending; ``last`` picks the final maximiser instead of the first
        j = len(gap) - 1 - int(np.argmax(gap[::-1])) if last else int(np.argmax(gap))
        at = lam[j:j + 1]
        diff = ad.sub(_coverage(c_g, at, indicator, tau, clip), _coverage(c_f, at, indicator, tau, clip))
        return ad.sum(ad.abs(diff)), float(lam[j])
    diff = ad.sub(_coverage(c_g, lam, indicator, tau, clip), _coverage(c_f, lam, indicator, tau, clip))
    return ad.mean(ad.abs(diff)), None


def generator_loss(c_f, c_g, mode: str = "mean", indicator: str = "ste", tau: float = 0.1,
                   ste_clip: float | None = None, levels: np.ndarray | None = None) -> GeneratorLossParts:
    """Generator objective: coverage gaps under both critic orientations, summed.

    ``c_f`` / ``c_g`` are critic values on target and generated batches.  Levels
    are the (detached) union of both; pass ``levels`` to pin them explicitly.
    ``indicator="smooth"`` swaps the straight-through indicator for a sigmoid
    of temperature ``tau``.
    """
    c_f, c_g = ad.as_var(c_f), ad.as_var(c_g)
    if c_f.size == 0 or c_g.size == 0:
        raise ValueError("generator_loss: both batches must be nonempty")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    c_f = ad.reshape(c_f, (c_f.size,))
    c_g = ad.reshape(c_g, (c_g.size,))
    lam = level_grid(c_f, c_g) if levels is None else np.sort(np.ravel(levels))

    loss_f, arg_f = _one_side(c_f, c_g, lam, mode, indicator, tau, ste_clip)
    # negated orientation: {-c <= -lam}; ascending in -lam means descending lam
    neg_lam = -lam[::-1]
    loss_g, arg_g = _one_side(ad.neg(c_f), ad.neg(c_g), neg_lam, mode, indicator, tau, ste_clip,
                              last=True)
    if arg_g is not None:
        arg_g = -arg_g
    return GeneratorLossParts(loss_f, loss_g, ad.add(loss_f, loss_g), arg_f, arg_g)


def critic_loss(c_f, c_g) -> Var:
    """``mean(c_G) - mean(c_F)``; the critic maximises this."""
    return ad.sub(ad.mean(c_g), ad.mean(c_f))


Critic = Callable[[Var], Var]


def critic_with_input_grads(critic: Critic, x_f, x_g):
    """Critic values on both batches plus per-point input gradients (recorded).

    Both batches go through a single forward pass.  Returns
    ``(c_f, c_g, grad_f, grad_g)`` where the gradients are differentiable
    with respect to the critic parameters.
    """
    x_f = np.asarray(ad.as_var(x_f).value)
    x_g = np.asarray(ad.as_var(x_g).value)
    n_f = len(x_f)
    x = Var(np.concatenate([x_f, x_g]), requires_grad=True)
    c = ad.reshape(critic(x), (len(x),))
    (gx,) = ad.grad(ad.sum(c), [x], create_graph=True)
    return c[:n_f], c[n_f:], gx[:n_f], gx[n_f:]


def score_penalty(critic: Critic, x_f, x_g) -> Var:
    """Mean squared input-gradient norm on the generated batch plus the same on the target batch."""
    _, _, g_f, g_g = critic_with_input_grads(critic, x_f, x_g)
    return penalty_from_grads(g_f, g_g)


def penalty_from_grads(g_f: Var, g_g: Var) -> Var:
    return ad.add(ad.mean(ad.l2_norm_sq(g_g, axis=1)), ad.mean(ad.l2_norm_sq(g_f, axis=1)))


def gan_losses(d_f, d_g, flip: bool = False) -> tuple[Var, Var]:
    """Logistic GAN losses on pre-sigmoid outputs.

    Returns ``(discriminator_loss, generator_loss)``.  By default targets are
    labelled 1 and generated samples 0; ``flip`` swaps the labels.  The
    generator loss is the non-saturating one.
    """
    d_f, d_g = ad.as_var(d_f), ad.as_var(d_g)
    s = -1.0 if flip else 1.0
    # -log sigmoid(t) = softplus(-t), -log(1 - sigmoid(t)) = softplus(t)
    disc = ad.add(ad.mean(ad.softplus(ad.mul(d_f, -s))), ad.mean(ad.softplus(ad.mul(d_g, s))))
    gen = ad.mean(ad.softplus(ad.mul(d_g, -s)))
    return disc, gen


def wgan_gp_losses(critic: Critic, x_f, x_g, gp_weight: float, rng: np.random.Generator,
                   eps: np.ndarray | None = None) -> tuple[Var, Var]:
    """WGAN-GP ``(critic_loss, generator_loss)``.

    ``x_g`` may be a ``Var`` carrying the generator graph; the interpolates are
    built from its values.  Unequal batches are paired by resampling the
    generated batch.
    """
    x_f_val = ad.as_var(x_f).value
    x_g = ad.as_var(x_g)
    n_f = len(x_f_val)
    x_g_pair = x_g.value
    if len(x_g_pair) != n_f:
        x_g_pair = x_g_pair[rng.integers(0, len(x_g_pair), size=n_f)]
    if eps is None:
        eps = rng.uniform(size=(n_f, 1))
    eps = np.asarray(eps, dtype=np.float64).reshape(n_f, 1)
    # eps = 0 lands on the target batch, eps = 1 on the generated one
    x_hat = Var((1 - eps) * x_f_val + eps * x_g_pair, requires_grad=True)
    c_hat = critic(x_hat)
    (g,) = ad.grad(ad.sum(c_hat), [x_hat], create_graph=True)
    norm = ad.sqrt(ad.add(ad.l2_norm_sq(g, axis=1), 1e-12))
    gp = ad.mean(ad.square(ad.sub(norm, 1.0)))

    c = ad.reshape(critic(ad.concat([Var(x_f_val), x_g])), (n_f + len(x_g),))
    c_f, c_g = c[:n_f], c[n_f:]
    return ad.add(critic_loss(c_f, c_g), ad.mul(gp, gp_weight)), ad.neg(ad.mean(c_g))


# ---------------------------------------------------------------------------
# evaluation-only estimator


@dataclass(frozen=True)
class GksResult:
    value: float
    lam: float
    orientation: str  # "sublevel" ({c <= lam}) or "superlevel" ({c >= lam})
    count_f: int
    count_g: int
    n_f: int
    n_g: int

    @property
    def exact(self):
        """The estimate as an exact fraction."""
        from fractions import Fraction
        return abs(Fraction(self.count_f, self.n_f) - Fraction(self.count_g, self.n_g))


def _best_level(cf: np.ndarray, cg: np.ndarray, lam: np.ndarray, side: str):
    """Max integer-scaled gap over ``lam`` for ``{c <= lam}`` (side='right') or ``{c >= lam}``."""
    if side == "right":
        kf = np.searchsorted(cf, lam, side="right")
        kg = np.searchsorted(cg, lam, side="right")
    else:
        kf = cf.size - np.searchsorted(cf, lam, side="left")
        kg = cg.size - np.searchsorted(cg, lam, side="left")
    gap = np.abs(kf * cg.size - kg * cf.size)
    j = int(np.argmax(gap))
    return int(gap[j]), j, int(kf[j]), int(kg[j])


def gks_from_values(c_f, c_g) -> GksResult:
    """Plug-in Generalized KS distance from critic values on two samples.

    The supremum over both set families is exact: the coverage gaps are step
    functions whose extrema sit on sample values.
    """
    cf = np.sort(np.ravel(c_f))
    cg = np.sort(np.ravel(c_g))
    if cf.size == 0 or cg.size == 0:
        raise ValueError("gks: both samples must be nonempty")
    lam = np.concatenate([cf, cg])
    lam.sort()
    best = None
    for orient, side in (("sublevel", "right"), ("superlevel", "left")):
        gap, j, kf, kg = _best_level(cf, cg, lam, side)
        if best is None or gap > best[0]:
            best = (gap, orient, float(lam[j]), kf, kg)
    gap, orient, lam_star, kf, kg = best
    return GksResult(gap / (cf.size * cg.size), lam_star, orient, kf, kg, cf.size, cg.size)


def _critic_values(critic, points) -> np.ndarray:
    pts = getattr(points, "points", points)
    out = critic(np.asarray(pts, dtype=np.float64))
    return np.ravel(ad.as_var(out).value)


def gks_estimate(points_f, points_g, critic) -> GksResult:
    """Plug-in Generalized KS distance between two sample sets under ``critic``.

    ``critic`` maps an ``(n, d)`` array to ``n`` values (arrays or ``Var``).
    """
    pf = np.asarray(getattr(points_f, "points", points_f))
    pg = np.asarray(getattr(points_g, "points", points_g))
    if pf.ndim == 2 and pg.ndim == 2 and pf.shape[1] != pg.shape[1]:
        raise ValueError(f"dimension mismatch: {pf.shape[1]} vs {pg.shape[1]}")
    with ad.no_grad():
        return gks_from_values(_critic_values(critic, pf), _critic_values(critic, pg))


def chi_gaussian_discrepancies(x_f, x_g) -> tuple[float, float]:
    """Coverage discrepancies for the half-normal (F) / normal (G) pair.

    ``one_sided``: sup over G's minimum-volume sets (centred intervals, critic
    ``|x|``) of the gap in coverage.  ``symmetric``: sup over both families,
    adding F's minimum-volume sets ``[0, q]`` (critic ``x`` on the half-line,
    ``+inf`` elsewhere).
    """
    x_f = np.ravel(x_f)
    x_g = np.ravel(x_g)
    one_sided = _sublevel_sup(np.abs(x_f), np.abs(x_g))
    half_line = lambda x: np.where(x >= 0, x, np.inf)  # noqa: E731
    f_sets = _sublevel_sup(half_line(x_f), half_line(x_g))
    return one_sided, max(one_sided, f_sets)


def _sublevel_sup(cf: np.ndarray, cg: np.ndarray) -> float:
    cf, cg = np.sort(cf), np.sort(cg)
    lam = np.sort(np.concatenate([cf, cg]))
    gap, *_ = _best_level(cf, cg, lam, "right")
    return gap / (cf.size * cg.size)
