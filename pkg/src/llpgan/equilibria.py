"""Exact equilibrium theory on finite (tabular) worlds.

A :class:`TabularWorld` is a discrete data space: per-bag densities over a
finite support, per-bag class priors, and optionally a generator density.
On such worlds the adversarial game's best responses have closed forms, and
the same objective can be maximized numerically by projected ascent over
per-point probability rows. The two routes are kept independent so each
verifies the other.

All expectations are finite sums; nothing here samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    UndefinedPointError,
)

DENSITY_ATOL = 1e-9


def _check_rows(arr, name, atol=DENSITY_ATOL):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    if np.any(arr < -atol):
        raise ConfigurationError(f"{name} has negative entries")
    if np.any(np.abs(arr.sum(axis=1) - 1.0) > atol):
        raise ConfigurationError(f"{name} rows must sum to 1 within {atol}")
    return np.clip(arr, 0.0, None)


def _xlogy(coeff, values):
    """Elementwise coeff*log(values) with 0*log(anything) = 0.

    Where coeff > 0 and values <= 0 the result is -inf, matching the limit
    of the objective rather than raising.
    """
    coeff = np.atleast_1d(np.asarray(coeff, dtype=np.float64))
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    coeff, values = np.broadcast_arrays(coeff, values)
    out = np.zeros(coeff.shape)
    ok = (coeff > 0) & (values > 0)
    out[ok] = coeff[ok] * np.log(values[ok])
    out[(coeff > 0) & (values <= 0)] = -np.inf
    return out


@dataclass(frozen=True)
class TabularWorld:
    """Finite support, per-bag densities p_d^i, priors p_i(y), optional p_g."""

    bag_densities: np.ndarray
    priors: np.ndarray
    generator_density: np.ndarray | None = None

    def __post_init__(self):
        densities = _check_rows(self.bag_densities, "bag densities")
        priors = _check_rows(self.priors, "priors")
        if densities.shape[0] != priors.shape[0]:
            raise ConfigurationError(
                f"{densities.shape[0]} density rows vs {priors.shape[0]} prior rows"
            )
        if priors.shape[1] < 2:
            raise ConfigurationError("a world needs at least two classes")
        object.__setattr__(self, "bag_densities", densities)
        object.__setattr__(self, "priors", priors)
        if self.generator_density is not None:
            gen = np.asarray(self.generator_density, dtype=np.float64)
            if gen.shape != (densities.shape[1],):
                raise ConfigurationError("generator density length differs from support size")
            gen = _check_rows(gen[None, :], "generator density")[0]
            object.__setattr__(self, "generator_density", gen)

    @property
    def support_size(self):
        return self.bag_densities.shape[1]

    @property
    def n_bags(self):
        return self.bag_densities.shape[0]

    @property
    def k(self):
        return self.priors.shape[1]

    @property
    def mixture_density(self):
        """Unnormalized p_d = sum of the bag densities (total mass n)."""
        return self.bag_densities.sum(axis=0)

    def with_generator(self, generator_density) -> "TabularWorld":
        return TabularWorld(self.bag_densities, self.priors, generator_density)

    def to_dict(self):
        data = {
            "support_size": self.support_size,
            "n": self.n_bags,
            "k": self.k,
            "bag_densities": self.bag_densities.tolist(),
            "priors": self.priors.tolist(),
        }
        if self.generator_density is not None:
            data["generator_density"] = self.generator_density.tolist()
        return data


@dataclass(frozen=True)
class TabularDiscriminator:
    """Per-point (K+1)-way probability rows, the last entry being the fake class."""

    rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", _check_rows(self.rows, "discriminator rows"))


def save_world(world: TabularWorld, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world.to_dict(), fh, sort_keys=True, indent=1)


def load_world(path) -> TabularWorld:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for key in ("support_size", "n", "k", "bag_densities", "priors"):
        if key not in data:
            raise ConfigurationError(f"world file missing field {key!r}")
    world = TabularWorld(
        bag_densities=np.asarray(data["bag_densities"], dtype=np.float64),
        priors=np.asarray(data["priors"], dtype=np.float64),
        generator_density=(
            np.asarray(data["generator_density"], dtype=np.float64)
            if data.get("generator_density") is not None
            else None
        ),
    )
    declared = (data["n"], data["support_size"], data["k"])
    actual = (world.n_bags, world.support_size, world.k)
    if declared != actual:
        raise ConfigurationError(f"world file declares (n, S, K)={declared}, data has {actual}")
    return world


def random_world(rng, support_size, n_bags, k, with_generator=True) -> TabularWorld:
    """Dirichlet-sampled world; densities are strictly positive almost surely."""
    return TabularWorld(
        bag_densities=rng.dirichlet(np.ones(support_size), size=n_bags),
        priors=rng.dirichlet(np.ones(k), size=n_bags),
        generator_density=rng.dirichlet(np.ones(support_size)) if with_generator else None,
    )


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def _generator_density(world, override):
    if override is not None:
        pg = np.asarray(override, dtype=np.float64)
        if pg.shape != (world.support_size,):
            raise ConfigurationError("generator density length differs from support size")
        if np.any(pg < 0) or not np.all(np.isfinite(pg)):
            raise ConfigurationError("generator density must be finite and non-negative")
        return pg
    if world.generator_density is None:
        raise ConfigurationError("world has no generator density")
    return world.generator_density


def optimal_discriminator_closed_form(world, generator_density=None) -> TabularDiscriminator:
    """Best-response discriminator for a fixed generator.

    Class entry k at point x is sum_i p_i(k) p_d^i(x) divided by the total
    real-plus-fake mass at x; the fake entry fills the simplex remainder.
    Points carrying no mass at all get the uniform row by convention.
    """
    pg = _generator_density(world, generator_density)
    class_mass = world.priors.T @ world.bag_densities  # (K, S)
    total = world.mixture_density + pg
    rows = np.empty((world.support_size, world.k + 1))
    alive = total > 0
    safe_total = np.where(alive, total, 1.0)
    rows[:, :-1] = (class_mass / safe_total[None, :]).T
    rows[:, -1] = pg / safe_total
    rows[~alive] = 1.0 / (world.k + 1)
    return TabularDiscriminator(rows)


def classifier_posterior_and_weights(world, points=None):
    """Final classifier: per-point weighted aggregation of bag priors.

    Returns ``(posteriors, weights)`` where ``weights[x, i]`` is bag i's
    share of the real mass at x and ``posteriors = weights @ priors``.
    Independent of any generator density.
    """
    md = world.mixture_density
    idx = np.arange(world.support_size) if points is None else np.asarray(points)
    dead = idx[md[idx] <= 0.0]
    if dead.size:
        raise UndefinedPointError(
            f"points {dead.tolist()} carry zero real mass; the classifier is undefined there"
        )
    weights = (world.bag_densities[:, idx] / md[idx][None, :]).T  # (len(idx), n)
    posteriors = weights @ world.priors
    return posteriors, weights


def optimal_generator(world) -> np.ndarray:
    """The uniform mixture of the bag densities, the game's optimal p_g."""
    return world.mixture_density / world.n_bags


# ---------------------------------------------------------------------------
# The objective, literally
# ---------------------------------------------------------------------------


def objective_value(world, disc: TabularDiscriminator, generator_density=None) -> float:
    """The discriminator objective with the Jensen-substituted supervised term.

    Three addends, each an exact finite sum: per-bag expected log real mass,
    expected log fake probability under the generator, and the prior-weighted
    expected log of the normalized class posteriors.
    """
    pg = _generator_density(world, generator_density)
    rows = disc.rows
    real_mass = 1.0 - rows[:, -1]
    term_real = _xlogy(world.bag_densities, real_mass[None, :]).sum()
    term_fake = _xlogy(pg, rows[:, -1]).sum()
    coeff = np.einsum("ik,is->sk", world.priors, world.bag_densities)
    term_class = _xlogy(coeff, rows[:, :-1]).sum()
    total = term_real + term_fake + term_class
    if not np.isfinite(total):
        return float("-inf")
    # the normalization's -log(real mass) shares its coefficient with term_real,
    # so it is finite whenever the guarded sum above is
    return float(total - _xlogy(coeff.sum(axis=1), real_mass).sum())


def generator_objective(world, generator_density) -> float:
    """C(G): the objective at the best-response discriminator for this p_g."""
    best = optimal_discriminator_closed_form(world, generator_density)
    return objective_value(world, best, generator_density)


# ---------------------------------------------------------------------------
# Numeric best responses
# ---------------------------------------------------------------------------


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ind = np.arange(1, len(v) + 1)
    cond = u + (1.0 - css) / ind > 0
    rho = ind[cond][-1]
    theta = (1.0 - css[rho - 1]) / rho
    return np.maximum(v + theta, 0.0)


def _point_objective(q, a, md, pg):
    """The objective's addends restricted to one support point."""
    real_mass = 1.0 - q[-1]
    val = _xlogy(md, real_mass).sum()
    val += _xlogy(pg, q[-1]).sum()
    val += _xlogy(a, q[:-1]).sum()
    if not np.isfinite(val):
        return float("-inf")
    return float(val - _xlogy(a.sum(), real_mass).sum())


def _point_gradient(q, a, md, pg):
    """Termwise derivative of the per-point objective; zero-coefficient terms drop."""
    g = np.zeros_like(q)
    real_mass = 1.0 - q[-1]
    with np.errstate(divide="ignore"):
        g[:-1] = np.where(a > 0, a / np.where(q[:-1] > 0, q[:-1], np.inf), 0.0)
        if a.sum() > 0 or md > 0:
            inv_real = 1.0 / real_mass if real_mass > 0 else np.inf
            g[-1] += (a.sum() - md) * inv_real
        if pg > 0:
            g[-1] += pg / q[-1] if q[-1] > 0 else np.inf
    return np.clip(np.nan_to_num(g, nan=0.0, posinf=1e12, neginf=-1e12), -1e12, 1e12)


def _point_curvature(q, a, md, pg):
    """Diagonal of the per-point Hessian, summed termwise like the objective."""
    h = np.zeros_like(q)
    real_mass = 1.0 - q[-1]
    with np.errstate(divide="ignore"):
        h[:-1] = np.where(a > 0, -a / np.square(np.where(q[:-1] > 0, q[:-1], np.inf)), 0.0)
        if real_mass > 0:
            h[-1] += (a.sum() - md) / real_mass**2
        if pg > 0 and q[-1] > 0:
            h[-1] -= pg / q[-1] ** 2
    return np.clip(np.nan_to_num(h, nan=0.0, posinf=1e12, neginf=-1e12), -1e12, 1e12)


def _residual(q, g, probe=1e-3):
    """Scaled projected-gradient norm: how far an ascent probe actually moves."""
    return float(np.linalg.norm(project_simplex(q + probe * g) - q) / probe)


def _newton_polish(q, a, md, pg, tol, max_iter=200):
    """Equality-constrained Newton steps on the optimal face.

    Coordinates whose objective coefficient is zero belong at zero (any mass
    there starves a log term with positive weight), so the face is fixed and
    each step solves the tangent Newton system from the literal gradient and
    curvature. Quadratic convergence takes the residual to tolerance.
    """
    coeff = np.append(a, pg)
    support = coeff > 0
    if not support.any():
        return q, _residual(q, _point_gradient(q, a, md, pg))
    q = q.copy()
    q[~support] = 0.0
    if q[support].sum() <= 0:
        q[support] = 1.0
    q[support] /= q[support].sum()
    if support.sum() == 1:
        return q, _residual(q, _point_gradient(q, a, md, pg))
    fq = _point_objective(q, a, md, pg)
    for _ in range(max_iter):
        g = _point_gradient(q, a, md, pg)
        res = _residual(q, g)
        if res <= tol:
            return q, res
        h = _point_curvature(q, a, md, pg)
        hs = np.minimum(h[support], -1e-12)
        gs = g[support]
        nu = (gs / hs).sum() / (1.0 / hs).sum()
        direction = np.zeros_like(q)
        direction[support] = (nu - gs) / hs
        t = 1.0
        stepped = False
        for _ in range(60):
            cand = q + t * direction
            if np.all(cand[support] > 0):
                fc = _point_objective(cand, a, md, pg)
                if fc >= fq - 1e-12 * abs(fq):
                    q, fq = cand, fc
                    stepped = True
                    break
            t *= 0.5
        if not stepped:
            break
    return q, _residual(q, _point_gradient(q, a, md, pg))


def _ascend_point(a, md, pg, q0, tol, max_iter):
    """Projected gradient ascent with backtracking, then Newton polish."""
    q = project_simplex(np.asarray(q0, dtype=np.float64))
    fq = _point_objective(q, a, md, pg)
    eta = 0.1
    best_q, best_res = q, math.inf
    coarse_tol = max(tol, 1e-5)
    for _ in range(max_iter):
        g = _point_gradient(q, a, md, pg)
        res = _residual(q, g)
        if res < best_res:
            best_q, best_res = q.copy(), res
        if res <= coarse_tol:
            break
        cand = project_simplex(q + eta * g)
        fc = _point_objective(cand, a, md, pg)
        if fc >= fq:
            q, fq = cand, fc
            eta *= 1.5
        else:
            eta *= 0.5
            if eta < 1e-14:
                break
    q, res = _newton_polish(best_q if best_res < math.inf else q, a, md, pg, tol)
    if res <= tol:
        return q, res
    raise ConvergenceError(
        f"projected ascent stalled at residual {res:.3e} (tol {tol:.1e})",
        best=q,
        residual=res,
    )


def numeric_best_response(
    world, tol=1e-8, restarts=5, max_iter=20_000, seed=0, generator_density=None
) -> TabularDiscriminator:
    """Maximize the discriminator objective directly over per-point simplex rows.

    Projected-gradient ascent from a uniform start plus random restarts; the
    brute-force counterpart of the closed form. Raises
    :class:`ConvergenceError` (best iterate attached) if the
    projected-gradient residual never reaches ``tol``.
    """
    pg = _generator_density(world, generator_density)
    coeff_class = np.einsum("ik,is->sk", world.priors, world.bag_densities)
    md = world.mixture_density
    rng = np.random.default_rng(seed)
    dim = world.k + 1
    rows = np.empty((world.support_size, dim))
    for s in range(world.support_size):
        a = coeff_class[s]
        if md[s] + pg[s] <= 0:
            rows[s] = 1.0 / dim  # no mass: any row is optimal; use the convention
            continue
        starts = [np.full(dim, 1.0 / dim)]
        starts += [rng.dirichlet(np.ones(dim)) for _ in range(max(0, restarts - 1))]
        best = None
        for q0 in starts:
            q, _ = _ascend_point(a, md[s], pg[s], q0, tol, max_iter)
            val = _point_objective(q, a, md[s], pg[s])
            if best is None or val > best[1]:
                best = (q, val)
        rows[s] = best[0]
    return TabularDiscriminator(rows)


def numeric_generator_minimizer(world, tol=1e-7, max_iter=5_000) -> np.ndarray:
    """Minimize C(G) over the support simplex by projected descent.

    Gradients come from central finite differences of C, so this route is
    independent of any hand-derived expression for the optimum.
    """
    s = world.support_size
    pg = np.full(s, 1.0 / s)
    h = 1e-6

    def value(p):
        return generator_objective(world, p)

    def fd_grad(p):
        g = np.empty(s)
        for j in range(s):
            up = p.copy()
            up[j] += h
            if p[j] >= h:
                dn = p.copy()
                dn[j] -= h
                g[j] = (value(up) - value(dn)) / (2 * h)
            else:
                g[j] = (value(up) - value(p)) / h
        return g

    fq = value(pg)
    eta = 0.5
    best = (pg.copy(), math.inf)
    for _ in range(max_iter):
        g = fd_grad(pg)
        res = _residual(pg, -g)
        if res < best[1]:
            best = (pg.copy(), res)
        if res <= tol:
            return pg
        cand = project_simplex(pg - eta * g)
        fc = value(cand)
        if fc <= fq:
            pg, fq = cand, fc
            eta *= 1.5
        else:
            eta *= 0.5
            if eta < 1e-14:
                break
    if best[1] <= 1e-4:
        return best[0]
    raise ConvergenceError(
        f"generator descent stalled at residual {best[1]:.3e} (tol {tol:.1e})",
        best=best[0],
        residual=best[1],
    )


# ---------------------------------------------------------------------------
# Equilibrium value
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumValue:
    """Optimal game value split into its divergence and cross-entropy parts."""

    value: float
    divergence: float
    cross_entropy: float


def equilibrium_value(world) -> EquilibriumValue:
    """Game value at the optimal generator.

    The divergence part is ``n ln n - (n+1) ln(n+1)``; the cross-entropy part
    sums, over bags, the expected cross entropy between the bag prior and the
    final classifier posterior under that bag's density.
    """
    n = world.n_bags
    md = world.mixture_density
    if np.any((world.bag_densities > 0) & (md[None, :] <= 0)):
        raise UndefinedPointError("a bag places mass on a point with zero total real mass")
    divergence = n * math.log(n) - (n + 1) * math.log(n + 1)
    alive = np.flatnonzero(md > 0)
    posteriors, _ = classifier_posterior_and_weights(world, points=alive)
    cross_entropy = 0.0
    for i in range(n):
        density = world.bag_densities[i, alive]
        mask = density > 0
        if not mask.any():
            continue
        logs = _xlogy(
            np.broadcast_to(world.priors[i], (int(mask.sum()), world.k)), posteriors[mask]
        )
        cross_entropy -= (density[mask] * logs.sum(axis=1)).sum()
    return EquilibriumValue(
        value=divergence - cross_entropy,
        divergence=float(divergence),
        cross_entropy=float(cross_entropy),
    )
