"""Perron-Frobenius data, derived generators, biased laws and rate functions."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import BranchingModel, MeanData, OffspringLaw, mean_data

EIG_TOL = 1e-10


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralData:
    lam: float
    pi: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    means: MeanData

    @property
    def A(self):
        return self.means.A


@dataclass(frozen=True)
class RetrospectiveChain:
    G: np.ndarray
    holding_rates: np.ndarray
    jump_probs: np.ndarray


@dataclass(frozen=True)
class DerivedGenerators:
    G_rev: np.ndarray
    G_tilde: np.ndarray


@dataclass(frozen=True)
class BiasedLaws:
    c: np.ndarray
    p_hat: tuple
    p_tilde: tuple


def _power_iteration(B, tol=1e-13, maxiter=10**6):
    n = B.shape[0]
    x = np.full(n, 1.0 / n)
    for it in range(maxiter):
        y = B @ x
        y /= y.sum()
        if np.max(np.abs(y - x)) < tol:
            return y, it
        x = y
    raise ConvergenceError(
        f"power iteration did not converge in {maxiter} steps (last change {np.max(np.abs(y - x)):.3e})"
    )


def perron(A, means: MeanData | None = None, tol=1e-13, maxiter=10**6) -> SpectralData:
    """Principal eigenvalue and normalized left/right eigenvectors of ``A``.

    Power iteration runs on ``A + s I`` with ``s = max(0, max_i -a_ii) + 1``,
    separately for ``A`` and ``A.T``.  The shift makes every entry nonnegative
    and the diagonal strictly positive, so the iterated matrix is primitive.

    Returns
    -------
    SpectralData
        ``pi`` sums to one and ``<pi, h> = 1``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    s = max(0.0, float(np.max(-np.diag(A)))) + 1.0
    B = A + s * np.eye(n)
    h, _ = _power_iteration(B, tol, maxiter)
    pi, _ = _power_iteration(B.T, tol, maxiter)
    lam = float(pi @ A @ h / (pi @ h))
    pi = pi / math.fsum(pi)
    h = h / float(pi @ h)
    scale = max(np.max(np.abs(A)), abs(lam), 1.0)
    res_right = np.max(np.abs(A @ h - lam * h) / (scale * h))
    res_left = np.max(np.abs(pi @ A - lam * pi) / (scale * pi))
    if max(res_right, res_left) > EIG_TOL:
        raise ConvergenceError(f"eigen-residual {max(res_right, res_left):.3e} exceeds {EIG_TOL}")
    alpha = ancestral_vector(pi, h)
    for arr in (pi, h, alpha):
        arr.setflags(write=False)
    if means is None:
        means = MeanData(M=None, row_means=None, A=A, r=A.sum(axis=1))
    return SpectralData(lam=lam, pi=pi, h=h, alpha=alpha, means=means)


def ancestral_vector(pi, h):
    alpha = np.asarray(pi) * np.asarray(h)
    # <pi, h> = 1 already; renormalize away rounding
    return alpha / math.fsum(alpha)


def spectral_data(model: BranchingModel) -> SpectralData:
    md = mean_data(model)
    return perron(md.A, md)


def ancestral_distribution(spec: SpectralData) -> np.ndarray:
    return spec.alpha


def retrospective_generator(model: BranchingModel, spec: SpectralData) -> RetrospectiveChain:
    """Generator of the type process along surviving lineages.

    Holding rate ``a_i + lam``, jump law ``p_ij = m_ij h_j / ((1 + lam/a_i) h_i)``.
    """
    a = model.split_rates
    M = spec.means.M
    h = spec.h
    lam = spec.lam
    c = 1.0 + lam / a
    hold = a + lam
    # a type whose offspring mean vanishes (pure death) never carries a surviving lineage
    live = c > 0
    P = np.eye(model.num_types)
    P[live] = M[live] * h[None, :] / (c * h)[live, None]
    G = hold[:, None] * (P - np.eye(model.num_types))
    return RetrospectiveChain(G=G, holding_rates=hold, jump_probs=P)


def conjugated_generator(spec: SpectralData) -> np.ndarray:
    """``h_i^{-1} (a_ij - lam delta_ij) h_j``; the second form of ``G``."""
    n = len(spec.h)
    return (spec.A - spec.lam * np.eye(n)) * spec.h[None, :] / spec.h[:, None]


def derived_generators(model: BranchingModel, spec: SpectralData) -> DerivedGenerators:
    n = model.num_types
    pi = spec.pi
    G_rev = (spec.A.T - spec.lam * np.eye(n)) * pi[None, :] / pi[:, None]
    a = model.split_rates
    M = spec.means.M
    G_tilde = a[:, None] * M - np.diag(a * spec.means.row_means)
    return DerivedGenerators(G_rev=G_rev, G_tilde=G_tilde)


def time_reversal(G, alpha) -> np.ndarray:
    """``alpha_j g_ji / alpha_i``."""
    alpha = np.asarray(alpha)
    return np.asarray(G).T * alpha[None, :] / alpha[:, None]


def weighted_law(law: OffspringLaw, weights, norm) -> OffspringLaw:
    w = law.counts @ np.asarray(weights, dtype=float)
    probs = w * law.probs / norm
    keep = probs > 0
    return OffspringLaw(law.counts[keep], probs[keep])


def biased_laws(model: BranchingModel, spec: SpectralData) -> BiasedLaws:
    """h-biased trunk laws and the uniform-selection size-biased laws."""
    a = model.split_rates
    c = 1.0 + spec.lam / a
    # (M h)_i equals c_i h_i up to the eigenvector residual; dividing by it keeps each law exactly normalized
    Mh = spec.means.M @ spec.h
    p_hat = tuple(
        weighted_law(law, spec.h, Mh[i]) for i, law in enumerate(model.offspring)
    )
    ones = np.ones(model.num_types)
    p_tilde = tuple(
        weighted_law(law, ones, spec.means.row_means[i]) for i, law in enumerate(model.offspring)
    )
    return BiasedLaws(c=c, p_hat=p_hat, p_tilde=p_tilde)


def stationary_distribution(G) -> np.ndarray:
    """Stationary law of an irreducible generator (null vector of ``G.T``)."""
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    lhs = np.vstack([G.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return mu


# -- level-2 rate function --------------------------------------------------

def _rate_objective(G, nu, w):
    # -sum_i nu_i sum_j g_ij exp(w_j - w_i)
    E = np.exp(w[None, :] - w[:, None])
    return -float(np.sum(nu[:, None] * G * E))


def _rate_newton(G, nu, w0, maxiter=200):
    n = len(nu)
    off = G - np.diag(np.diag(G))
    w = w0.copy()
    f = _rate_objective(G, nu, w)
    for _ in range(maxiter):
        E = np.exp(w[None, :] - w[:, None])
        T = nu[:, None] * off * E  # T_ij = nu_i g_ij e^{w_j - w_i}
        grad = T.sum(axis=1) - T.sum(axis=0)
        # Hessian of the concave objective: negative graph Laplacian of T + T.T
        S = T + T.T
        H = S - np.diag(S.sum(axis=1))
        free = slice(1, n)
        g = grad[free]
        if np.max(np.abs(g), initial=0.0) < 1e-15:
            break
        Hf = H[free, free] - 1e-14 * np.eye(n - 1)
        try:
            step = -np.linalg.solve(Hf, g)
            if not np.all(np.isfinite(step)) or step @ g <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = g
        full = np.zeros(n)
        full[free] = step
        t = 1.0
        while t > 1e-12:
            cand = w + t * full
            fc = _rate_objective(G, nu, cand)
            if fc >= f + 1e-4 * t * (step @ g) or fc >= f and t < 1e-6:
                break
            t *= 0.5
        else:
            break
        improved = fc - f
        w, f = cand, fc
        if improved < 1e-16 * max(1.0, abs(f)) and np.max(np.abs(t * full)) < 1e-12:
            break
    return f, w


def _check_simplex(nu, n):
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (n,):
        raise ValueError(f"expected a probability vector of length {n}")
    if np.any(nu < -1e-10) or abs(nu.sum() - 1.0) > 1e-10:
        raise ValueError(f"{nu} is not on the probability simplex")
    nu = np.clip(nu, 0.0, None)
    return nu / nu.sum()


def rate_function_solution(G, nu, restarts=20, seed=0, w0=None):
    """Value of the level-2 rate function and the maximizing ``v`` (on supp nu)."""
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    nu = _check_simplex(nu, n)
    supp = np.flatnonzero(nu > 0)
    Gs = G[np.ix_(supp, supp)]
    nus = nu[supp]
    # terms pointing outside the support can be driven to zero
    k = len(supp)
    if k == 1:
        v = np.zeros(n)
        v[supp] = 1.0
        return max(-float(G[supp[0], supp[0]]), 0.0), v
    rng = np.random.default_rng(seed)
    starts = [np.zeros(k) if w0 is None else np.asarray(w0, float)[supp] - np.asarray(w0, float)[supp][0]]
    for _ in range(restarts - 1):
        s = rng.normal(scale=2.0, size=k)
        s[0] = 0.0
        starts.append(s)
    best = (-np.inf, None)
    for s in starts:
        f, w = _rate_newton(Gs, nus, s)
        if f > best[0]:
            best = (f, w)
    f, w = best
    v = np.zeros(n)
    v[supp] = np.exp(w - w.max())
    return max(f, 0.0), v


def rate_function(G, nu, restarts=20) -> float:
    """``sup_{v > 0} -sum_i nu_i (G v)_i / v_i``; zero exactly at the stationary law."""
    return rate_function_solution(G, nu, restarts=restarts)[0]


def two_state_rate(G, nu) -> float:
    """Closed form ``(sqrt(nu_1 g_12) - sqrt(nu_2 g_21))**2`` for two states."""
    G = np.asarray(G, dtype=float)
    return (math.sqrt(nu[0] * G[0, 1]) - math.sqrt(nu[1] * G[1, 0])) ** 2


def _rate_gradient(G, v, nu):
    # envelope theorem: dI/dnu_i = -(G v)_i / v_i on the support
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -(G @ v) / v
    g[~np.isfinite(g)] = 0.0
    return g


def project_simplex(y):
    """Euclidean projection onto the probability simplex."""
    n = len(y)
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, n + 1) > css - 1)[0][-1]
    theta = (css[rho] - 1) / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


def simplex_grid(n, step):
    k = int(round(1.0 / step))
    pts = []
    for comp in itertools.product(range(k + 1), repeat=n - 1):
        s = sum(comp)
        if s <= k:
            pts.append(list(comp) + [k - s])
    return np.array(pts, dtype=float) / k


def variational_lambda(model: BranchingModel, spec: SpectralData, starts=10, grid_step=0.01, seed=0):
    """Maximize ``<nu, r> - I_Gtilde(nu)`` over the simplex.

    Projected gradient ascent with Armijo backtracking from several interior
    starts, plus a barycentric grid for up to three types.  Returns
    ``(value, argmax)``.
    """
    G = derived_generators(model, spec).G_tilde
    r = np.asarray(spec.means.r, dtype=float)
    n = model.num_types
    if n == 1:
        return float(r[0]), np.ones(1)

    def phi(nu, w0=None):
        val, v = rate_function_solution(G, nu, restarts=1, w0=w0)
        return float(nu @ r) - val, v

    rng = np.random.default_rng(seed)
    cands = [np.full(n, 1.0 / n)] + [rng.dirichlet(np.ones(n)) for _ in range(starts - 1)]
    if n <= 3:
        grid = simplex_grid(n, grid_step)
        vals = [phi(p)[0] for p in grid]
        cands.append(grid[int(np.argmax(vals))])

    best_val, best_nu = -np.inf, None
    for nu in cands:
        f, v = phi(nu)
        step = 1.0
        for _ in range(5000):
            w0 = np.log(np.where(v > 0, v, 1.0))
            grad = r - _rate_gradient(G, v, nu)
            moved = False
            while step > 1e-14:
                cand = project_simplex(nu + step * grad)
                fc, vc = phi(cand, w0)
                if fc >= f + 1e-4 * grad @ (cand - nu):
                    moved = True
                    break
                step *= 0.5
            if not moved:
                break
            delta = np.max(np.abs(cand - nu))
            nu, f, v = cand, fc, vc
            step = min(step * 2.0, 1.0)
            if delta < 1e-13:
                break
        if f > best_val:
            best_val, best_nu = f, nu
    if not np.isfinite(best_val):
        raise ConvergenceError("variational maximization failed")
    return best_val, best_nu


# -- matrix exponential -------------------------------------------------------

def matrix_exponential(A, t=1.0) -> np.ndarray:
    """``exp(t A)`` by scaling and squaring of a truncated Taylor series."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return np.eye(n)
    X = t * A
    norm = np.max(np.sum(np.abs(X), axis=1))
    squarings = 0
    if norm > 0.5:
        squarings = int(math.ceil(math.log2(norm / 0.5)))
        X = X / 2.0**squarings
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 200):
        term = term @ X / k
        result = result + term
        if np.max(np.sum(np.abs(term), axis=1)) < 1e-18:
            break
    for _ in range(squarings):
        result = result @ result
    return result


def alpha_u(spec: SpectralData, u: float) -> np.ndarray:
    """``pi_j E^j(|Z(u)|) e^{-lam u}``, the finite-u ancestral target."""
    E = matrix_exponential(spec.A, u)
    return spec.pi * E.sum(axis=1) * math.exp(-spec.lam * u)
