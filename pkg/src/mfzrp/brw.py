"""Spectral and functional-inequality toolkit for the reflected biased walk.

The chain lives on {0, ..., n-1}: step left at rate 1 except at 0, step
right at rate 1-a except at n-1.  For a in (0,1) it is reversible with
respect to the normalized geometric law with ratio 1-a; for a = 0 the
stationary law is uniform.  Everything here is built on the closed-form
eigensystem: eigenvalues -(2-a) + 2 sqrt(1-a) cos(pi (j-1)/n) and
eigenvectors of the form Im[(1-A_j) A_j^k] with A_j on the circle of
radius sqrt(1-a).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from math import lgamma, log
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .audit import AuditEntry, check
from .ode import rk4_span
from .pmf import GeometricFamily, Pmf, geometric, stochastically_leq


class ConsistencyError(RuntimeError):
    """Two independent computations of the same quantity disagree."""


@dataclass(frozen=True)
class BrwSpec:
    """Walk on {0..n-1} with left rate 1 and right rate 1-a."""

    n: int
    a: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2")
        if not 0.0 <= self.a < 1.0:
            raise ValueError("bias a must lie in [0, 1)")


def q_matrix(spec: BrwSpec) -> np.ndarray:
    """Generator matrix: rows sum to zero, off-diagonals are the jump rates."""
    n, a = spec.n, spec.a
    q = np.zeros((n, n))
    idx = np.arange(n - 1)
    q[idx + 1, idx] = 1.0        # left jumps
    q[idx, idx + 1] = 1.0 - a    # right jumps
    q[np.arange(n), np.arange(n)] = -q.sum(axis=1)
    return q


def stationary_vector(spec: BrwSpec) -> np.ndarray:
    n, a = spec.n, spec.a
    if a == 0.0:
        return np.full(n, 1.0 / n)
    w = a * np.power(1.0 - a, np.arange(n))
    return w / (1.0 - (1.0 - a) ** n)


def stationary_law(spec: BrwSpec) -> Pmf:
    """Stationary law as a Pmf (geometric truncated to n states, or uniform
    when a = 0)."""
    return Pmf(offset=0, weights=stationary_vector(spec))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Left eigensystem of the walk, orthonormal in the 1/pi inner product.

    ``eigenvalues[0] = 0`` with eigenvector ``pi``; the rest are negative
    and sorted decreasingly.  Sign convention: every eigenvector is
    positive at state 0.
    """

    spec: BrwSpec
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # row j is F_{j+1}
    normalization: np.ndarray
    pi: Pmf

    @property
    def spectral_gap(self) -> float:
        return float(-self.eigenvalues[1])

    def to_json_dict(self) -> dict:
        return {
            "n": self.spec.n,
            "a": self.spec.a,
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "normalization": self.normalization.tolist(),
        }


def eigensystem(spec: BrwSpec) -> SpectralDecomposition:
    """Closed-form eigensystem of the generator.

    For j >= 2 the eigenvalue is -(|1 - A_j|^2) with
    A_j = sqrt(1-a) exp(i pi (j-1)/n), and the eigenvector is
    Im[(1 - A_j) A_j^k] up to normalization.
    """
    n, a = spec.n, spec.a
    pi_vec = stationary_vector(spec)
    values = np.zeros(n)
    vectors = np.zeros((n, n))
    norms = np.zeros(n)
    vectors[0] = pi_vec
    norms[0] = 1.0
    root = math.sqrt(1.0 - a)
    ks = np.arange(n)
    for j in range(2, n + 1):
        A = root * cmath.exp(1j * math.pi * (j - 1) / n)
        values[j - 1] = -abs(1.0 - A) ** 2
        raw = np.imag((1.0 - A) * (A ** ks))
        c = 1.0 / math.sqrt(float(np.sum(raw * raw / pi_vec)))
        if raw[0] < 0.0:
            c = -c
        vectors[j - 1] = c * raw
        norms[j - 1] = c
    return SpectralDecomposition(spec=spec, eigenvalues=values,
                                 eigenvectors=vectors, normalization=norms,
                                 pi=Pmf(offset=0, weights=pi_vec))


# ---------------------------------------------------------------------------
# semigroup evolution


def _mu_vector(mu: Pmf, n: int) -> np.ndarray:
    if mu.offset < 0 or mu.last_point > n - 1:
        raise ValueError("mu must be supported on {0..n-1}")
    v = np.zeros(n)
    v[mu.offset: mu.offset + len(mu)] = mu.weights
    return v


def _evolve_eigen(v: np.ndarray, t: float, dec: SpectralDecomposition) -> np.ndarray:
    pi_vec = dec.eigenvectors[0]
    coeff = (dec.eigenvectors[1:] / pi_vec) @ v  # <mu, F_j>_pi for j >= 2
    damped = coeff * np.exp(t * dec.eigenvalues[1:])
    return pi_vec + damped @ dec.eigenvectors[1:]


def walk_rhs(n: int, a: float):
    """Master-equation right-hand side v -> v Q using the tridiagonal
    structure of the generator: O(n) per evaluation."""
    out_rate = np.full(n, 2.0 - a)
    out_rate[0] = 1.0 - a
    out_rate[-1] = 1.0

    def rhs(_t: float, v: np.ndarray) -> np.ndarray:
        out = -v * out_rate
        out[:-1] += v[1:]
        out[1:] += (1.0 - a) * v[:-1]
        return out

    return rhs


def rk_step_for(t: float, tol: float) -> float:
    """Step size whose global RK4 error stays near tol over horizon t,
    from the crude bound error <= (rate^5/120) t h^4 with rate <= 4."""
    if t <= 0.0:
        return 0.1
    c = 4.0 ** 5 / 120.0
    return min((tol / (c * t)) ** 0.25, 0.1)


def _evolve_rk(v: np.ndarray, t: float, n: int, a: float, tol: float) -> np.ndarray:
    if t == 0.0:
        return v.copy()
    return rk4_span(walk_rhs(n, a), 0.0, v, t, rk_step_for(t, tol))


def evolve(mu: Pmf, t: float, spec: BrwSpec, *, method: str = "eigen",
           cross_check: bool = True, check_tol: float = 1e-6,
           rk_tol: float = 1e-9,
           dec: SpectralDecomposition | None = None) -> Pmf:
    """Distribution at time t of the walk started from mu.

    The primary path expands mu in the eigenbasis and damps each mode; the
    cross-check reintegrates the master equation d mu/dt = mu Q with RK4 and
    raises ConsistencyError if the two disagree beyond ``check_tol``.  The
    eigen path loses accuracy when mu is astronomically far from pi in the
    chi-square sense (mass deep in the tail of a strongly biased walk);
    ``method="rk"`` sidesteps that regime.
    """
    if t < 0.0:
        raise ValueError("t must be >= 0")
    v = _mu_vector(mu, spec.n)
    if method == "rk":
        out = _evolve_rk(v, t, spec.n, spec.a, rk_tol)
    elif method == "eigen":
        dec = dec or eigensystem(spec)
        out = _evolve_eigen(v, t, dec)
        if cross_check:
            alt = _evolve_rk(v, t, spec.n, spec.a, rk_tol)
            gap = float(np.max(np.abs(out - alt)))
            if gap > check_tol:
                raise ConsistencyError(
                    f"eigen and master-equation paths differ by {gap:.3e}")
    else:
        raise ValueError(f"unknown method {method!r}")
    out = np.where((out < 0.0) & (out > -1e-12), 0.0, out)
    return Pmf(offset=0, weights=out)


def chi_square(mu: Pmf, spec: BrwSpec) -> float:
    """Chi-square distance sum (mu - pi)^2 / pi to the stationary law."""
    v = _mu_vector(mu, spec.n)
    pi_vec = stationary_vector(spec)
    return float(np.sum((v - pi_vec) ** 2 / pi_vec))


# ---------------------------------------------------------------------------
# convergence bounds


class ConvergenceBounds(NamedTuple):
    pointwise: np.ndarray
    tv: float
    first_moment: float
    tau1: float


def convergence_bounds(spec: BrwSpec, k: int, t: float,
                       eps: float = 0.25) -> ConvergenceBounds:
    """Analytic decay bounds for the walk started at state k.

    pointwise[l]  exp(t lambda_2) sqrt(pi(l)/pi(k))   per target state
    tv            exp(t lambda_2) / pi_min
    first_moment  4 exp(-t a^2/4) / (a^2 (1-a)^(k/2)), inf when a = 0
    tau1          least t making the tv bound <= eps (uniform in k)
    """
    if not 0 <= k < spec.n:
        raise ValueError("k must lie in {0..n-1}")
    dec = eigensystem(spec)
    lam2 = dec.eigenvalues[1]
    pi_vec = stationary_vector(spec)
    pointwise = np.exp(t * lam2) * np.sqrt(pi_vec / pi_vec[k])
    pi_min = float(pi_vec.min())
    tv = math.exp(t * lam2) / pi_min
    a = spec.a
    if a > 0.0:
        first_moment = 4.0 * math.exp(-t * a * a / 4.0) / (a * a * (1.0 - a) ** (k / 2.0))
    else:
        first_moment = math.inf
    tau1 = max(0.0, math.log(1.0 / (eps * pi_min)) / (-lam2))
    return ConvergenceBounds(pointwise, tv, first_moment, tau1)


# ---------------------------------------------------------------------------
# Dirichlet form, Laplacian, log-Sobolev constant


class DirichletResult(NamedTuple):
    E: float
    L: float


def dirichlet_and_laplacian(f, g, spec: BrwSpec) -> DirichletResult:
    """Dirichlet form E(f, g) and entropy-like functional L(f).

    E(f,g) = 1/2 sum_{j,k} pi(j) Q(j,k) (f(j)-f(k)) (g(j)-g(k))
    L(f)   = sum_k pi(k) f(k)^2 log(f(k)^2 / ||f||_{2,pi}^2)

    Zero entries of f contribute zero to L by continuity.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (spec.n,) or g.shape != (spec.n,):
        raise ValueError("f and g must have length n")
    pi_vec = stationary_vector(spec)
    q = q_matrix(spec)
    df = f[:, None] - f[None, :]
    dg = g[:, None] - g[None, :]
    e_val = 0.5 * float(np.sum(pi_vec[:, None] * q * df * dg))
    norm2 = float(pi_vec @ (f * f))
    if norm2 <= 0.0:
        raise ValueError("L(f) undefined for f identically zero")
    fsq = f * f
    mask = fsq > 0.0
    l_val = float(np.sum(pi_vec[mask] * fsq[mask] * np.log(fsq[mask] / norm2)))
    return DirichletResult(e_val, l_val)


class LogSobolevResult(NamedTuple):
    lower_bound: float
    numeric_estimate: float | None


def spectral_gap(spec: BrwSpec) -> float:
    """|lambda_2| = (2 - a) - 2 sqrt(1-a) cos(pi/n), from the closed form."""
    n, a = spec.n, spec.a
    return (2.0 - a) - 2.0 * math.sqrt(1.0 - a) * math.cos(math.pi / n)


def log_sobolev_lower_bound(spec: BrwSpec) -> float:
    """Certified lower bound (1 - 2 pi_min) |lambda_2| / log(1/pi_min - 1)
    on the log-Sobolev constant, with the continuous limit |lambda_2|/2 at
    pi_min = 1/2."""
    gap = spectral_gap(spec)
    pi_min = float(stationary_vector(spec).min())
    if abs(pi_min - 0.5) < 1e-12:
        return gap / 2.0
    return (1.0 - 2.0 * pi_min) * gap / math.log(1.0 / pi_min - 1.0)


def log_sobolev(spec: BrwSpec, restarts: int = 32, seed: int = 0,
                max_numeric_n: int = 128) -> LogSobolevResult:
    """Log-Sobolev constant of the walk: certified lower bound plus a
    descent-based numeric estimate.

    The numeric estimate is the best found value of E(f,f)/L(f), an upper
    bound on the true constant; it is skipped (None) for n above
    ``max_numeric_n``.
    """
    lower = log_sobolev_lower_bound(spec)
    pi_vec = stationary_vector(spec)
    if spec.n > max_numeric_n:
        return LogSobolevResult(lower, None)

    n = spec.n
    m_mat = -(pi_vec[:, None] * q_matrix(spec))
    m_mat = 0.5 * (m_mat + m_mat.T)  # reversibility makes this exact

    def ratio_and_grad(f: np.ndarray) -> tuple[float, np.ndarray]:
        e_val = float(f @ m_mat @ f)
        norm2 = float(pi_vec @ (f * f))
        if norm2 < 1e-300:
            return 1e6, np.zeros_like(f)
        fsq = f * f
        ratio_sq = np.where(fsq > 0.0, fsq / norm2, 1.0)
        l_val = float(np.sum(pi_vec * fsq * np.log(ratio_sq)))
        if l_val < 1e-13:
            return 1e6, np.zeros_like(f)
        g_e = 2.0 * (m_mat @ f)
        g_l = 2.0 * pi_vec * f * np.log(ratio_sq)
        val = e_val / l_val
        grad = (g_e - val * g_l) / l_val
        return val, grad

    rng = np.random.default_rng(seed)
    starts = [np.where(np.arange(n) <= m, 1.0, 0.0)
              for m in range(min(n - 1, 6))]
    while len(starts) < restarts:
        starts.append(rng.normal(size=n))
    best = math.inf
    for f0 in starts[:restarts]:
        res = optimize.minimize(ratio_and_grad, f0, jac=True,
                                method="L-BFGS-B",
                                options={"maxiter": 500, "ftol": 1e-14,
                                         "gtol": 1e-12})
        val, _ = ratio_and_grad(res.x)
        if val < best:
            best = val
    return LogSobolevResult(lower, float(best))


# ---------------------------------------------------------------------------
# weighted Hardy inequality


def hardy_bound_constant(u, v, u_tail: float = 0.0) -> float:
    """B = sup_k (sum_{j<=k} 1/v(j)) (sum_{j>=k} u(j) + u_tail)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(u <= 0.0) or np.any(v <= 0.0):
        raise ValueError("weights must be positive")
    head = np.cumsum(1.0 / v)
    tail = np.cumsum(u[::-1])[::-1] + u_tail
    return float(np.max(head * tail))


def hardy_audit(u, v, f, u_tail: float = 0.0, tol: float = 1e-12) -> AuditEntry:
    """Audit sum v f^2 >= (1/4B) sum u (cumulative sums of f)^2."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    f = np.asarray(f, dtype=float)
    b_const = hardy_bound_constant(u, v, u_tail)
    if not math.isfinite(b_const):
        return check("hardy", 0.0, ">=", 0.0, detail="B infinite, vacuous")
    lhs = float(v @ (f * f))
    partial = np.cumsum(f)
    rhs = float(u @ (partial * partial)) / (4.0 * b_const)
    return check("hardy", lhs, ">=", rhs, tol=tol,
                 detail=f"B={b_const!r}")


# ---------------------------------------------------------------------------
# entropy-production and chi-square contraction audits


def _geom_weights(a: float, n: int) -> np.ndarray:
    return a * np.power(1.0 - a, np.arange(n))


def entropy_production_audit(mu: Pmf, n: int, a: float,
                             alpha: float | None = None,
                             tol: float = 1e-10) -> AuditEntry:
    """Audit the windowed entropy-production inequality for a full-support
    law: nearest-neighbour flow entropy on {0..n-1} dominates
    4 alpha (windowed KL to the geometric law + its log-normalizer).

    ``alpha`` defaults to the certified log-Sobolev lower bound of the
    n-state walk, which is what makes the inequality a theorem.
    """
    if not 0.0 < a < 1.0:
        raise ValueError("bias a must lie in (0, 1)")
    if mu.offset != 0 or len(mu) < n:
        raise ValueError("mu must be stored on {0..n-1} at least")
    w = mu.weights[:n]
    if np.any(w[:-1] <= 0.0) or w[-1] < 0.0:
        # flows need mu > 0 through the window
        raise ValueError("mu must be strictly positive on the window")
    if alpha is None:
        alpha = log_sobolev_lower_bound(BrwSpec(n, a))
    flow_out = w[:-1] * (1.0 - a)
    flow_in = w[1:]
    lhs_terms = np.zeros(n - 1)
    both = (flow_out > 0.0) & (flow_in > 0.0)
    lhs_terms[both] = (flow_out[both] - flow_in[both]) * np.log(flow_out[both] / flow_in[both])
    if np.any((flow_in == 0.0) & (flow_out > 0.0)):
        lhs = math.inf
    else:
        lhs = float(lhs_terms.sum())
    geo = _geom_weights(a, n)
    pos = w > 0.0
    kl_window = float(np.sum(w[pos] * np.log(w[pos] / geo[pos])))
    rhs = 4.0 * alpha * (kl_window + math.log(1.0 - (1.0 - a) ** n))
    return check("entropy_production_vs_kl", lhs, ">=", rhs, tol=tol,
                 detail=f"n={n} a={a!r} alpha={alpha!r}")


def chi2_contraction_audit(mu: Pmf, n: int, tol: float = 1e-12) -> AuditEntry:
    """Audit the quadratic flow inequality: the flow energy on {0..n-1}
    weighted by the geometric law with bias mu(0) dominates
    (mu(0)^2/4) times the windowed chi-square distance to that law."""
    a = mu.prob(0)
    if not 0.0 < a < 1.0:
        raise ValueError("mu(0) must lie strictly inside (0, 1)")
    w = np.array([mu.prob(k) for k in range(n)])
    geo = _geom_weights(a, n)
    flows = w[:-1] * (1.0 - a) - w[1:]
    lhs = float(np.sum(flows * flows / geo[1:]))
    dev = w[1:] - geo[1:]
    rhs = 0.25 * a * a * float(np.sum(dev * dev / geo[1:]))
    return check("flow_vs_chi2", lhs, ">=", rhs, tol=tol,
                 detail=f"n={n} a={a!r}")


# ---------------------------------------------------------------------------
# shifted-equilibrium dominance


def dominance_audit(k: int, a: float, t: float, tol: float = 1e-10,
                    tail_target: float = 1e-12) -> AuditEntry:
    """Audit that the walk on all of N started at k, run for time t, is
    stochastically below the stationary law shifted k steps right.

    The infinite walk is realized on a truncation sized so the certified
    tail (from the dominating shifted law itself) is below ``tail_target``;
    the truncation is enlarged and the check retried if the first attempt
    fails within truncation resolution.
    """
    if not 0.0 < a < 1.0:
        raise ValueError("bias a must lie in (0, 1)")
    if k < 0 or t < 0.0:
        raise ValueError("need k >= 0 and t >= 0")
    pad = math.ceil(math.log(tail_target) / math.log(1.0 - a))
    n = k + pad + 8
    entry = None
    for _ in range(3):
        law = evolve(Pmf.delta(k), t, BrwSpec(n, a))
        ref_support = math.ceil(math.log(tail_target * 0.1) / math.log(1.0 - a))
        ref = geometric(GeometricFamily("shifted", a, j=k), ref_support)
        result = stochastically_leq(law.trimmed(), ref, tol=tol)
        entry = check(f"dominance_k{k}_a{a}_t{t}", result.worst_margin, "<=",
                      tol, detail=f"worst cutoff {result.worst_cutoff}, n={n}")
        if entry.passed:
            break
        n = int(1.5 * n)
    return entry


# ---------------------------------------------------------------------------
# monotone coupling of two walks


def coupling_sim(a: float, b: float, mu_a: Pmf, mu_b: Pmf, horizon: float,
                 seed: int, replicas: int) -> int:
    """Simulate the monotone coupling of walks with biases a <= b and count
    pathwise order violations (walk with smaller bias must stay above).

    Joint moves: at rate 1 both step down (where positive); at rate 1-b
    both step up; at rate b-a only the small-bias walk steps up.  Initial
    states come from the quantile coupling of (mu_a, mu_b), which is
    pointwise ordered exactly when mu_b <=_st mu_a; that precondition is
    checked and violations of it are an error, not a count.
    """
    if not (0.0 <= a <= b < 1.0):
        raise ValueError("need 0 <= a <= b < 1")
    order = stochastically_leq(mu_b, mu_a, tol=1e-12)
    if not order.holds:
        raise ValueError("mu_a must stochastically dominate mu_b")
    total_rate = 2.0 - a
    p_down = 1.0 / total_rate
    p_both_up = (1.0 - b) / total_rate
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    violations = 0
    for _ in range(replicas):
        u0 = rng.random()
        xa = mu_a.quantile(u0)
        xb = mu_b.quantile(u0)
        bad = xa < xb
        n_events = rng.poisson(total_rate * horizon)
        if n_events and not bad:
            us = rng.random(n_events)
            for u in us:
                if u < p_down:
                    if xa > 0:
                        xa -= 1
                    if xb > 0:
                        xb -= 1
                elif u < p_down + p_both_up:
                    xa += 1
                    xb += 1
                else:
                    xa += 1
                if xa < xb:
                    bad = True
                    break
        violations += bad
    return violations


# ---------------------------------------------------------------------------
# unbiased walk via Poisson reflection


def _skellam_pmf(d: int, t: float) -> float:
    """P(Y - Z = d) for independent Poisson(t) Y, Z and d >= 0, by direct
    series with early termination."""
    if t == 0.0:
        return 1.0 if d == 0 else 0.0
    term = math.exp(-2.0 * t + d * log(t) - lgamma(d + 1))
    total = term
    m = 0
    while True:
        term *= t * t / ((m + 1) * (m + d + 1))
        total += term
        m += 1
        if m > t and term < total * 1e-17:
            return total


def reflection_law(R: int, t: float) -> Pmf:
    """Law at time t of the rate-(1,1) walk on N reflected at 0, started at
    R, computed from the difference of two Poisson(t) counts folded over
    the half-integer reflection point just below 0.

    nu(k) = P(X = k - R) + P(X = k + R + 1) with X the Poisson difference.
    """
    if R < 0 or t < 0.0:
        raise ValueError("need R >= 0 and t >= 0")
    if t == 0.0:
        return Pmf.delta(R)
    d_max = int(R + 1 + 2.0 * t + 12.0 * math.sqrt(t + 1.0) + 30)
    p = np.array([_skellam_pmf(d, t) for d in range(d_max + 1)])
    k_max = d_max - R - 1
    w = np.zeros(k_max + 1)
    for k in range(k_max + 1):
        w[k] = p[abs(k - R)] + p[k + R + 1]
    total = w.sum()
    if abs(total - 1.0) > 1e-12:
        raise ConsistencyError(f"reflection law mass {total} off by "
                               f"{abs(total - 1.0):.2e}")
    return Pmf(offset=0, weights=w).trimmed()
