"""Probability mass functions on the nonnegative integers.

The `Pmf` type is the common currency of the package: a finite weight vector
anchored at an integer offset, plus a declared tail mass for laws whose
support extends past the stored window (geometric laws, leaked fluid mass).
Operations treat the declared tail as a single lumped atom just past the
stored support; every docstring states how that convention enters.

All logarithms are natural.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from math import comb, lgamma, log
from typing import Iterable, NamedTuple

import numpy as np

# Weights in (NEG_CLAMP, 0) are treated as integrator round-off and clamped
# to zero; anything more negative is a hard error.
NEG_CLAMP = -1e-12

NORM_TOL = 1e-9


def _clamp_weights(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    low = w.min()
    if low < NEG_CLAMP:
        raise ValueError(f"weight {low} below clamp threshold {NEG_CLAMP}")
    if low < 0.0:
        w = np.where(w < 0.0, 0.0, w)
    return w


@dataclass(frozen=True)
class Pmf:
    """Finite-support mass function with offset and declared tail mass.

    ``weights[i]`` is the mass at integer ``offset + i``.  ``tail`` is mass
    known to lie somewhere beyond ``offset + len(weights) - 1``, recorded so
    truncations of infinite laws stay honestly normalized.
    """

    offset: int
    weights: np.ndarray
    tail: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", _clamp_weights(self.weights))
        object.__setattr__(self, "offset", int(self.offset))
        if self.offset < 0:
            raise ValueError("offset must be >= 0")
        if self.tail < 0.0:
            raise ValueError("tail mass must be >= 0")
        self.weights.setflags(write=False)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_weights(weights: Iterable[float], offset: int = 0,
                     tail: float = 0.0, renormalize: bool = False) -> "Pmf":
        """Validate and wrap raw weights; optionally rescale to mass one.

        With ``renormalize`` the stored weights are scaled so that
        ``sum(weights) + tail == 1`` (the tail is kept as given).
        """
        w = _clamp_weights(np.array(list(weights), dtype=float))
        if renormalize:
            s = w.sum()
            if s <= 0.0:
                raise ValueError("cannot renormalize zero mass")
            w = w * ((1.0 - tail) / s)
        p = Pmf(offset=offset, weights=w, tail=tail)
        p.require_normalized()
        return p

    @staticmethod
    def delta(point: int) -> "Pmf":
        """Point mass at ``point``."""
        return Pmf(offset=point, weights=np.array([1.0]))

    # -- basic queries -------------------------------------------------------

    def __len__(self) -> int:
        return self.weights.size

    @property
    def last_point(self) -> int:
        return self.offset + self.weights.size - 1

    def mass(self) -> float:
        return float(self.weights.sum()) + self.tail

    def require_normalized(self, tol: float = NORM_TOL) -> None:
        m = self.mass()
        if abs(m - 1.0) > tol:
            raise ValueError(f"mass {m} is not within {tol} of 1")

    def prob(self, k: int) -> float:
        """Mass at k over the stored support (0 outside it)."""
        i = k - self.offset
        if 0 <= i < self.weights.size:
            return float(self.weights[i])
        return 0.0

    def support_points(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.weights.size)

    def mean(self, tail_mean: float = 0.0) -> float:
        """First moment of the stored support plus a caller-supplied bound
        (or exact value) for the first moment carried by the declared tail."""
        return float(self.support_points() @ self.weights) + tail_mean

    def tail_mass_at_or_above(self, c: int) -> float:
        """Mass at points >= c, counting the declared tail in full."""
        i = max(c - self.offset, 0)
        if i >= self.weights.size:
            return self.tail
        return float(self.weights[i:].sum()) + self.tail

    def trimmed(self) -> "Pmf":
        """Drop trailing zero weights (leading zeros are kept; the offset
        already encodes where support starts)."""
        nz = np.nonzero(self.weights)[0]
        if nz.size == 0:
            return self
        end = nz[-1] + 1
        if end == self.weights.size:
            return self
        return Pmf(self.offset, self.weights[:end].copy(), self.tail)

    def quantile(self, u: float) -> int:
        """Generalized inverse CDF over the stored support.

        Declared tail mass maps to the first point past the support, which
        is only adequate when the tail is below the resolution of use.
        """
        if not 0.0 <= u <= 1.0:
            raise ValueError("u must lie in [0, 1]")
        cum = np.cumsum(self.weights)
        i = int(np.searchsorted(cum, u, side="left"))
        if i >= self.weights.size:
            return self.last_point + 1
        return self.offset + i

    # -- serialization -------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# offset={self.offset}\n")
        buf.write(f"# tail={self.tail!r}\n")
        buf.write("k,weight\n")
        for k, w in zip(self.support_points(), self.weights):
            buf.write(f"{k},{float(w)!r}\n")
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "Pmf":
        offset, tail = 0, 0.0
        ks, ws = [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("offset="):
                    offset = int(body.split("=", 1)[1])
                elif body.startswith("tail="):
                    tail = float(body.split("=", 1)[1])
                continue
            if line.startswith("k,"):
                continue
            k_s, w_s = line.split(",")
            ks.append(int(k_s))
            ws.append(float(w_s))
        if ks and ks[0] != offset:
            raise ValueError("first support point does not match offset")
        return Pmf(offset=offset, weights=np.array(ws), tail=tail)

    def to_json_dict(self) -> dict:
        return {"offset": self.offset, "weights": self.weights.tolist(),
                "tail": self.tail}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @staticmethod
    def from_json_dict(d: dict) -> "Pmf":
        return Pmf(offset=int(d["offset"]), weights=np.array(d["weights"]),
                   tail=float(d.get("tail", 0.0)))


# -- geometric families ------------------------------------------------------


@dataclass(frozen=True)
class GeometricFamily:
    """Specification of a geometric law: on all of N, truncated to
    {0..n-1}, or shifted to start at j.

    kind "infinite":  pi(k) = a (1-a)^k on k = 0, 1, ...
    kind "truncated": pi(k) = a (1-a)^k / (1 - (1-a)^n) on k < n
    kind "shifted":   the infinite law translated j steps right
    """

    kind: str
    a: float
    n: int = 0
    j: int = 0

    def __post_init__(self):
        if self.kind not in ("infinite", "truncated", "shifted"):
            raise ValueError(f"unknown geometric kind {self.kind!r}")
        if not 0.0 < self.a < 1.0:
            raise ValueError("bias a must lie in (0, 1)")
        if self.kind == "truncated" and self.n < 1:
            raise ValueError("truncated family needs n >= 1")
        if self.kind == "shifted" and self.j < 0:
            raise ValueError("shift j must be >= 0")


def geometric(spec: GeometricFamily, support_size: int = 1) -> Pmf:
    """Materialize a geometric-family law as a Pmf.

    For infinite and shifted kinds the first ``support_size`` points are
    stored and the exact remaining mass ``(1-a)**support_size`` is declared
    as tail.  The truncated kind ignores ``support_size`` and has no tail.
    """
    a = spec.a
    if spec.kind == "truncated":
        k = np.arange(spec.n)
        w = a * np.power(1.0 - a, k) / (1.0 - (1.0 - a) ** spec.n)
        return Pmf(offset=0, weights=w, tail=0.0)
    if support_size < 1:
        raise ValueError("support_size must be >= 1")
    k = np.arange(support_size)
    w = a * np.power(1.0 - a, k)
    tail = (1.0 - a) ** support_size
    offset = spec.j if spec.kind == "shifted" else 0
    return Pmf(offset=offset, weights=w, tail=tail)


def geometric_support_for_tail(a: float, tail_target: float) -> int:
    """Smallest support size with declared geometric tail <= tail_target."""
    if not 0.0 < a < 1.0:
        raise ValueError("bias a must lie in (0, 1)")
    if not 0.0 < tail_target < 1.0:
        raise ValueError("tail_target must lie in (0, 1)")
    return max(1, math.ceil(log(tail_target) / log(1.0 - a)))


def gibbs_geometric(R: float, support_size: int | None = None,
                    tail_target: float = 1e-12) -> Pmf:
    """Maximum-entropy law with mean R: geometric with bias 1/(R+1).

    Its mass function is R**k / (R+1)**(k+1).  When ``support_size`` is not
    given, the support is sized so the declared tail is below
    ``tail_target``.
    """
    if R <= 0.0:
        raise ValueError("R must be > 0")
    a = 1.0 / (R + 1.0)
    if support_size is None:
        support_size = geometric_support_for_tail(a, tail_target)
    return geometric(GeometricFamily("infinite", a), support_size)


def random_mean_pmf(rng: np.random.Generator, mean: float,
                    support_size: int) -> Pmf:
    """Random strictly positive law on {0..support_size-1} with the exact
    requested mean, built by exponentially tilting uniform noise.

    Used by sweeps that need many laws sharing a first moment.
    """
    if not 0.0 < mean < support_size - 1:
        raise ValueError("mean must lie strictly inside the support range")
    k = np.arange(support_size)
    base = rng.uniform(0.2, 1.0, size=support_size)

    def tilted_mean(theta: float) -> float:
        w = base * np.exp(theta * (k - k.mean()))
        w /= w.sum()
        return float(k @ w)

    lo, hi = -60.0 / support_size, 60.0 / support_size
    # tilted_mean is increasing in theta; plain bisection
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if tilted_mean(mid) < mean:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    if abs(tilted_mean(theta) - mean) > 1e-9:
        raise ValueError("mean not reachable by tilting on this support")
    w = base * np.exp(theta * (k - k.mean()))
    w /= w.sum()
    return Pmf.from_weights(w, renormalize=True)


# -- alignment ---------------------------------------------------------------


def align(mu: Pmf, nu: Pmf) -> tuple[int, np.ndarray, np.ndarray]:
    """Embed two Pmfs on a common contiguous grid.

    Returns ``(grid_offset, mu_weights, nu_weights)`` where both weight
    arrays cover ``grid_offset .. grid_offset + len - 1``.  Declared tails
    are not represented on the grid; callers handle them explicitly.
    """
    lo = min(mu.offset, nu.offset)
    hi = max(mu.last_point, nu.last_point)
    size = hi - lo + 1
    a = np.zeros(size)
    b = np.zeros(size)
    a[mu.offset - lo: mu.offset - lo + len(mu)] = mu.weights
    b[nu.offset - lo: nu.offset - lo + len(nu)] = nu.weights
    return lo, a, b


# -- information functionals --------------------------------------------------


def entropy(p: Pmf) -> float:
    """Shannon entropy of the stored support, with 0 log 0 = 0.

    Mass declared as tail is excluded; `geometric_tail_entropy` gives the
    exact contribution when the tail continues geometrically.
    """
    w = p.weights[p.weights > 0.0]
    return float(-(w @ np.log(w)))


def geometric_tail_entropy(a: float, start: int) -> float:
    """Entropy carried by the geometric tail a(1-a)^k over k >= start.

    Closed form: with q = (1-a)^start the tail has mass q and contributes
    -q log(a q) + q (1-a)/a * log(1/(1-a)) ... evaluated exactly below.
    """
    if not 0.0 < a < 1.0:
        raise ValueError("bias a must lie in (0, 1)")
    r = 1.0 - a
    q = r ** start
    # sum_{k>=start} -a r^k log(a r^k) = -q log a - a log r * sum_{k>=start} k r^k
    s_k = q * (start * (1.0 - r) + r) / (1.0 - r) ** 2
    return float(-q * log(a) - a * log(r) * s_k)


def phi(x: float, y: float) -> float:
    """Bregman integrand of t log t: phi(x, y) = y log(y/x) - (y - x).

    Nonnegative for x > 0, y >= 0, zero iff x == y, and bounded above by
    (x - y)^2 / x.
    """
    if x <= 0.0:
        raise ValueError("phi requires x > 0")
    if y < 0.0:
        raise ValueError("phi requires y >= 0")
    if y == 0.0:
        return x
    # log y - log x rather than log(y/x): the ratio can underflow when y
    # is subnormal while the logs stay finite
    return y * (log(y) - log(x)) - (y - x)


def _phi_array(x: np.ndarray, y: np.ndarray) -> float:
    """Sum of phi over aligned arrays; +inf when y puts mass where x has
    none.  Entries with y == 0 contribute x."""
    if np.any((y > 0.0) & (x <= 0.0)):
        return math.inf
    out = np.where(y > 0.0, 0.0, x)
    pos = y > 0.0
    xp, yp = x[pos], y[pos]
    out_pos = yp * np.log(yp / xp) - (yp - xp)
    return float(out.sum() + out_pos.sum())


def kl_divergence(mu: Pmf, pi: Pmf) -> float:
    """Kullback-Leibler divergence D(mu || pi) in phi form.

    Computed as sum_k phi(pi(k), mu(k)) over the common grid plus one
    lumped beyond-grid term phi(pi_tail, mu_tail).  The phi form equals
    sum mu log(mu/pi) whenever both laws have mass one, and stays
    nonnegative under truncation.  Returns math.inf (loudly distinguishable,
    never an overflow) when mu puts mass where pi has none.
    """
    _, mw, pw = align(mu, pi)
    total = _phi_array(pw, mw)
    mt, pt = mu.tail, pi.tail
    if mt > 0.0:
        if pt <= 0.0:
            return math.inf
        total += phi(pt, mt)
    elif pt > 0.0:
        total += pt
    return total


def distance(mu: Pmf, pi: Pmf, norm: str = "tv") -> float:
    """Distance between two laws: total variation, first moment of the
    difference, or sup norm.

    Declared tails are compared as lumped atoms located one past the longer
    stored support, so results are exact when at most the lump location
    matters (tails equal or one-sided) and conservative otherwise.
    """
    lo, mw, pw = align(mu, pi)
    diff = np.abs(mw - pw)
    tail_diff = abs(mu.tail - pi.tail)
    if norm == "tv":
        return float(0.5 * (diff.sum() + tail_diff))
    if norm == "first_moment":
        k = np.arange(lo, lo + diff.size)
        lump_at = lo + diff.size
        return float(k @ diff + lump_at * tail_diff)
    if norm == "sup":
        return float(max(diff.max(), tail_diff))
    raise ValueError(f"unknown norm {norm!r}")


class StochasticOrderResult(NamedTuple):
    holds: bool
    worst_cutoff: int
    worst_margin: float


def stochastically_leq(mu: Pmf, nu: Pmf, tol: float = 0.0) -> StochasticOrderResult:
    """Check mu <=_st nu: every upper tail of mu at most the tail of nu.

    Conservative with declared tails: mu's tail counts in full toward its
    upper tails (upper bound), while nu's declared tail is ignored (lower
    bound), so a True answer certifies the order up to ``tol``.  The worst
    cutoff and its signed margin (positive = violation) are reported.
    """
    lo = min(mu.offset, nu.offset)
    hi = max(mu.last_point, nu.last_point) + 1
    _, mw, nw = align(mu, nu)
    # upper tails at cutoffs lo..hi (hi catches pure-tail mass)
    mu_tails = np.concatenate([np.cumsum(mw[::-1])[::-1], [0.0]]) + mu.tail
    nu_tails = np.concatenate([np.cumsum(nw[::-1])[::-1], [0.0]])
    margins = mu_tails - nu_tails
    worst = int(np.argmax(margins))
    worst_margin = float(margins[worst])
    return StochasticOrderResult(worst_margin <= tol, lo + worst, worst_margin)


def pinsker_audit(mu: Pmf, pi: Pmf, tol: float = 1e-12):
    """Audit (sum |mu - pi|)^2 <= 2 D(mu || pi)."""
    from .audit import check

    l1 = 2.0 * distance(mu, pi, "tv")
    kl = kl_divergence(mu, pi)
    rhs = 2.0 * kl if math.isfinite(kl) else math.inf
    return check("pinsker", l1 * l1, "<=", rhs, tol=tol)


# -- ensemble combinatorics ---------------------------------------------------


@dataclass(frozen=True)
class EnsembleCounts:
    """Occupancy multiplicities of an N-component ensemble: counts[k] is
    the number of components in state k."""

    N: int
    counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        total = sum(self.counts.values())
        if total != self.N:
            raise ValueError(f"counts sum to {total}, expected N={self.N}")
        if any(k < 0 or c < 0 for k, c in self.counts.items()):
            raise ValueError("states and counts must be nonnegative")

    def total_balls(self) -> int:
        return sum(k * c for k, c in self.counts.items())

    def empirical(self) -> Pmf:
        hi = max(self.counts)
        w = np.zeros(hi + 1)
        for k, c in self.counts.items():
            w[k] = c / self.N
        return Pmf(offset=0, weights=w)


def thermodynamic_entropy_gap(counts: EnsembleCounts) -> float:
    """Gap |S(empirical) - (1/N) log multinomial(N; counts)|.

    The multinomial term is evaluated in log space via lgamma, so N far
    beyond factorial overflow is fine.
    """
    n = counts.N
    s_emp = entropy(counts.empirical())
    log_multi = lgamma(n + 1) - sum(lgamma(c + 1) for c in counts.counts.values())
    return abs(s_emp - log_multi / n)


def exact_equilibrium(N: int, R: int, k: int) -> tuple[float, float]:
    """Equilibrium upper-tail probability of one box and the configuration
    count of the conserved ensemble.

    Returns ``(P(B_1 >= k), log |configurations|)`` where configurations
    are the ways of placing N*R indistinguishable balls in N boxes.  The
    tail is the ratio of two binomial coefficients; small cases (N*R <= 64)
    use exact integer arithmetic, large ones log-gamma.
    """
    if N < 1 or R < 1:
        raise ValueError("need N >= 1 and R >= 1")
    if not 0 <= k <= N * R:
        raise ValueError("need 0 <= k <= N*R")

    def log_comb(n: int, r: int) -> float:
        return lgamma(n + 1) - lgamma(r + 1) - lgamma(n - r + 1)

    log_count = log_comb(N * R + N - 1, N - 1)
    if N * R <= 64:
        tail = comb(N * R - k + N - 1, N - 1) / comb(N * R + N - 1, N - 1)
    else:
        tail = math.exp(log_comb(N * R - k + N - 1, N - 1) - log_count)
    return tail, log_count
