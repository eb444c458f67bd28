"""Multiple-tests similarity (Sim-M), its Chernoff bounds, and a Monte-Carlo check.

Two regimes share one :class:`TestModel`:

* ``binary``: a single test between two nodes passes with probability ``p``
  (same category) or ``q`` (different categories).
* ``real``: a single test returns a similarity in [-1, 1] with mean
  ``s_plus`` (same category) or ``s_minus`` (different categories).

In both regimes the candidate pool shared by two nodes holds ``m`` nodes, an
``alpha`` fraction of which share the first node's category.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, sparse, special, stats

from .errors import InfeasibleBoundError, ParameterError, ValidationError
from .graph import KnnGraph, as_features, l2_normalize, sim_s

BINARY = "binary"
REAL = "real"
CHUNK_TRIALS = 500


@dataclass(frozen=True)
class TestModel:
    p: float = 0.8
    q: float = 0.2
    alpha: float = 0.7
    m: int | None = None
    gamma: float = 2.0
    s_plus: float = 0.8
    s_minus: float = 0.3
    mode: str = BINARY
    noise_std: float = 0.2

    __test__ = False  # keep pytest from collecting this as a test class

    def __post_init__(self):
        if self.mode not in (BINARY, REAL):
            raise ParameterError(f"mode must be 'binary' or 'real', got {self.mode!r}")
        if not 0.5 < self.alpha <= 1:
            raise ParameterError(f"alpha must lie in (1/2, 1], got {self.alpha}")
        if not self.gamma > 1:
            raise ParameterError(f"gamma must exceed 1, got {self.gamma}")
        if self.m is not None and (self.m < 0 or int(self.m) != self.m):
            raise ParameterError(f"m must be a non-negative integer, got {self.m}")
        if self.mode == BINARY:
            if not (0 < self.p <= 1 and 0 <= self.q < 1):
                raise ParameterError(f"need p in (0, 1] and q in [0, 1), got p={self.p}, q={self.q}")
            if not self.p > self.q:
                raise InfeasibleBoundError(f"tests cannot separate categories with p={self.p} <= q={self.q}")
        else:
            if not (-1 < self.s_minus < 1 and -1 < self.s_plus < 1):
                raise ParameterError(f"similarity means must lie in (-1, 1), got {self.s_minus}, {self.s_plus}")
            if not self.s_plus > self.s_minus:
                raise InfeasibleBoundError(f"need s_plus > s_minus, got {self.s_plus} <= {self.s_minus}")
            if self.noise_std <= 0:
                raise ParameterError("noise_std must be positive")

    @property
    def cross_mean(self) -> float:
        """Expected single product term for a pair from different categories."""
        if self.mode == BINARY:
            return self.p * self.q
        return self.s_plus * self.s_minus

    @property
    def same_mean(self) -> float:
        """Expected single product term for a pair from the same category."""
        a = self.alpha
        if self.mode == BINARY:
            return a * self.p**2 + (1 - a) * self.q**2
        return a * self.s_plus**2 + (1 - a) * self.s_minus**2

    def with_m(self, m: int) -> "TestModel":
        return TestModel(**{**self.__dict__, "m": int(m)})


@dataclass(frozen=True)
class SimMScore:
    value: float
    support: int
    mode: str = REAL


@dataclass
class SimulationReport:
    trials: int
    m: int
    noisy_mean: float
    noisy_expected: float
    miss_mean: float
    miss_expected: float
    noisy_rate_single: float
    miss_rate_single: float
    noisy_rate_post: float
    miss_rate_post: float
    threshold_used: float
    delta: float
    noisy_single: np.ndarray = field(repr=False)
    miss_single: np.ndarray = field(repr=False)
    simm_same: np.ndarray = field(repr=False)
    simm_cross: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        keys = ("trials", "m", "noisy_mean", "noisy_expected", "miss_mean", "miss_expected",
                "noisy_rate_single", "miss_rate_single", "noisy_rate_post", "miss_rate_post",
                "threshold_used", "delta")
        return {k: getattr(self, k) for k in keys}


# --------------------------------------------------------------------------
# Sim-M on a concrete graph
# --------------------------------------------------------------------------


def sim_m(graph: KnnGraph, features, i: int, j: int, mode: str = REAL,
          binary_threshold: float = 0.5) -> SimMScore:
    """Average over common kNN candidates of the product of single tests.

    ``real`` multiplies cosines, ``binary`` multiplies the indicators
    ``cos >= binary_threshold``. An empty candidate intersection yields a
    score of 0 with support 0.
    """
    fm = as_features(features)
    n = graph.n
    if not (0 <= i < n and 0 <= j < n):
        raise ValidationError(f"node id out of range: ({i}, {j}) for N={n}")
    if i == j:
        raise ValidationError("sim_m needs two distinct nodes")
    if mode not in (BINARY, REAL):
        raise ParameterError(f"unknown mode {mode!r}")
    common = np.intersect1d(graph.neighbor_ids(i), graph.neighbor_ids(j))
    if common.size == 0:
        return SimMScore(0.0, 0, mode)
    x = fm.data
    s_ik = np.array([sim_s(x[i], x[k]) for k in common])
    s_kj = np.array([sim_s(x[k], x[j]) for k in common])
    if mode == BINARY:
        s_ik = (s_ik >= binary_threshold).astype(float)
        s_kj = (s_kj >= binary_threshold).astype(float)
    return SimMScore(float(np.mean(s_ik * s_kj)), int(common.size), mode)


def sim_m_edges(graph: KnnGraph, features, mode: str = REAL, binary_threshold: float = 0.5):
    """Sim-M for every directed kNN edge at once.

    Returns ``(probe, neighbor, sim_s, sim_m, support)`` arrays in edge order.
    Cosine is symmetric, so with ``T[i, k] = test(i, k)`` on kNN entries the
    Sim-M numerator of edge (i, j) is ``(T T^t)[i, j]``.
    """
    x = l2_normalize(as_features(features)).data
    n, k = graph.ids.shape
    valid = np.arange(k)[None, :] < graph.counts[:, None]
    rows = np.repeat(np.arange(n), graph.counts)
    cols = graph.ids[valid]
    cos = np.clip(np.einsum("ed,ed->e", x[rows], x[cols]), -1.0, 1.0)
    tests = (cos >= binary_threshold).astype(float) if mode == BINARY else cos
    t = sparse.csr_matrix((tests, (rows, cols)), shape=(n, n))
    ind = sparse.csr_matrix((np.ones_like(cos), (rows, cols)), shape=(n, n))
    num = np.asarray((t @ t.T)[rows, cols]).ravel()
    support = np.rint(np.asarray((ind @ ind.T)[rows, cols]).ravel()).astype(np.int64)
    value = np.divide(num, support, out=np.zeros_like(num), where=support > 0)
    return rows, cols, cos, value, support


# --------------------------------------------------------------------------
# Bounds
# --------------------------------------------------------------------------


def chernoff_tail_bound(mu: float, epsilon: float) -> float:
    """``exp(-eps^2 mu / 3)``: bound on either tail of a sum of Bernoullis."""
    if not 0 < epsilon < 1:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if mu <= 0:
        raise ParameterError("mu must be positive")
    return math.exp(-(epsilon**2) * mu / 3.0)


def bounded_tail_bound(mu: float, epsilon: float, m: int, lower: float = -1.0, upper: float = 1.0) -> float:
    """``exp(-eps^2 mu^2 / (m (b-a)^2))`` for a sum of m variables in [a, b]."""
    if not 0 < epsilon < 1:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if m <= 0 or upper <= lower:
        raise ParameterError("need m > 0 and upper > lower")
    return math.exp(-(epsilon**2) * mu**2 / (m * (upper - lower) ** 2))


def single_test_expectations(model: TestModel, m: int | None = None) -> tuple[float, float]:
    """Expected (noisy, missing) edge counts of the single test over the pool."""
    m = _pool_size(model, m)
    a = model.alpha
    if model.mode == BINARY:
        return (1 - a) * model.q * m, a * (1 - model.p) * m
    return (1 - a) * model.s_minus * m, a * (1 - model.s_plus) * m


def error_floor(model: TestModel) -> float:
    """``min`` of the two single-test per-candidate error rates."""
    a = model.alpha
    if model.mode == BINARY:
        return min((1 - a) * model.q, a * (1 - model.p))
    return min((1 - a) * model.s_minus, a * (1 - model.s_plus))


def target_delta(model: TestModel) -> float:
    """Failure probability that shrinks the single-test error by ``gamma``."""
    return error_floor(model) / model.gamma


def _separation_ratio(hi: float, lo: float, alpha: float) -> tuple[float, float]:
    spread = (2 * alpha - 1) * (hi**2 - lo**2)
    return (hi - lo) ** 2 + spread, (hi + lo) ** 2 + spread


def _log_gamma_over_floor(model: TestModel) -> float:
    floor = error_floor(model)
    if floor <= 0:
        raise InfeasibleBoundError("error floor is zero: the gamma-reduced failure probability vanishes")
    return math.log(model.gamma) - math.log(floor)


def _strict_ceiling(bound: float) -> int:
    if not math.isfinite(bound):
        raise InfeasibleBoundError(f"bound is not finite ({bound})")
    return int(math.floor(bound)) + 1


def min_m_bound_binary(model: TestModel) -> float:
    """Right-hand side of the pool-size condition for binary tests."""
    p, q = model.p, model.q
    if p <= q or p * q <= 0:
        raise InfeasibleBoundError(f"bound is singular for p={p}, q={q}")
    gap, total = _separation_ratio(p, q, model.alpha)
    return 3.0 * total**2 / (p * q * gap**2) * _log_gamma_over_floor(model)


def min_m_binary(model: TestModel) -> int:
    """Smallest integer pool size strictly above :func:`min_m_bound_binary`."""
    if model.mode != BINARY:
        raise ParameterError("min_m_binary needs a binary-mode model")
    return _strict_ceiling(min_m_bound_binary(model))


def min_m_bound_real(model: TestModel) -> float:
    sp, sm = model.s_plus, model.s_minus
    if not sp > sm > 0:
        raise InfeasibleBoundError(f"real-valued bound needs s_plus > s_minus > 0, got {sp}, {sm}")
    gap, total = _separation_ratio(sp, sm, model.alpha)
    return 4.0 * total**2 / (sp**2 * sm**2 * gap**2) * _log_gamma_over_floor(model)


def min_m_real(model: TestModel) -> int:
    """Smallest integer pool size for real-valued tests bounded in [-1, 1]."""
    if model.mode != REAL:
        raise ParameterError("min_m_real needs a real-mode model")
    return _strict_ceiling(min_m_bound_real(model))


def min_m(model: TestModel) -> int:
    return min_m_binary(model) if model.mode == BINARY else min_m_real(model)


def deviations(model: TestModel, delta: float, m: int | None = None) -> tuple[float, float]:
    """Relative deviations (cross, same) reached with probability ``1 - delta``."""
    m = _pool_size(model, m)
    if m <= 0:
        raise ParameterError("pool size must be positive")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    lo, hi = model.cross_mean, model.same_mean
    log_inv = -math.log(delta)
    if model.mode == BINARY:
        return math.sqrt(3 * log_inv / (lo * m)), math.sqrt(3 * log_inv / (hi * m))
    return math.sqrt(4 * log_inv / (lo**2 * m)), math.sqrt(4 * log_inv / (hi**2 * m))


def separation_holds(model: TestModel, delta: float, m: int | None = None) -> bool:
    """Whether the inflated cross mean stays below the deflated same mean."""
    eps_cross, _ = deviations(model, delta, m)
    gap, total = _separation_ratio(*((model.p, model.q) if model.mode == BINARY
                                     else (model.s_plus, model.s_minus)), model.alpha)
    return eps_cross < gap / total


def threshold_s_t(model: TestModel, delta: float, m: int | None = None) -> float:
    """Decision threshold halfway between the two high-probability bounds."""
    eps_cross, eps_same = deviations(model, delta, m)
    lo, hi = model.cross_mean, model.same_mean
    return (1 + eps_cross) * lo / 2 + (1 - eps_same) * hi / 2


def _pool_size(model: TestModel, m: int | None) -> int:
    if m is not None:
        return int(m)
    if model.m is None:
        raise ParameterError("model has no pool size m")
    return int(model.m)


# --------------------------------------------------------------------------
# Monte-Carlo simulation
# --------------------------------------------------------------------------


@lru_cache(maxsize=64)
def truncated_normal_loc(mean: float, std: float, lower: float = -1.0, upper: float = 1.0) -> float:
    """Location of a normal truncated to [lower, upper] whose mean is ``mean``."""
    if not lower < mean < upper:
        raise ParameterError(f"mean {mean} outside ({lower}, {upper})")

    def gap(loc):
        a, b = (lower - loc) / std, (upper - loc) / std
        return stats.truncnorm.mean(a, b, loc=loc, scale=std) - mean

    span = upper - lower + 20 * std
    return optimize.brentq(gap, lower - span, upper + span, xtol=1e-14)


def _truncated_normal(rng: np.random.Generator, loc: float, std: float, size, lower=-1.0, upper=1.0):
    lo = special.ndtr((lower - loc) / std)
    hi = special.ndtr((upper - loc) / std)
    u = lo + rng.random(size) * (hi - lo)
    return np.clip(loc + std * special.ndtri(u), lower, upper)


def _simulate_chunk(model: TestModel, m: int, trials: int, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    n_same = int(round(model.alpha * m))
    is_same = np.arange(m) < n_same

    if model.mode == BINARY:
        def draw(prob_mask):
            # candidates flagged True use p, others q
            prob = np.where(prob_mask, model.p, model.q)
            return (rng.random((trials, m)) < prob).astype(np.float64)
    else:
        loc_p = truncated_normal_loc(model.s_plus, model.noise_std)
        loc_m = truncated_normal_loc(model.s_minus, model.noise_std)

        def draw(prob_mask):
            loc = np.where(prob_mask, loc_p, loc_m)
            return _truncated_normal(rng, loc, model.noise_std, (trials, m))

    # same-category pair (i, j): candidates of i's category are same-category to both
    t_ik = draw(is_same)
    t_kj = draw(is_same)
    simm_same = np.mean(t_ik * t_kj, axis=1)
    noisy = t_ik[:, ~is_same].sum(axis=1)
    miss = (1.0 - t_ik[:, is_same]).sum(axis=1)

    # cross-category pair: candidates of i's category differ from j and vice versa
    c_ik = draw(is_same)
    c_kj = draw(~is_same)
    simm_cross = np.mean(c_ik * c_kj, axis=1)
    return noisy, miss, simm_same, simm_cross


def simulate(model: TestModel, trials: int, seed: int = 0, m: int | None = None,
             threshold: float | None = None, delta: float | None = None,
             workers: int = 1) -> SimulationReport:
    """Draw ``trials`` candidate pools and score a same- and a cross-category pair.

    Per trial the single-test statistics count edges between the probe and its
    candidates (noisy: connected to the other category; missing: not connected
    to its own). In ``real`` mode these become the sums of similarities to
    the other category and of ``1 - s`` to the own category.

    Sim-M scores are thresholded at ``threshold`` (default: the midpoint
    threshold at the gamma-reduced ``delta``). A cross pair scoring above it
    is a noisy edge, a same pair at or below it a missing edge.

    Trials are split into fixed-size chunks, each with its own seed substream,
    so the result does not depend on ``workers``.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    m = m if m is not None else (model.m if model.m is not None else min_m(model))
    m = int(m)
    if m < 1:
        raise ParameterError("pool size must be >= 1")
    if delta is None:
        delta = target_delta(model)
    if threshold is None:
        threshold = threshold_s_t(model, delta, m)

    sizes = [min(CHUNK_TRIALS, trials - s) for s in range(0, trials, CHUNK_TRIALS)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, streams))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _simulate_chunk(model, m, *a), jobs))
    else:
        parts = [_simulate_chunk(model, m, *a) for a in jobs]
    noisy, miss, same, cross = (np.concatenate(x) for x in zip(*parts))

    exp_noisy, exp_miss = single_test_expectations(model, m)
    return SimulationReport(
        trials=trials,
        m=m,
        noisy_mean=float(noisy.mean()),
        noisy_expected=exp_noisy,
        miss_mean=float(miss.mean()),
        miss_expected=exp_miss,
        noisy_rate_single=float(noisy.mean() / m),
        miss_rate_single=float(miss.mean() / m),
        noisy_rate_post=float(np.mean(cross > threshold)),
        miss_rate_post=float(np.mean(same <= threshold)),
        threshold_used=float(threshold),
        delta=float(delta),
        noisy_single=noisy,
        miss_single=miss,
        simm_same=same,
        simm_cross=cross,
    )


def write_simulation_csv(path, report: SimulationReport, extra: dict | None = None) -> None:
    """Per-trial CSV followed by a blank line and ``key=value`` summary lines."""
    from .io import format_kv

    with open(path, "w") as fh:
        fh.write("trial,noisy_single,miss_single,simm_same,simm_cross\n")
        for t in range(report.trials):
            fh.write(f"{t},{report.noisy_single[t]:.6f},{report.miss_single[t]:.6f},"
                     f"{report.simm_same[t]:.6f},{report.simm_cross[t]:.6f}\n")
        fh.write("\n")
        fh.write(format_kv({**report.summary(), **(extra or {})}))
