"""The G operator, its spectrum, and the thermodynamic functionals built on it.

``G = (I - f' w)^T (I - f' w)`` with ``f'`` the activation slope at the
dataset-mean state. For a layered septuple ``det G = 1``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import EigenDecomposition, sym_eig
from .septuple import Septuple, propagate

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
THETA = 10.0
EIG_FLOOR = 1e-300
DYNAMICAL_TOL = 1e-12
SMALL_BETA = 1e-8


class DomainError(ValueError):
    pass


class WindowDominatedWarning(UserWarning):
    """Free energy evaluated in the beta -> 0 limit where the window term dominates."""


# --- operator -----------------------------------------------------------------

def mean_state(s: Septuple, inputs: np.ndarray) -> np.ndarray:
    """Mean of the forward fixed states over a batch of input records."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    return propagate(inputs, s).x.mean(axis=0)


def fprime_diag(s: Septuple, mean: np.ndarray) -> np.ndarray:
    """Diagonal of f' evaluated at ``w <x> + b``."""
    return s.fprime(s.weights @ np.asarray(mean, dtype=np.float64) + s.bias)


def linearised_map(s: Septuple, fprime: np.ndarray) -> np.ndarray:
    return np.eye(s.n) - fprime[:, None] * s.weights


def g_operator(s: Septuple, fprime: np.ndarray) -> np.ndarray:
    m = linearised_map(s, fprime)
    g = m.T @ m
    return 0.5 * (g + g.T)


def g_operator_record_mean(s: Septuple, inputs: np.ndarray) -> np.ndarray:
    """Average of per-record G operators (comparison option; det is not 1)."""
    xs = propagate(np.atleast_2d(inputs), s).x
    acc = np.zeros((s.n, s.n))
    for x in xs:
        acc += g_operator(s, fprime_diag(s, x))
    return acc / len(xs)


def _invariant_basis(s: Septuple, fprime: np.ndarray) -> np.ndarray | None:
    """Orthonormal basis ``[Q, Q_perp]`` with G = I on span(Q_perp).

    ``G - I`` lives in the span of the non-input coordinate axes plus the
    row space of the input columns of ``f' w``. Returns None when the
    reduction would not shrink the problem.
    """
    topo = s.topology
    inp, non = topo.input_ids, topo.non_input_ids
    n_in = inp.size
    k = min(non.size, n_in)
    if non.size + k >= s.n or n_in == 0:
        return None
    a_in = (fprime[non, None] * s.weights[np.ix_(non, inp)]).T  # (n_in, n_non)
    q_full, _ = np.linalg.qr(a_in, mode="complete")
    basis = np.zeros((s.n, s.n))
    basis[non, np.arange(non.size)] = 1.0
    basis[np.ix_(inp, np.arange(non.size, s.n))] = q_full
    return basis, non.size + k


def spectrum(s: Septuple, fprime: np.ndarray, reduce: bool = True) -> EigenDecomposition:
    """Eigen-decomposition of G, restricted to its nontrivial invariant subspace."""
    g = g_operator(s, fprime)
    reduced = _invariant_basis(s, fprime) if reduce else None
    if reduced is None:
        return sym_eig(g)
    basis, k = reduced
    q = basis[:, :k]
    small = q.T @ g @ q
    dec = sym_eig(0.5 * (small + small.T))
    lam = np.concatenate([dec.eigenvalues, np.ones(s.n - k)])
    vec = np.concatenate([q @ dec.eigenvectors, basis[:, k:]], axis=1)
    order = np.argsort(-lam, kind="stable")
    return EigenDecomposition(lam[order], vec[:, order], dec.sweeps)


def safe_log(lambdas: np.ndarray) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=np.float64)
    if np.any(lam < EIG_FLOOR):
        log.warning("eigenvalue below %.0e clamped before log: spectrum is structurally broken "
                    "(min %.3e)", EIG_FLOOR, float(lam.min()))
        lam = np.maximum(lam, EIG_FLOOR)
    return np.log(lam)


# --- spectral functionals -----------------------------------------------------

def moments(log_lambdas: np.ndarray) -> tuple[float, float, float]:
    """(sum log, sum log^2, sum log^3)."""
    ll = np.asarray(log_lambdas, dtype=np.float64)
    return float(ll.sum()), float(np.sum(ll ** 2)), float(np.sum(ll ** 3))


def complexity_n(lambdas: np.ndarray, n: int, N: int | None = None) -> float:
    lam = np.asarray(lambdas, dtype=np.float64)
    N = lam.size if N is None else N
    if not 1 <= n <= lam.size:
        raise ValueError(f"n={n} out of range 1..{lam.size}")
    if np.any(np.diff(lam) > 0):
        raise ValueError("eigenvalues must be sorted in descending order")
    return float(-0.5 * np.sum(safe_log(lam[:n])) + 0.5 * N * LOG_2PI)


def n_greater(lambdas: np.ndarray, beta: float, theta: float = THETA) -> int:
    if theta <= 0:
        raise ValueError("theta must be positive")
    return int(np.sum(beta * np.asarray(lambdas) > theta))


def _log_args(beta: float, lambdas: np.ndarray, m: float) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=np.float64)
    args = 1.0 - beta * m + beta * lam
    bad = np.nonzero(args <= 0)[0]
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"1 - beta m + beta lambda <= 0 for eigenvalue {lam[i]!r} (index {i}) "
                          f"at beta={beta}, m={m}")
    return args


def log_z(beta: float, lambdas: np.ndarray, m: float = 0.0, N: int | None = None) -> float:
    """Gaussian-window log partition function without the mean-state term."""
    lam = np.asarray(lambdas, dtype=np.float64)
    N = lam.size if N is None else N
    return float(-0.5 * np.sum(np.log(_log_args(beta, lam, m))) + 0.5 * N * LOG_2PI)


def free_energy(beta: float, lambdas: np.ndarray, m: float = 0.0, N: int | None = None) -> float:
    lam = np.asarray(lambdas, dtype=np.float64)
    N = lam.size if N is None else N
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    _log_args(beta, lam, m)
    if beta < SMALL_BETA:
        warnings.warn(f"beta={beta:g}: free energy dominated by the window term", WindowDominatedWarning)
        return float(0.5 * np.sum(lam - m) - 0.5 * N * LOG_2PI / beta)
    return -log_z(beta, lam, m, N) / beta


@dataclass(frozen=True)
class AverageLoss:
    exact: float
    approx: float  # N_> / (2 beta)
    n_greater: int


def avg_loss(beta: float, lambdas: np.ndarray, m: float = 0.0, theta: float = THETA) -> AverageLoss:
    """``U = -d log Z / d beta`` for the Gaussian model, plus its N_> estimate."""
    lam = np.asarray(lambdas, dtype=np.float64)
    args = _log_args(beta, lam, m)
    exact = 0.5 * np.sum((lam - m) / args)
    ng = n_greater(lam, beta, theta)
    return AverageLoss(float(exact), ng / (2.0 * beta), ng)


@dataclass(frozen=True)
class Entropies:
    total: float
    thermo: float
    complexity: float
    n_greater: int

    @property
    def residual(self) -> float:
        return self.total - (self.thermo + self.complexity)


def complexity_theta(lambdas: np.ndarray, beta: float, theta: float = THETA, N: int | None = None) -> float:
    lam = np.asarray(lambdas, dtype=np.float64)
    N = lam.size if N is None else N
    big = beta * lam > theta
    return float(-0.5 * np.sum(safe_log(lam[big])) + 0.5 * N * LOG_2PI)


def thermo_entropy(beta: float, n_gt: int) -> float:
    return float(-0.5 * n_gt * np.log(beta) + 0.5 * n_gt)


def entropies(beta: float, lambdas: np.ndarray, m: float = 0.0, N: int | None = None,
              n_gt: int | None = None, theta: float = THETA) -> Entropies:
    """Total entropy ``log Z + beta U`` and its thermodynamic/complexity split."""
    lam = np.asarray(lambdas, dtype=np.float64)
    N = lam.size if N is None else N
    ng = n_greater(lam, beta, theta) if n_gt is None else int(n_gt)
    total = log_z(beta, lam, m, N) + beta * avg_loss(beta, lam, m, theta).exact
    return Entropies(total, thermo_entropy(beta, ng), complexity_theta(lam, beta, theta, N), ng)


@dataclass(frozen=True)
class Decomposed:
    """Free energy and entropy with the large/small eigenvalue split applied."""
    F: float
    A: float
    C: float
    S_total: float
    S_thermo: float


def decomposed(beta: float, lambdas: np.ndarray, theta: float = THETA, N: int | None = None) -> Decomposed:
    lam = np.asarray(lambdas, dtype=np.float64)
    N = lam.size if N is None else N
    big = beta * lam > theta
    ng = int(big.sum())
    sum_big = float(np.sum(safe_log(lam[big])))
    A = ng * np.log(beta) / (2.0 * beta)
    C = -0.5 * sum_big + 0.5 * N * LOG_2PI
    F = sum_big / (2.0 * beta) + A - 0.5 * N * LOG_2PI / beta
    s_thermo = thermo_entropy(beta, ng)
    # beta^2 dF/dbeta at fixed N_>
    s_total = -0.5 * sum_big - 0.5 * ng * np.log(beta) + 0.5 * ng + 0.5 * N * LOG_2PI
    return Decomposed(float(F), float(A), float(C), float(s_total), s_thermo)


def laplacian_f(beta: float, lambdas: np.ndarray) -> float:
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    lam = np.asarray(lambdas, dtype=np.float64)
    return float(-0.5 * beta * np.sum((1.0 + beta * lam) ** -2))


def beta_from_log_lambda(g: float) -> float:
    """Invert ``g = 3 log(-1/2 + sqrt(1/4 + 1/beta))``."""
    return float(1.0 / ((np.exp(g / 3.0) + 0.5) ** 2 - 0.25))


@dataclass(frozen=True)
class GapEstimate:
    beta: float
    gap_location: float
    gap_width: float
    defined: bool


def beta_from_gap(log_lambdas: np.ndarray) -> GapEstimate:
    """Locate the widest gap among the negative log-eigenvalues and map it to beta."""
    neg = np.sort(np.asarray(log_lambdas)[np.asarray(log_lambdas) < -DYNAMICAL_TOL])
    if neg.size < 2:
        return GapEstimate(float("nan"), float("nan"), 0.0, False)
    gaps = np.diff(neg)
    i = int(np.argmax(gaps))
    g = 0.5 * (neg[i] + neg[i + 1])
    return GapEstimate(beta_from_log_lambda(g), float(g), float(gaps[i]), True)


def beta_self_consistent(lambdas: np.ndarray, u: float, beta0: float | None = None, theta: float = THETA,
                         max_iter: int = 10_000) -> tuple[float, bool]:
    """Largest fixed point of ``beta = N_>(beta) / (2 U)``; returns (beta, converged).

    The map is non-decreasing in beta and bounded by ``N / (2U)``, so iterating
    down from that bound (or from ``beta0`` if larger) decreases monotonically
    onto the largest fixed point. No fixed point gives nan.
    """
    lam = np.asarray(lambdas)
    if not u > 0:
        return float("nan"), False
    beta = lam.size / (2.0 * u)
    if beta0 is not None and np.isfinite(beta0):
        beta = max(beta, float(beta0))
    for _ in range(max_iter):
        ng = n_greater(lam, beta, theta)
        if ng == 0:
            return float("nan"), False
        nxt = ng / (2.0 * u)
        if nxt == beta:
            return float(beta), True
        beta = nxt
    return float(beta), False


def reduction_error(dec: EigenDecomposition, n: int) -> float:
    """Relative Frobenius error of G rebuilt from its top ``n`` eigenpairs."""
    full = dec.reconstruct()
    v = dec.eigenvectors[:, :n]
    approx = (v * dec.eigenvalues[:n]) @ v.T
    return float(np.linalg.norm(full - approx) / np.linalg.norm(full))


def dynamical(log_lambdas: np.ndarray, tol: float = DYNAMICAL_TOL) -> np.ndarray:
    ll = np.asarray(log_lambdas)
    return ll[np.abs(ll) >= tol]


def histogram(log_lambdas: np.ndarray, bin_width: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Counts and left bin edges of the dynamical log-eigenvalues (bins aligned to 0)."""
    ll = dynamical(log_lambdas)
    if ll.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    lo = np.floor(ll.min() / bin_width) * bin_width
    hi = (np.floor(ll.max() / bin_width) + 1) * bin_width
    edges = np.arange(lo, hi + 0.5 * bin_width, bin_width)
    counts, edges = np.histogram(ll, bins=edges)
    return counts, edges[:-1]


# --- toy two-peak model ---------------------------------------------------------

def toy_minus_laplacian(beta: float, gamma: float, N: int, log_lambda) -> np.ndarray:
    """``-dF`` for a fraction gamma of eigenvalues at lambda and the rest at lambda^(gamma/(gamma-1))."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    lam = np.exp(np.asarray(log_lambda, dtype=np.float64))
    p = gamma / (gamma - 1.0)
    return 0.5 * N * beta * (gamma / (1.0 + beta * lam) ** 2 + (1.0 - gamma) / (1.0 + beta * lam ** p) ** 2)


@dataclass(frozen=True)
class Extremum:
    log_lambda: float
    kind: str  # "min" or "max"
    value: float


def toy_extrema(beta: float, gamma: float, N: int, grid: np.ndarray | None = None,
                tol: float = 1e-10) -> list[Extremum]:
    """Interior extrema of the toy curve: bracket on the grid, then golden-section refine."""
    from scipy.optimize import minimize_scalar

    grid = np.linspace(-12.0, 12.0, 4801) if grid is None else np.asarray(grid, dtype=np.float64)
    y = toy_minus_laplacian(beta, gamma, N, grid)
    d = np.diff(y)
    out = []
    for i in range(1, len(d)):
        if d[i - 1] > 0 >= d[i] or d[i - 1] < 0 <= d[i]:
            kind = "max" if d[i - 1] > 0 else "min"
            sign = -1.0 if kind == "max" else 1.0
            res = minimize_scalar(lambda u: sign * float(toy_minus_laplacian(beta, gamma, N, u)),
                                  bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden",
                                  tol=tol)
            u = float(res.x)
            out.append(Extremum(u, kind, float(toy_minus_laplacian(beta, gamma, N, u))))
    return out


def toy_global_min_beta(gamma: float) -> float:
    """Smallest beta above which log lambda = 0 is the global minimum of the toy curve.

    The curve tends to ``N beta gamma / 2`` and ``N beta (1 - gamma) / 2`` in the
    two tails and equals ``N beta / (2 (1 + beta)^2)`` at log lambda = 0, so the
    centre wins once ``(1 + beta)^-2 < gamma``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    return float(1.0 / np.sqrt(gamma) - 1.0)


# --- reports --------------------------------------------------------------------

@dataclass
class SpectralReport:
    lambdas: np.ndarray
    log_lambdas: np.ndarray
    sum_log: float
    mu2: float
    mu3: float
    mean_state: np.ndarray
    eig_coeffs: np.ndarray
    n_greater: int
    complexity_n: dict = field(default_factory=dict)
    beta_gap: float = float("nan")
    gap_location: float = float("nan")
    beta_selfconsistent: float = float("nan")
    theta: float = THETA
    decomposition: EigenDecomposition | None = None

    @property
    def N(self) -> int:
        return self.lambdas.size


def spectral_report(s: Septuple, inputs: np.ndarray, theta: float = THETA, u_bulk: float | None = None,
                    complexity_ns=(20,), reduce: bool = True) -> SpectralReport:
    mean = mean_state(s, inputs)
    fp = fprime_diag(s, mean)
    dec = spectrum(s, fp, reduce=reduce)
    lam = dec.eigenvalues
    ll = safe_log(lam)
    total, mu2, mu3 = moments(ll)
    coeffs = dec.eigenvectors.T @ mean
    gap = beta_from_gap(ll)
    N = lam.size
    cn = {}
    for n in complexity_ns:
        n = int(n) if n > 0 else N + int(n)
        if 1 <= n <= N:
            cn[n] = complexity_n(lam, n, N)
    beta_sc = float("nan")
    if u_bulk is not None:
        beta_sc, _ = beta_self_consistent(lam, u_bulk, theta=theta)
    beta_ref = gap.beta if gap.defined else 1.0
    return SpectralReport(lam, ll, total, mu2, mu3, mean, coeffs, n_greater(lam, beta_ref, theta), cn,
                          gap.beta, gap.gap_location, beta_sc, theta, dec)


@dataclass
class ThermoRecord:
    epoch: int
    beta: float
    U_bulk: float
    U_boundary: float
    F: float
    A: float
    C: float
    S_total: float
    S_thermo: float
    n_greater: int = 0


def thermo_record(epoch: int, beta: float, lambdas: np.ndarray, u_bulk: float, u_boundary: float,
                  m: float = 0.0, theta: float = THETA) -> ThermoRecord:
    lam = np.asarray(lambdas)
    if not np.isfinite(beta) or beta <= 0:
        nan = float("nan")
        return ThermoRecord(epoch, beta, u_bulk, u_boundary, nan, nan, nan, nan, nan, 0)
    ent = entropies(beta, lam, m, theta=theta)
    dec = decomposed(beta, lam, theta)
    return ThermoRecord(epoch, beta, u_bulk, u_boundary, free_energy(beta, lam, m), dec.A,
                        ent.complexity, ent.total, ent.thermo, ent.n_greater)


def first_law_residual(a: ThermoRecord, b: ThermoRecord) -> float:
    """``|dU - T dS0 - T dC| / |dU|`` between two records at the later record's temperature."""
    du = b.U_bulk - a.U_bulk
    t = 1.0 / b.beta
    res = du - t * (b.S_thermo - a.S_thermo) - t * (b.C - a.C)
    return float(abs(res) / abs(du)) if du != 0 else float("inf") if res != 0 else 0.0


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float


def complexity_loss_fit(complexity: np.ndarray, loss: np.ndarray, tail: float = 1.0) -> LineFit:
    """Least-squares fit ``C = a + slope * log U`` over the last ``tail`` fraction of points."""
    from scipy.stats import linregress

    c = np.asarray(complexity, dtype=np.float64)
    u = np.asarray(loss, dtype=np.float64)
    k = max(2, int(round(tail * c.size)))
    if c.size < 2 or k > c.size:
        raise ValueError("need at least two points for a line fit")
    fit = linregress(np.log(u[-k:]), c[-k:])
    return LineFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2))
