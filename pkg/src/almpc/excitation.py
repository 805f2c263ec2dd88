"""Persistent excitation: expectation matrices, PE matrices, check and fallback."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .environment import RegressorSpec
from .errors import HorizonMismatch, NoPreviousSolution, UnsupportedOrder
from .numerics import min_eigenvalue
from .plant import LiftedPlant
from .polytope import HPolytope, symmetric_box

MC_SAMPLES = 10_000
CLOSED_FORM_MAX_ORDER = 3
# relative guard on beta: a rank-deficient PSD sum has lambda_min ~ +-1e-16 * norm
BETA_RTOL = 1e-12


@dataclass(frozen=True)
class VirtualSignalSpec:
    """Zero-mean excitation ``s`` uniform on ``[-s_max, s_max]``."""

    s_max: float
    gain2: float = 1.0  # output variance per unit input variance after plant filtering

    def __post_init__(self):
        if not self.s_max > 0:
            raise ValueError("s_max must be positive")

    @property
    def S(self) -> HPolytope:
        return symmetric_box(self.s_max, 1)

    @property
    def eps_s(self) -> float:
        return self.s_max ** 2 / 3.0

    @property
    def eps_tilde(self) -> float:
        return self.eps_s * self.gain2

    def draw(self, rng: np.random.Generator, size=None):
        return rng.uniform(-self.s_max, self.s_max, size)


def filter_gain2(plant: LiftedPlant) -> float:
    """Squared gain from ``s`` to the output.

    ARX plants: ``sum b_j^2``.  Otherwise the first nonzero Markov parameter
    ``C A^j B`` (one-step filtering).
    """
    if plant.arx is not None:
        return float(np.sum(np.square(plant.arx[1])))
    M = plant.B
    for _ in range(plant.nx):
        g = plant.C @ M
        if np.any(np.abs(g) > 1e-14):
            return float(np.sum(g ** 2))
        M = plant.A @ M
    return 0.0


def signal_spec(s_max: float, plant: LiftedPlant) -> VirtualSignalSpec:
    return VirtualSignalSpec(float(s_max), filter_gain2(plant))


# ---------------------------------------------------------------------------
# moments of the perturbed output


def noise_moment(k: int, eps: float, law: str = "gaussian") -> float:
    """``E[s^k]`` for zero-mean ``s`` with variance ``eps``."""
    if k % 2:
        return 0.0
    j = k // 2
    if law == "gaussian":
        df = 1.0
        for i in range(1, 2 * j, 2):
            df *= i
        return df * eps ** j
    if law == "uniform":
        return (3.0 * eps) ** j / (k + 1)
    raise ValueError(f"unknown law {law!r}")


def _power_expectation(y: float, eps: float, k: int, law: str) -> float:
    """``E[(y + s)^k]`` by binomial expansion."""
    return sum(comb(k, i) * y ** (k - i) * noise_moment(i, eps, law) for i in range(k + 1))


def expectation_matrix(y: float, eps: float, n: int, law: str = "gaussian") -> np.ndarray:
    """``E[phi(y+s) phi(y+s)']`` for ``phi(y) = (y, ..., y^n)``, ``n`` in {2, 3}.

    The default law reproduces the closed form with fourth moment ``3 eps^2``.
    """
    if n not in (2, 3):
        raise UnsupportedOrder(f"closed form only for orders 2 and 3, got {n}")
    E = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            E[i, j] = _power_expectation(float(y), float(eps), i + j + 2, law)
    return E


def expectation_determinant(y: float, eps: float, n: int = 2) -> float:
    """Closed-form determinant for the second-order Gaussian-moment matrix."""
    if n != 2:
        raise UnsupportedOrder("determinant polynomial given for order 2 only")
    return y ** 4 * eps + 3 * eps ** 3


def basis_expectation(spec: RegressorSpec, y, eps: float, law: str = "gaussian") -> np.ndarray:
    """Closed-form ``E[phi phi']`` for a single-axis monomial basis of order <= 3."""
    if spec.n_out != 1:
        raise NotImplementedError("single output axis only")
    if spec.order > CLOSED_FORM_MAX_ORDER:
        raise UnsupportedOrder(f"order {spec.order} exceeds the closed-form limit")
    t = (float(np.atleast_1d(y)[0]) - spec.center[0]) / spec.scale[0]
    e = eps / spec.scale[0] ** 2
    ex = spec.exponents[:, 0]
    return np.array([[_power_expectation(t, e, int(a + b), law) for b in ex] for a in ex])


@lru_cache(maxsize=8)
def _standard_draws(samples: int, law: str, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if law == "gaussian":
        d = rng.standard_normal(samples)
    elif law == "uniform":
        d = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), samples)
    else:
        raise ValueError(f"unknown law {law!r}")
    d.setflags(write=False)
    return d


def monte_carlo_expectation(y, eps: float, basis, samples: int = MC_SAMPLES,
                            law: str = "uniform", seed: int = 0) -> np.ndarray:
    """Sample average of ``phi(y+s) phi(y+s)'``; ``basis`` is an order or a spec.

    Draws are standardized once per ``(samples, law, seed)`` and scaled by
    ``sqrt(eps)``, so repeated calls are deterministic and cheap.
    """
    if samples < 10_000:
        raise ValueError("at least 10^4 samples are required")
    spec = RegressorSpec.monomials(int(basis)) if isinstance(basis, (int, np.integer)) else basis
    s = np.sqrt(eps) * _standard_draws(int(samples), law, int(seed))
    y0 = float(np.atleast_1d(y)[0])
    F = spec.phi((y0 + s)[:, None])
    E = F.T @ F / samples
    return 0.5 * (E + E.T)


def perturbed_expectation(spec: RegressorSpec, y, eps: float, law: str = "gaussian",
                          mc_law: str = "uniform") -> np.ndarray:
    """Closed form up to order 3, Monte Carlo above."""
    try:
        return basis_expectation(spec, y, eps, law)
    except UnsupportedOrder:
        return monte_carlo_expectation(y, eps, spec, law=mc_law)


# ---------------------------------------------------------------------------
# PE matrix and check


def predicted_outputs(u_seq, x0, plant: LiftedPlant, K, xs_bar, us_bar, N_u: int):
    """Outputs ``y_0..y_{N_u-1}``: ``u_seq`` first, then the mean terminal law."""
    u_seq = np.asarray(u_seq, float).reshape(len(u_seq), -1)
    N = len(u_seq)
    x = np.asarray(x0, float)
    ys = []
    for j in range(N_u):
        ys.append(float(plant.output(x)[0]))
        u = u_seq[j] if j < N else K @ (x - xs_bar) + us_bar
        x = plant.step(x, u)
    return np.array(ys)


def pe_matrix(u_seq, x0, plant: LiftedPlant, spec: RegressorSpec, signal: VirtualSignalSpec,
              K, xs_bar, us_bar, N_u: int, law: str = "gaussian") -> np.ndarray:
    """Outer products over the ``N`` planned outputs plus expectation terms beyond."""
    N = len(u_seq)
    if N_u < N:
        raise HorizonMismatch(f"PE window {N_u} is shorter than the horizon {N}")
    ys = predicted_outputs(u_seq, x0, plant, np.atleast_2d(K), np.asarray(xs_bar, float),
                           np.atleast_1d(us_bar), N_u)
    F = spec.phi(ys[:N, None])
    R = F.T @ F
    for j in range(N, N_u):
        R = R + perturbed_expectation(spec, ys[j], signal.eps_tilde, law)
    return 0.5 * (R + R.T)


def pe_beta(R: np.ndarray) -> float:
    return min_eigenvalue(R)


def pe_passes(R: np.ndarray) -> bool:
    beta = pe_beta(R)
    return beta > BETA_RTOL * max(1.0, float(np.max(np.abs(R))))


@dataclass
class PEReport:
    betas: list = field(default_factory=list)
    passed: bool = True
    fallback_used: bool = False
    fallback_beta: float = float("nan")


def pe_check(u_star, fallback, x0, plant: LiftedPlant, spec: RegressorSpec,
             signal: VirtualSignalSpec, K, xs_bar, us_bar, N_u: int,
             law: str = "gaussian"):
    """Keep ``u_star`` if its PE matrix is positive definite, else use ``fallback``."""
    if len(u_star) != len(fallback):
        raise HorizonMismatch("candidate and fallback lengths differ")
    R = pe_matrix(u_star, x0, plant, spec, signal, K, xs_bar, us_bar, N_u, law)
    beta = pe_beta(R)
    report = PEReport(betas=[beta], passed=pe_passes(R))
    if report.passed:
        return np.asarray(u_star, float), report
    Rf = pe_matrix(fallback, x0, plant, spec, signal, K, xs_bar, us_bar, N_u, law)
    report.fallback_beta = pe_beta(Rf)
    report.fallback_used = True
    return np.asarray(fallback, float), report


def _clip_u(u, u_lo, u_hi):
    return np.clip(u, u_lo, u_hi)


def fallback_sequence(prev_u, x0, plant: LiftedPlant, K, xs_bar, us_bar,
                      signal: VirtualSignalSpec, u_bounds, rng: np.random.Generator,
                      N: int | None = None) -> np.ndarray:
    """Shifted previous plan with the excited terminal law appended.

    ``u_bounds`` is ``(lo, hi)`` of the input box.  Without a previous plan
    ``NoPreviousSolution`` is raised; see ``terminal_sequence``.
    """
    if prev_u is None:
        raise NoPreviousSolution("no previous solution to shift")
    prev = np.asarray(prev_u, float).reshape(len(prev_u), -1)
    N = len(prev) if N is None else N
    lo, hi = u_bounds
    K = np.atleast_2d(K)
    out = np.empty((N, prev.shape[1]))
    x = np.asarray(x0, float)
    for i in range(N):
        if i + 1 < len(prev):
            u = prev[i + 1]
        else:
            s = np.clip(signal.draw(rng, prev.shape[1]), -signal.s_max, signal.s_max)
            u = K @ (x - xs_bar) + us_bar + s
        u = _clip_u(u, lo, hi)
        out[i] = u
        x = plant.step(x, u)
    return out[:, 0] if out.shape[1] == 1 else out


def terminal_sequence(x0, plant: LiftedPlant, K, xs_bar, us_bar, signal: VirtualSignalSpec,
                      u_bounds, rng: np.random.Generator, N: int) -> np.ndarray:
    """Terminal law with excitation from ``x0`` (first-step fallback)."""
    lo, hi = u_bounds
    K = np.atleast_2d(K)
    x = np.asarray(x0, float)
    out = np.empty((N, K.shape[0]))
    for i in range(N):
        s = signal.draw(rng, K.shape[0])
        u = _clip_u(K @ (x - xs_bar) + us_bar + s, lo, hi)
        out[i] = u
        x = plant.step(x, u)
    return out[:, 0] if out.shape[1] == 1 else out
