"""Gaussian-process surrogate over binary vectors with a UCB acquisition.

Matern-5/2 kernel on Euclidean distance; for 0/1 vectors the squared
distance equals the Hamming distance, so the kernel sees sqrt(Hamming).
The posterior keeps a sliding window of the most recent observations,
conditions on responses centred by their running mean, and maintains a
Cholesky factor incrementally (rank-1 extension per observation, full
refactorisation on eviction or jitter escalation).

The surrogate regresses the oracle's benign probability.  The acquisition
used by the annealing attack is the negated upper confidence bound
-(mu + sqrt_beta * sigma): lower fitness marks a more promising flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, NumericalFailure
from .features import BinaryFeatureVector

_JITTER_MAX = 1e-4
_LENGTHSCALE_SAMPLE = 20


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float = 1.0
    signal_var: float = 1.0
    jitter: float = 1e-8

    def validate(self) -> None:
        if self.lengthscale <= 0 or self.signal_var <= 0 or self.jitter < 0:
            raise ValueError("kernel parameters out of range")


@dataclass(frozen=True)
class UcbParams:
    sqrt_beta: float = 0.6


def _as_dense(x) -> np.ndarray:
    if isinstance(x, BinaryFeatureVector):
        return x.to_dense()
    return np.asarray(x, dtype=np.float64)


def _matern52_of_r(r: np.ndarray, lengthscale: float, signal_var: float) -> np.ndarray:
    t = np.sqrt(5.0) * r / lengthscale
    return signal_var * (1.0 + t + t * t / 3.0) * np.exp(-t)


def matern52(xa, xb, params: KernelParams = KernelParams()) -> float:
    """Matern-5/2 covariance between two vectors."""
    params.validate()
    a, b = _as_dense(xa), _as_dense(xb)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    r = float(np.sqrt(((a - b) ** 2).sum()))
    return float(_matern52_of_r(np.array(r), params.lengthscale, params.signal_var))


class GpState:
    """Windowed GP regression state.  Mutable, single-owner."""

    def __init__(
        self,
        kernel: KernelParams = KernelParams(),
        window: int = 300,
        adapt_lengthscale: bool = False,
    ):
        kernel.validate()
        if window < 1:
            raise ValueError("window must be at least 1")
        self.kernel = kernel
        self.window = window
        self.adapt_lengthscale = adapt_lengthscale
        self._lengthscale_locked = not adapt_lengthscale
        self.count = 0
        self._X: np.ndarray | None = None  # (window, m) observation buffer
        self._sqn: np.ndarray | None = None
        self._y: np.ndarray | None = None
        self._L: np.ndarray | None = None  # lower Cholesky of K + jitter*I
        self._w: np.ndarray | None = None  # L^-1 (y - mean)
        self._mean = 0.0

    @property
    def m(self) -> int | None:
        return None if self._X is None else self._X.shape[1]

    # -- internals --------------------------------------------------------

    def _kvec(self, x: np.ndarray) -> np.ndarray:
        X = self._X[: self.count]
        d2 = self._sqn[: self.count] + float(x @ x) - 2.0 * (X @ x)
        r = np.sqrt(np.clip(d2, 0.0, None))
        return _matern52_of_r(r, self.kernel.lengthscale, self.kernel.signal_var)

    def _refactor(self) -> None:
        """Dense Cholesky of the current window, escalating jitter on failure."""
        t = self.count
        X = self._X[:t]
        d2 = self._sqn[:t, None] + self._sqn[None, :t] - 2.0 * (X @ X.T)
        R = np.sqrt(np.clip(d2, 0.0, None))
        K = _matern52_of_r(R, self.kernel.lengthscale, self.kernel.signal_var)
        while True:
            try:
                L = np.linalg.cholesky(K + self.kernel.jitter * np.eye(t))
            except np.linalg.LinAlgError:
                self._escalate_jitter()
                continue
            self._L = np.zeros((self.window, self.window))
            self._L[:t, :t] = L
            return

    def _escalate_jitter(self) -> None:
        nxt = max(self.kernel.jitter, 1e-12) * 10.0
        if nxt > _JITTER_MAX * (1 + 1e-9):
            raise NumericalFailure("Cholesky failed at maximum jitter")
        self.kernel = KernelParams(self.kernel.lengthscale, self.kernel.signal_var, nxt)

    def _recenter(self) -> None:
        y = self._y[: self.count]
        self._mean = float(y.mean()) if self.count else 0.0
        self._w = solve_triangular(
            self._L[: self.count, : self.count], y - self._mean, lower=True, check_finite=False
        )

    def _maybe_adapt_lengthscale(self) -> None:
        if self._lengthscale_locked or self.count < _LENGTHSCALE_SAMPLE:
            return
        X = self._X[:_LENGTHSCALE_SAMPLE]
        sq = (X * X).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
        iu = np.triu_indices(_LENGTHSCALE_SAMPLE, k=1)
        # for 0/1 vectors the squared Euclidean distance is the Hamming distance
        med_hamming = float(np.median(np.clip(d2[iu], 0.0, None)))
        ell = max(1.0, float(np.sqrt(med_hamming)))
        self.kernel = KernelParams(ell, self.kernel.signal_var, self.kernel.jitter)
        self._lengthscale_locked = True
        self._refactor()

    # -- public surface ---------------------------------------------------

    def update(self, x, y: float) -> None:
        """Absorb one observation (x, y) with y in [0, 1]."""
        if not (0.0 <= y <= 1.0):
            raise ValueError(f"response {y} outside [0, 1]")
        xd = _as_dense(x)
        if self._X is None:
            m = xd.shape[0]
            self._X = np.empty((self.window, m))
            self._sqn = np.empty(self.window)
            self._y = np.empty(self.window)
            self._L = np.zeros((self.window, self.window))
        elif xd.shape[0] != self._X.shape[1]:
            raise DimensionError(f"x has {xd.shape[0]} features, state holds {self._X.shape[1]}")

        if self.count == self.window:  # evict the oldest observation
            self._X[:-1] = self._X[1:]
            self._sqn[:-1] = self._sqn[1:]
            self._y[:-1] = self._y[1:]
            self._X[-1] = xd
            self._sqn[-1] = float(xd @ xd)
            self._y[-1] = y
            self._refactor()
            self._recenter()
            return

        t = self.count
        if t == 0:
            self._X[0] = xd
            self._sqn[0] = float(xd @ xd)
            self._y[0] = y
            self.count = 1
            self._L = np.zeros((self.window, self.window))
            self._L[0, 0] = np.sqrt(self.kernel.signal_var + self.kernel.jitter)
            self._recenter()
            self._maybe_adapt_lengthscale()
            return

        c = self._kvec(xd)
        diag = self.kernel.signal_var + self.kernel.jitter
        ell_vec = solve_triangular(self._L[:t, :t], c, lower=True, check_finite=False)
        s = diag - float(ell_vec @ ell_vec)
        self._X[t] = xd
        self._sqn[t] = float(xd @ xd)
        self._y[t] = y
        self.count = t + 1
        if s <= 1e-300:
            self._escalate_jitter()
            self._refactor()
        else:
            self._L[t, :t] = ell_vec
            self._L[t, t] = np.sqrt(s)
        self._recenter()
        self._maybe_adapt_lengthscale()

    def posterior(self, x) -> tuple[float, float]:
        """Posterior (mean, variance) at x; the prior (0, signal_var) when empty."""
        xd = _as_dense(x)
        if self.count == 0:
            return 0.0, self.kernel.signal_var
        if xd.shape[0] != self._X.shape[1]:
            raise DimensionError(f"x has {xd.shape[0]} features, state holds {self._X.shape[1]}")
        k_star = self._kvec(xd)
        v = solve_triangular(self._L[: self.count, : self.count], k_star, lower=True, check_finite=False)
        mu = self._mean + float(v @ self._w)
        var = self.kernel.signal_var - float(v @ v)
        if var < 0.0:
            var = 0.0
        return mu, var


def gp_init(
    kernel: KernelParams = KernelParams(), window: int = 300, adapt_lengthscale: bool = False
) -> GpState:
    return GpState(kernel=kernel, window=window, adapt_lengthscale=adapt_lengthscale)


def gp_update(state: GpState, x, y: float) -> None:
    state.update(x, y)


def gp_posterior(state: GpState, x) -> tuple[float, float]:
    return state.posterior(x)


def ucb_fitness(state: GpState, x, ucb: UcbParams = UcbParams()) -> float:
    """Negated upper confidence bound; lower is better for the attacker."""
    mu, var = state.posterior(x)
    return -(mu + ucb.sqrt_beta * np.sqrt(var))
