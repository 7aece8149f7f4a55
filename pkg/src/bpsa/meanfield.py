"""Mean-field ODE of the scaled population vector.

The state is ``(psi_c, theta_c, psi_a, theta_a)`` on the harmonic time
scale ``t_n = 1 + 1/2 + ... + 1/n``.  The right-hand side evaluates the
offspring means at the reconstructed real-valued population
``eta(t) * (theta_c, psi_c - theta_c, theta_a, psi_a - theta_a)`` with
``eta(t) = max{n : t_n <= t}``, and vanishes once ``psi_c`` reaches zero.
"""

from __future__ import annotations

import bisect
import csv
import math
import threading
import warnings
from array import array
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import IntegrationError, NonConvergenceWarning
from .offspring import OffspringLaw

EULER_GAMMA = 0.57721566490153286061
TABLE_CAP = 10**7
SCALE_EXACT_T = 28.0  # t_n at n ~ 8e11


class _HarmonicTable:
    """Append-only table of partial harmonic sums, Neumaier-compensated."""

    def __init__(self):
        self.values = array("d", [0.0])
        self._sum = 0.0
        self._comp = 0.0
        self._lock = threading.Lock()

    def ensure(self, n: int) -> None:
        if n < len(self.values):
            return
        with self._lock:
            start = len(self.values)
            if n < start:
                return
            stop = min(TABLE_CAP, max(n, 2 * start)) + 1
            s, c = self._sum, self._comp
            append = self.values.append
            for k in range(start, stop):
                x = 1.0 / k
                t = s + x
                if abs(s) >= x:
                    c += (s - t) + x
                else:
                    c += (x - t) + s
                s = t
                append(s + c)
            self._sum, self._comp = s, c


_TABLE = _HarmonicTable()


def _harmonic_asymptotic(n: int) -> float:
    inv = 1.0 / n
    inv2 = inv * inv
    return math.log(n) + EULER_GAMMA + 0.5 * inv - inv2 / 12.0 + inv2 * inv2 / 120.0


def harmonic_time(n: int) -> float:
    """``t_n = sum_{k=1}^n 1/k`` (``t_0 = 0``)."""
    if n < 0:
        raise ValueError(f"epoch must be >= 0, got {n}")
    if n <= TABLE_CAP:
        _TABLE.ensure(n)
        return _TABLE.values[n]
    return _harmonic_asymptotic(n)


def harmonic_times(n_max: int) -> np.ndarray:
    """Array ``[t_0, t_1, ..., t_{n_max}]``."""
    if n_max <= TABLE_CAP:
        _TABLE.ensure(n_max)
        return np.frombuffer(_TABLE.values, dtype=np.float64, count=n_max + 1).copy()
    head = harmonic_times(TABLE_CAP)
    tail = np.array([_harmonic_asymptotic(k) for k in range(TABLE_CAP + 1, n_max + 1)])
    return np.concatenate([head, tail])


def eta(t: float) -> int:
    """Largest ``n`` with ``t_n <= t``; 0 for ``t < 1``."""
    if t < 1.0:
        return 0
    if t > 43.0:
        raise OverflowError(f"harmonic time {t} is beyond 64-bit epoch counts")
    guess = math.exp(t - EULER_GAMMA)
    if guess < 0.9 * TABLE_CAP:
        _TABLE.ensure(int(guess * 1.01) + 16)
        return bisect.bisect_right(_TABLE.values, t) - 1
    n = int(guess)  # t_n = ln n + gamma + 1/(2n) + ..., so a few steps at most
    while harmonic_time(n + 1) <= t:
        n += 1
    while harmonic_time(n) > t:
        n -= 1
    return n


class OdeState(NamedTuple):
    psi_c: float
    theta_c: float
    psi_a: float
    theta_a: float
    t: float = 1.0

    @property
    def vector(self) -> tuple[float, float, float, float]:
        return (self.psi_c, self.theta_c, self.psi_a, self.theta_a)


def ode_scale(t: float) -> float:
    """``eta(t)`` as the population scale of the right-hand side.

    Beyond 10^12 epochs ``exp(t - gamma)`` agrees with ``eta(t)`` to 1e-12
    relative, and the exact integer costs an ever longer local search.
    """
    return eta(t) if t <= SCALE_EXACT_T else math.exp(t - EULER_GAMMA)


def _means(y, law: OffspringLaw, scale: float):
    psi_c, theta_c, psi_a, theta_a = y
    phi = (theta_c * scale, max(psi_c - theta_c, 0.0) * scale,
           theta_a * scale, max(psi_a - theta_a, 0.0) * scale)
    return law.mean_matrix(phi)


def _lines(y, means, b):
    psi_c, theta_c, psi_a, theta_a = y
    mxx, mxy, myx, myy = means
    total = b * (mxx + mxy) + (1.0 - b) * (myy + myx)
    return (total - 1.0 - psi_c,
            b * (mxx - 1.0) + (1.0 - b) * myx - theta_c,
            total - psi_a,
            b * mxx + (1.0 - b) * myx - theta_a)


def _gbar(y: Sequence[float], law: OffspringLaw, scale: float) -> tuple[float, ...]:
    if y[0] <= 0:
        return (0.0, 0.0, 0.0, 0.0)
    return _lines(y, _means(y, law, scale), y[1] / y[0])


def ode_rhs(state: OdeState, law: OffspringLaw) -> tuple[float, float, float, float]:
    """Right-hand side at ``state`` (its ``t`` field selects ``eta(t)``)."""
    if state.t < 1.0 and state.psi_c > 0:
        raise ValueError(f"ODE time must be >= 1 (t_1), got {state.t}")
    return _gbar(state.vector, law, ode_scale(state.t))


def _clamp(y):
    psi_c, theta_c, psi_a, theta_a = y
    psi_c = max(psi_c, 0.0)
    psi_a = max(psi_a, 0.0)
    return (psi_c, min(max(theta_c, 0.0), psi_c), psi_a, min(max(theta_a, 0.0), psi_a))


def _rk4(t, y, h, law):
    """One RK4 step from a state with ``psi_c > 0``.

    Stages that overshoot to ``psi_c <= 0`` keep the means and proportion
    of the step start instead of the indicator's zero, so the step stays a
    smooth function of ``h`` and the crossing can be located by bisection.
    """
    start = None

    def f(tt, yy):
        nonlocal start
        if yy[0] > 0:
            return _gbar(yy, law, ode_scale(tt))
        if start is None:
            start = (_means(y, law, ode_scale(t)), y[1] / y[0])
        return _lines(yy, *start)

    k1 = f(t, y)
    y2 = [a + 0.5 * h * b for a, b in zip(y, k1)]
    k2 = f(t + 0.5 * h, y2)
    y3 = [a + 0.5 * h * b for a, b in zip(y, k2)]
    k3 = f(t + 0.5 * h, y3)
    y4 = [a + h * b for a, b in zip(y, k3)]
    k4 = f(t + h, y4)
    return tuple(a + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


@dataclass
class OdeSolution:
    grid: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    frozen_at: float | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def evaluate(self, times) -> np.ndarray:
        """Cubic Hermite dense output at absolute times inside the grid."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        g = self.grid
        if times.size and (times.min() < g[0] - 1e-9 or times.max() > g[-1] + 1e-9):
            raise ValueError(f"times outside solution range [{g[0]}, {g[-1]}]")
        if len(g) == 1:
            return np.repeat(self.states[:1], times.size, axis=0)
        i = np.clip(np.searchsorted(g, times, side="right") - 1, 0, len(g) - 2)
        h = (g[i + 1] - g[i])[:, None]
        s = np.clip((times - g[i]) / h[:, 0], 0.0, 1.0)[:, None]
        y0, y1 = self.states[i], self.states[i + 1]
        d0, d1 = self.derivs[i], self.derivs[i + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
        at_node = s[:, 0] == 0.0
        out[at_node] = y0[at_node]
        if self.frozen_at is not None:
            frozen = times >= self.frozen_at
            out[frozen] = self.states[-1]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            write_solution_csv(self, fh)


def write_solution_csv(sol: OdeSolution, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "psi_c", "theta_c", "psi_a", "theta_a", "beta_c", "frozen"])
    for t, (pc, tc, pa, ta) in zip(sol.grid, sol.states):
        beta = "nan" if pc <= 0 else f"{tc / pc:.12g}"
        frozen = int(sol.frozen_at is not None and t >= sol.frozen_at)
        w.writerow([f"{t:.12g}", f"{pc:.12g}", f"{tc:.12g}", f"{pa:.12g}", f"{ta:.12g}",
                    beta, frozen])


def integrate_ode(init: Sequence[float], t0: float, T: float, h: float,
                  law: OffspringLaw) -> OdeSolution:
    """Fixed-step RK4 on ``[t0, t0 + T]`` with absorption at ``psi_c = 0``.

    A step that takes ``psi_c`` from positive to non-positive is shortened by
    bisection (to 1e-12 in time) to the crossing, which is added to the grid;
    the state is constant from there on.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    if T < 0:
        raise ValueError(f"horizon must be non-negative, got {T}")
    if t0 < 1.0:
        raise ValueError(f"ODE time starts at t_1 = 1, got t0={t0}")
    y = _clamp(tuple(float(v) for v in tuple(init)[:4]))
    n_steps = 0 if T == 0 else max(1, math.ceil(T / h - 1e-9))
    grid = [t0]
    states = [y]
    frozen_at = t0 if y[0] <= 0 else None
    t = t0
    for k in range(1, n_steps + 1):
        t_next = t0 + T if k == n_steps else t0 + k * h
        if frozen_at is not None:
            grid.append(t_next)
            states.append(y)
            t = t_next
            continue
        step = t_next - t
        y_new = _rk4(t, y, step, law)
        if not all(math.isfinite(v) for v in y_new):
            raise IntegrationError(f"non-finite ODE state at t={t_next}: {y_new}")
        if y_new[0] <= 0:
            lo, hi = 0.0, step
            while hi - lo > 1e-12:
                mid = 0.5 * (lo + hi)
                if _rk4(t, y, mid, law)[0] > 0:
                    lo = mid
                else:
                    hi = mid
            crossed = _rk4(t, y, hi, law)
            y = _clamp((0.0, 0.0, crossed[2], crossed[3]))
            frozen_at = t + hi
            if hi < step:
                grid.append(frozen_at)
                states.append(y)
            grid.append(t_next)
            states.append(y)
            t = t_next
            continue
        y = _clamp(y_new)
        grid.append(t_next)
        states.append(y)
        t = t_next
    g = np.array(grid)
    st = np.array(states, dtype=float).reshape(len(grid), 4)
    derivs = np.zeros_like(st)
    for i, (tt, yy) in enumerate(zip(g, st)):
        if frozen_at is None or tt < frozen_at:
            derivs[i] = _gbar(yy, law, ode_scale(tt))
    return OdeSolution(g, st, derivs, frozen_at)


# -- fixed points -----------------------------------------------------------

JAC_STEP = 1e-6
ZERO_EIG = 1e-6


@dataclass
class FixedPoint:
    state: tuple[float, float, float, float]
    residual: float
    eigenvalues: np.ndarray
    classification: str  # "Stable" | "Unstable" | "Marginal"
    frozen: bool = False
    near_zero: int = field(default=0)

    @property
    def beta_c(self) -> float | None:
        return None if self.state[0] <= 0 else self.state[1] / self.state[0]

    @property
    def on_fixed_line(self) -> bool:
        """A near-zero eigenvalue signals a continuum of equilibria through the point."""
        return not self.frozen and self.near_zero > 0

    def to_dict(self) -> dict:
        return {"state": list(self.state), "residual": self.residual,
                "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
                "classification": self.classification, "frozen": self.frozen,
                "near_zero_eigenvalues": self.near_zero}


def _project(y):
    psi_c, theta_c, psi_a, theta_a = y
    psi_a = max(psi_a, 0.0)
    return np.array([psi_c, min(max(theta_c, 0.0), psi_c),
                     psi_a, min(max(theta_a, 0.0), psi_a)])


def _smooth_rhs(y, law):
    # same as the ODE right-hand side on psi_c > 0, without the indicator
    psi_c, theta_c, psi_a, theta_a = y
    mxx, mxy, myx, myy = law.mean_matrix((theta_c, psi_c - theta_c, theta_a, psi_a - theta_a))
    b = theta_c / psi_c
    total = b * (mxx + mxy) + (1.0 - b) * (myy + myx)
    return np.array([total - 1.0 - psi_c, b * (mxx - 1.0) + (1.0 - b) * myx - theta_c,
                     total - psi_a, b * mxx + (1.0 - b) * myx - theta_a])


def numerical_jacobian(y, law, step: float = JAC_STEP) -> np.ndarray:
    """Forward differences; steps that would leave ``theta <= psi`` go backward."""
    y = np.asarray(y, dtype=float)
    f0 = _smooth_rhs(y, law)
    jac = np.empty((4, 4))
    for j in range(4):
        d = step
        if (j == 1 and y[1] + d > y[0]) or (j == 3 and y[3] + d > y[2]):
            d = -step
        yp = y.copy()
        yp[j] += d
        jac[:, j] = (_smooth_rhs(yp, law) - f0) / d
    return jac


def classify(eigenvalues, tol: float = 1e-8) -> str:
    top = max(e.real for e in eigenvalues)
    if top < -tol:
        return "Stable"
    if top > tol:
        return "Unstable"
    return "Marginal"


def _newton(y0, law, max_iter):
    y = _project(np.asarray(y0, dtype=float))
    if y[0] <= 0:
        return "frozen", y
    f = _smooth_rhs(y, law)
    for _ in range(max_iter):
        if np.max(np.abs(f)) <= 1e-13:
            return "converged", y
        jac = numerical_jacobian(y, law)
        dx = np.linalg.lstsq(jac, -f, rcond=None)[0]
        if y[0] + dx[0] <= 0:
            return "frozen", y
        norm = np.max(np.abs(f))
        lam = 1.0
        while lam > 1e-8:
            cand = _project(y + lam * dx)
            if cand[0] > 0:
                fc = _smooth_rhs(cand, law)
                if np.max(np.abs(fc)) < norm:
                    break
            lam *= 0.5
        else:
            return "stalled", y
        y, f = cand, fc
    return ("converged" if np.max(np.abs(f)) <= 1e-12 else "max_iter"), y


def find_fixed_points(law: OffspringLaw, guesses: Sequence[Sequence[float]],
                      max_iter: int = 200, tol: float = 1e-10) -> list[FixedPoint]:
    """Damped Newton on the autonomous reduction from each guess.

    Guesses whose iteration is driven to ``psi_c <= 0`` yield the frozen
    extinction point (the zero vector).  Guesses that fail to converge are
    skipped with a NonConvergenceWarning.
    """
    if not law.autonomous:
        raise ValueError("fixed points need a law whose means depend only on proportions")
    found: list[FixedPoint] = []
    for guess in guesses:
        status, y = _newton(tuple(guess)[:4], law, max_iter)
        if status == "frozen":
            point = FixedPoint((0.0, 0.0, 0.0, 0.0), 0.0, np.zeros(4, dtype=complex),
                               "Marginal", frozen=True)
        elif status == "converged":
            state = tuple(float(v) for v in y)
            residual = max(abs(v) for v in ode_rhs(OdeState(*state, t=1.0), law))
            if residual > tol:
                warnings.warn(f"guess {tuple(guess)}: residual {residual:.3g} above {tol}",
                              NonConvergenceWarning, stacklevel=2)
                continue
            eig = np.linalg.eigvals(numerical_jacobian(y, law))
            point = FixedPoint(state, residual, eig, classify(eig),
                               near_zero=int(np.sum(np.abs(eig) <= ZERO_EIG)))
        else:
            warnings.warn(f"guess {tuple(guess)}: Newton {status} after {max_iter} iterations",
                          NonConvergenceWarning, stacklevel=2)
            continue
        if not any(max(abs(a - b) for a, b in zip(point.state, q.state)) <= 1e-8 for q in found):
            found.append(point)
    return found


def default_guesses(law: OffspringLaw, k: int = 11) -> list[tuple[float, float, float, float]]:
    """Guesses spread over beta_c in [0, 1] at the dominating growth scale."""
    moments = law.dominating_moments()
    scale = max(1.0, law.dominating_mean_total / 2) if moments else 1.0
    out = []
    for b in np.linspace(0.0, 1.0, k):
        out.append((scale, b * scale, scale + 1.0, b * (scale + 1.0)))
    return out
