"""Checks of simulated chains against the mean-field ODE and exact oracles."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import EnsembleSummary, Trajectory, step
from .errors import LawContractError
from .meanfield import FixedPoint, eta, harmonic_time, harmonic_times, integrate_ode
from .offspring import OffspringLaw
from .state import Dying, PopulationState, ProportionVector, apply_event

# absorbs rounding in t_n + (t_k - t_n); harmonic spacing stays far above it
_TIME_SLACK = 1e-12


def interpolate_chain(traj: Trajectory, n: int, t: float) -> ProportionVector:
    """Piecewise-constant interpolation of the recursion anchored at epoch ``n``.

    Equals the recursion value at ``eta(t_n + t)``: the partial sum of
    ``(1/i) L_i`` from the anchor telescopes to it.
    """
    if t < 0:
        raise ValueError(f"interpolation time must be >= 0, got {t}")
    if not 0 <= n <= len(traj):
        raise ValueError(f"anchor epoch {n} outside trajectory of {len(traj)} epochs")
    if n == 0 and t < 1.0:
        return traj.upsilon_rec_at(0)
    k = eta(harmonic_time(n) + t + _TIME_SLACK)
    if k > len(traj):
        if traj.extinct:
            return traj.upsilon_rec_at(len(traj))
        raise ValueError(f"interpolation at t_{n} + {t} needs a horizon of {k} epochs, "
                         f"trajectory has {len(traj)}")
    return traj.upsilon_rec_at(k)


@dataclass
class WindowResult:
    n_m: int
    T: float
    epochs: int
    sup_distance: float
    extinct: bool = False


@dataclass
class ComparisonReport:
    windows: list[WindowResult]

    @property
    def sup_distances(self) -> list[float]:
        return [w.sup_distance for w in self.windows]

    @property
    def running_min(self) -> list[float]:
        return list(np.minimum.accumulate(self.sup_distances)) if self.windows else []

    def to_dict(self) -> dict:
        return {
            "windows": [{"n_m": w.n_m, "T": w.T, "epochs": w.epochs,
                         "sup_distance": w.sup_distance, "extinct": w.extinct}
                        for w in self.windows],
            "sup_distance": self.sup_distances,
            "running_min": [float(v) for v in self.running_min],
        }

    def write_csv(self, fh) -> None:
        fh.write("n_m,T,epochs,sup_distance,running_min,extinct\n")
        for w, rm in zip(self.windows, self.running_min):
            fh.write(f"{w.n_m},{w.T:.12g},{w.epochs},{w.sup_distance:.12g},{rm:.12g},"
                     f"{int(w.extinct)}\n")


def compare_windows(chain: np.ndarray, law: OffspringLaw, schedule: Sequence[int], T: float,
                    h: float = 1e-3, extinction_epoch: int | None = None) -> ComparisonReport:
    """Sup distance between chain values and ODE solutions started from them.

    ``chain[k - 1]`` is the scaled vector at epoch ``k``.  For each anchor
    ``n_m`` the ODE runs from ``chain[n_m - 1]`` at time ``t_{n_m}`` and is
    compared, in max-norm, at every ``t_k`` in ``[t_{n_m}, t_{n_m} + T]``.
    """
    windows = []
    last = 0
    for n_m in schedule:
        if n_m < last:
            raise ValueError("schedule must be non-decreasing")
        last = n_m
        t0 = harmonic_time(n_m)
        k_end = eta(t0 + T + _TIME_SLACK) if T > 0 else n_m
        if k_end > len(chain):
            raise ValueError(f"window at n_m={n_m}, T={T} needs {k_end} epochs, "
                             f"chain has {len(chain)}")
        sol = integrate_ode(chain[n_m - 1], t0, T, h, law)
        times = harmonic_times(k_end)[n_m:k_end + 1]
        times = np.minimum(times, t0 + T)
        ode = sol.evaluate(times)
        dist = float(np.max(np.abs(chain[n_m - 1:k_end] - ode)))
        extinct = extinction_epoch is not None and extinction_epoch <= k_end
        windows.append(WindowResult(n_m, T, k_end - n_m + 1, dist, extinct))
    return ComparisonReport(windows)


def theorem1_compare(traj: Trajectory, law: OffspringLaw, schedule: Sequence[int], T: float,
                     h: float = 1e-3) -> ComparisonReport:
    """Windowed chain-vs-ODE comparison on the exact ratios of ``traj``.

    After extinction the counts are frozen, so the chain is extended with
    ``Phi_{nu_e} / k`` where a window reaches past the last record.
    """
    chain = traj.upsilon_exact
    if traj.extinct and schedule:
        need = eta(harmonic_time(max(schedule)) + T + _TIME_SLACK)
        if need > len(chain):
            k = np.arange(len(chain) + 1, need + 1, dtype=float)[:, None]
            frozen = chain[-1] * len(chain)
            chain = np.vstack([chain, frozen / k])
    return compare_windows(chain, law, schedule, T, h, traj.extinction_epoch)


def enumerate_one_step(state: PopulationState, law: OffspringLaw,
                       lam: float = 1.0) -> dict[PopulationState, float]:
    """Exact law of the state after one death (the rate only scales time)."""
    state = PopulationState(*state)
    s = state.cx + state.cy
    if s == 0:
        raise ValueError("extinct state has no next epoch")
    out: dict[PopulationState, float] = {}
    for dying, weight in ((Dying.X, state.cx / s), (Dying.Y, state.cy / s)):
        if weight == 0:
            continue
        for sample, p in law.sample_pmf(dying, state).items():
            if p == 0:
                continue
            nxt = apply_event(state, dying, sample)
            out[nxt] = out.get(nxt, 0.0) + weight * p
    total = math.fsum(out.values())
    if abs(total - 1.0) > 1e-12:
        raise LawContractError(f"enumerated probabilities sum to {total!r}")
    return out


@dataclass
class OracleReport:
    state: PopulationState
    draws: int
    support_size: int
    tv_distance: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.tv_distance <= self.bound

    def to_dict(self) -> dict:
        return {"state": list(self.state), "draws": self.draws,
                "support_size": self.support_size, "tv_distance": self.tv_distance,
                "bound": self.bound, "passed": self.passed}


def oracle_check(state: PopulationState, law: OffspringLaw, lam: float, draws: int,
                 rng: np.random.Generator) -> OracleReport:
    """Total-variation distance between simulated and enumerated next states.

    Passes when TV <= 3 sqrt(|support| / draws).
    """
    if draws <= 0:
        raise ValueError("insufficient draws")
    state = PopulationState(*state)
    exact = enumerate_one_step(state, law, lam)
    counts = Counter(step(state, 1, 0.0, law, rng, lam=lam).state_after for _ in range(draws))
    keys = set(exact) | set(counts)
    tv = 0.5 * math.fsum(abs(counts.get(k, 0) / draws - exact.get(k, 0.0)) for k in keys)
    return OracleReport(state, draws, len(exact), tv, 3.0 * math.sqrt(len(exact) / draws))


@dataclass
class PiTracks:
    pi: np.ndarray
    pi_hat: np.ndarray
    m_hat: float
    violations: dict[str, int]

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    @property
    def final_gap(self) -> float:
        return abs(float(self.pi_hat[-1]) - self.m_hat)


def pi_tracks(traj: Trajectory, law: OffspringLaw, strict: bool = True) -> PiTracks:
    """Running offspring means with and without domination, plus the sandwich.

    Checks at every epoch, in exact integers: C <= A for both types,
    A <= S^a, S^c < S^a, S^a = n Pi_n while alive, S^a <= n Pi_hat_n and
    the per-epoch domination of the sample by its coupled draws.
    """
    if traj.dominating is None:
        raise ValueError("trajectory carries no dominating draws; "
                         "simulate it with run_trajectory(..., coupled=True)")
    if not law.has_coupling:
        raise ValueError(f"{law!r} provides no dominating coupling")
    n = traj.n
    s0 = traj.initial.cx + traj.initial.cy
    cx, cy, ax, ay = traj.counts.T
    sa = ax + ay
    n_pi = s0 + np.cumsum(traj.gamma_own + traj.gamma_cross)
    n_pi_hat = s0 + np.cumsum(traj.dominating.sum(axis=1))
    alive = np.ones(len(n), dtype=bool)
    if traj.extinction_epoch is not None:
        alive[traj.extinction_epoch - 1:] = False
    x_died = traj.h == 1
    dom = traj.dominating
    own_dom = np.where(x_died, dom[:, 0], dom[:, 3])
    cross_dom = np.where(x_died, dom[:, 1], dom[:, 2])
    violations = {
        "cx<=ax": int(np.sum(cx > ax)),
        "cy<=ay": int(np.sum(cy > ay)),
        "ax<=sa": int(np.sum(ax > sa)),
        "ay<=sa": int(np.sum(ay > sa)),
        "sc<sa": int(np.sum(cx + cy >= sa)),
        "sa==n*pi": int(np.sum((sa != n_pi) & alive)),
        "n*pi<=n*pi_hat": int(np.sum(np.where(alive, n_pi, 0) > n_pi_hat)),
        "sa<=n*pi_hat": int(np.sum(sa > n_pi_hat)),
        "coupling": int(np.sum((traj.gamma_own > own_dom) | (traj.gamma_cross > cross_dom))),
    }
    tracks = PiTracks(n_pi / n, n_pi_hat / n, law.dominating_mean_total, violations)
    if strict and not tracks.ok:
        raise LawContractError(f"sandwich violated: {violations}")
    return tracks


@dataclass
class LimitReport:
    replications: int
    extinction_fraction: float
    survival_fraction: float
    survivors: list[dict]
    histogram_counts: list[int]
    histogram_edges: list[float]
    nearest: list[tuple[int, float]] | None = None
    p_hat_A: float | None = None
    delta: float = 0.05

    @property
    def survivor_beta_c(self) -> np.ndarray:
        return np.array([s["beta_c"] for s in self.survivors])

    @property
    def survivor_psi_c(self) -> np.ndarray:
        return np.array([s["psi_c"] for s in self.survivors])

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "extinction_fraction": self.extinction_fraction,
            "survival_fraction": self.survival_fraction,
            "p_hat_A": self.p_hat_A,
            "delta": self.delta,
            "histogram": {"edges": self.histogram_edges, "counts": self.histogram_counts},
            "survivors": self.survivors,
            "nearest": None if self.nearest is None else [list(v) for v in self.nearest],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def limit_stats(ensemble: EnsembleSummary, fixed_points: Sequence[FixedPoint] | None = None,
                delta: float = 0.05) -> LimitReport:
    """Limit classification of an ensemble at its horizon.

    Every supplied point is treated as part of the attractor; ``p_hat_A`` is
    the fraction of all paths within ``delta`` (max-norm) of one of them.
    """
    u = ensemble.final_upsilon
    extinct = ensemble.extinct_mask
    bc, ba = ensemble.beta_c, ensemble.beta_a
    survivors = [{"replication": r.replication, "psi_c": float(u[i, 0]),
                  "beta_c": float(bc[i]), "beta_a": float(ba[i])}
                 for i, r in enumerate(ensemble.results) if not extinct[i]]
    counts, edges = ensemble.histogram()
    nearest = p_hat = None
    if fixed_points:
        pts = np.array([fp.state for fp in fixed_points], dtype=float)
        d = np.max(np.abs(u[:, None, :] - pts[None, :, :]), axis=2)
        idx = np.argmin(d, axis=1)
        nearest = [(int(i), float(d[j, i])) for j, i in enumerate(idx)]
        p_hat = float(np.mean(d.min(axis=1) <= delta))
    return LimitReport(len(ensemble.results), ensemble.extinction_fraction,
                       ensemble.survival_fraction, survivors, counts.tolist(), edges.tolist(),
                       nearest, p_hat, delta)
