"""Embedded-chain simulation of the two-type process.

Each epoch is one death.  The gap to the next death is exponential with
rate ``lam * (cx + cy)``; the dying individual is of type x with
probability ``cx / (cx + cy)`` and its offspring are drawn from the law at
the pre-death state.  Alongside the counts the engine runs the
four-dimensional stochastic-approximation recursion with step ``1/n``.

Every replication owns two generators derived from ``(base_seed, index)``:
one for events and one for the exponential clocks.  Keeping clocks on a
separate stream lets ensembles skip them and still reproduce exactly the
embedded chain of ``run_trajectory``.
"""

from __future__ import annotations

import hashlib
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from array import array

from .errors import (ConfigError, ExtinctStateError, LawContractError,
                     ResourceGuardError)
from .meanfield import harmonic_time, harmonic_times
from .offspring import LawSpec, OffspringLaw
from .state import (Dying, OffspringSample, PopulationState, ProportionVector,
                    apply_event, exact_proportions, is_extinct)

_GUARD_EVERY = 1024


@dataclass(frozen=True)
class ScenarioConfig:
    lam: float
    cx0: int
    cy0: int
    law: OffspringLaw | LawSpec
    horizon_epochs: int
    replications: int = 1
    base_seed: int = 0
    max_wall_seconds: float | None = None

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.cx0 < 0 or self.cy0 < 0 or self.cx0 + self.cy0 < 1:
            raise ConfigError(f"initial sizes must be >= 0 with a positive sum, "
                              f"got ({self.cx0}, {self.cy0})")
        if self.horizon_epochs < 1:
            raise ConfigError(f"horizon_epochs must be >= 1, got {self.horizon_epochs}")
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if self.max_wall_seconds is not None and self.max_wall_seconds <= 0:
            raise ConfigError("max_wall_seconds must be positive")

    @cached_property
    def law_object(self) -> OffspringLaw:
        return self.law.build() if isinstance(self.law, LawSpec) else self.law

    @property
    def initial(self) -> PopulationState:
        return PopulationState.initial(self.cx0, self.cy0)

    def replace(self, **changes) -> "ScenarioConfig":
        from dataclasses import replace
        return replace(self, **changes)


def replication_rngs(base_seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """``(event_rng, clock_rng)`` for one replication."""
    events, clocks = np.random.SeedSequence(base_seed, spawn_key=(index,)).spawn(2)
    return np.random.default_rng(events), np.random.default_rng(clocks)


def initial_upsilon(state: PopulationState) -> ProportionVector:
    """Recursion start ``(s0, cx0, s0, cx0)``."""
    s0 = state.cx + state.cy
    return ProportionVector(float(s0), float(state.cx), float(s0), float(state.cx))


def sa_update(prev: ProportionVector, sample: Sequence[int], dying: Dying, n: int,
              alive: bool | None = None) -> ProportionVector:
    """One step of the proportion recursion, ``prev + (1/n) L_n``.

    The increment is switched off when the process is extinct before the
    epoch.  ``alive`` carries that fact from the caller; by default it is
    read off ``prev.psi_c > 0``.
    """
    if not (prev.psi_c > 0 if alive is None else alive):
        return prev
    own, cross = sample
    total = own + cross
    psi_c, theta_c, psi_a, theta_a = prev
    if dying == Dying.X:
        x_gain = own
    else:
        x_gain = cross
    eps = 1.0 / n
    return ProportionVector(
        psi_c + eps * (total - 1 - psi_c),
        theta_c + eps * (x_gain - (dying == Dying.X) - theta_c),
        psi_a + eps * (total - psi_a),
        theta_a + eps * (x_gain - theta_a),
    )


@dataclass
class EpochRecord:
    n: int
    tau: float
    h: int
    sample: OffspringSample
    state_after: PopulationState
    upsilon_exact: ProportionVector
    upsilon_rec: ProportionVector
    t_n: float
    dominating: tuple[int, int, int, int] | None = None


def draw_event(state: PopulationState, law: OffspringLaw, rng: np.random.Generator,
               coupled: bool = False):
    """Dying type and offspring for one death at ``state``.

    Returns ``(dying, sample, dominating)``; ``dominating`` is None unless
    ``coupled``.
    """
    cx, cy, ax, ay = state
    s = cx + cy
    if s <= 0:
        raise ExtinctStateError(f"no death can occur in extinct state {tuple(state)}")
    x_dies = rng.random() * s < cx
    if coupled:
        own, cross, dom = law.draw_coupled(x_dies, cx, cy, ax, ay, rng)
    else:
        own, cross = law.draw(x_dies, cx, cy, ax, ay, rng)
        dom = None
    return (Dying.X if x_dies else Dying.Y), OffspringSample(own, cross), dom


def step(state: PopulationState, n: int, prev_tau: float, law: OffspringLaw,
         rng: np.random.Generator, *, lam: float = 1.0,
         prev_upsilon: ProportionVector | None = None,
         clock_rng: np.random.Generator | None = None, coupled: bool = False) -> EpochRecord:
    """Advance the chain from epoch ``n - 1`` to ``n``.

    ``prev_upsilon`` is the recursion value at ``n - 1``; when omitted it is
    the start vector for ``n == 1`` and the exact ratios otherwise.
    """
    if is_extinct(state):
        raise ExtinctStateError("cannot step an extinct state; the chain is frozen")
    if prev_upsilon is None:
        prev_upsilon = initial_upsilon(state) if n == 1 else exact_proportions(state, n - 1)
    clock = rng if clock_rng is None else clock_rng
    dt = clock.exponential(1.0 / (lam * (state.cx + state.cy)))
    dying, sample, dom = draw_event(state, law, rng, coupled)
    after = apply_event(state, dying, sample)
    return EpochRecord(
        n=n, tau=prev_tau + dt, h=int(dying), sample=sample, state_after=after,
        upsilon_exact=exact_proportions(after, n),
        upsilon_rec=sa_update(prev_upsilon, sample, dying, n, alive=True),
        t_n=harmonic_time(n), dominating=dom)


CSV_HEADER = ("n,tau,h,gamma_own,gamma_cross,cx,cy,ax,ay,"
              "psi_c,theta_c,psi_a,theta_a,beta_c,beta_a,t_n")


def _g(v: float) -> str:
    return "nan" if v != v else f"{v:.12g}"


@dataclass
class Trajectory:
    """Per-epoch columns of one replication; row ``i`` is epoch ``i + 1``."""

    config: ScenarioConfig
    replication: int
    initial: PopulationState
    tau: np.ndarray
    h: np.ndarray
    gamma_own: np.ndarray
    gamma_cross: np.ndarray
    counts: np.ndarray  # (N, 4): cx, cy, ax, ay after each epoch
    upsilon_rec: np.ndarray  # (N, 4)
    extinction_epoch: int | None
    dominating: np.ndarray | None = None  # (N, 4): xx, xy, yx, yy

    def __len__(self) -> int:
        return len(self.tau)

    @property
    def n(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    @property
    def extinct(self) -> bool:
        return self.extinction_epoch is not None

    @cached_property
    def t_n(self) -> np.ndarray:
        return harmonic_times(len(self))[1:]

    @cached_property
    def upsilon_exact(self) -> np.ndarray:
        c = self.counts.astype(float)
        n = self.n[:, None].astype(float)
        return np.column_stack([c[:, 0] + c[:, 1], c[:, 0], c[:, 2] + c[:, 3], c[:, 2]]) / n

    def state(self, n: int) -> PopulationState:
        """Population after epoch ``n`` (``n = 0`` is the initial state)."""
        if n == 0:
            return self.initial
        return PopulationState(*(int(v) for v in self.counts[n - 1]))

    def upsilon_rec_at(self, n: int) -> ProportionVector:
        if n == 0:
            return initial_upsilon(self.initial)
        return ProportionVector(*(float(v) for v in self.upsilon_rec[n - 1]))

    def record(self, n: int) -> EpochRecord:
        i = n - 1
        dom = None if self.dominating is None else tuple(int(v) for v in self.dominating[i])
        return EpochRecord(
            n=n, tau=float(self.tau[i]), h=int(self.h[i]),
            sample=OffspringSample(int(self.gamma_own[i]), int(self.gamma_cross[i])),
            state_after=self.state(n),
            upsilon_exact=ProportionVector(*(float(v) for v in self.upsilon_exact[i])),
            upsilon_rec=self.upsilon_rec_at(n), t_n=float(self.t_n[i]), dominating=dom)

    @property
    def records(self) -> Iterator[EpochRecord]:
        return (self.record(n) for n in range(1, len(self) + 1))

    def write_csv(self, fh) -> None:
        fh.write(CSV_HEADER + "\n")
        ue = self.upsilon_exact
        counts = self.counts.tolist()
        for i, (tau, h, own, cross, t_n) in enumerate(zip(
                self.tau.tolist(), self.h.tolist(), self.gamma_own.tolist(),
                self.gamma_cross.tolist(), self.t_n.tolist())):
            cx, cy, ax, ay = counts[i]
            pc, tc, pa, ta = ue[i].tolist()
            bc = tc / pc if pc > 0 else float("nan")
            ba = ta / pa if pa > 0 else float("nan")
            fh.write(f"{i + 1},{tau:.12g},{h},{own},{cross},{cx},{cy},{ax},{ay},"
                     f"{pc:.12g},{tc:.12g},{pa:.12g},{ta:.12g},{_g(bc)},{_g(ba)},{t_n:.12g}\n")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def checksum(self) -> str:
        """sha256 of the CSV export."""
        return hashlib.sha256(self.to_csv_text().encode()).hexdigest()

    def digest(self) -> str:
        """sha256 of the raw per-epoch arrays; cheap stand-in for ``checksum``."""
        h = hashlib.sha256()
        for a in (self.tau, self.h, self.gamma_own, self.gamma_cross, self.counts,
                  self.upsilon_rec, self.dominating):
            if a is not None:
                h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr(self.extinction_epoch).encode())
        return h.hexdigest()


class _WallGuard:
    def __init__(self, limit: float | None):
        self.limit = limit
        self.start = time.monotonic()

    def check(self, n: int) -> None:
        if self.limit is not None and time.monotonic() - self.start > self.limit:
            raise ResourceGuardError(f"wall-time budget {self.limit}s exceeded at epoch {n}")


def run_trajectory(config: ScenarioConfig, replication_index: int = 0, *,
                   coupled: bool = False) -> Trajectory:
    """Simulate one replication to the horizon or extinction, recording every epoch.

    With ``coupled`` the law's dominating coupling is used and the four
    dominating draws are stored per epoch.
    """
    law = config.law_object
    if coupled and not law.has_coupling:
        raise LawContractError(f"{law!r} provides no dominating coupling")
    rng, clock = replication_rngs(config.base_seed, replication_index)
    guard = _WallGuard(config.max_wall_seconds)
    state = config.initial
    ups = initial_upsilon(state)
    scale = 1.0 / config.lam
    tau = 0.0
    taus, hs = array("d"), array("b")
    owns, crosses, counts = array("q"), array("q"), array("q")
    rec, doms = array("d"), array("q")
    nu_e = None
    for n in range(1, config.horizon_epochs + 1):
        tau += clock.exponential(scale / (state.cx + state.cy))
        try:
            dying, sample, dom = draw_event(state, law, rng, coupled)
            state = apply_event(state, dying, sample)
        except LawContractError as exc:
            raise LawContractError(f"epoch {n}: {exc}") from exc
        ups = sa_update(ups, sample, dying, n, alive=True)
        taus.append(tau)
        hs.append(dying)
        owns.append(sample.gamma_own)
        crosses.append(sample.gamma_cross)
        counts.extend(state)
        rec.extend(ups)
        if coupled:
            doms.extend(dom)
        if state.cx + state.cy == 0:
            nu_e = n
            break
        if n % _GUARD_EVERY == 0:
            guard.check(n)
    size = len(taus)
    return Trajectory(
        config=config, replication=replication_index, initial=config.initial,
        tau=np.frombuffer(taus, dtype=np.float64).copy(),
        h=np.frombuffer(hs, dtype=np.int8).astype(np.int64),
        gamma_own=np.frombuffer(owns, dtype=np.int64).copy(),
        gamma_cross=np.frombuffer(crosses, dtype=np.int64).copy(),
        counts=np.frombuffer(counts, dtype=np.int64).reshape(size, 4).copy(),
        upsilon_rec=np.frombuffer(rec, dtype=np.float64).reshape(size, 4).copy(),
        extinction_epoch=nu_e,
        dominating=np.frombuffer(doms, dtype=np.int64).reshape(size, 4).copy() if coupled else None,
    )


# -- ensembles ---------------------------------------------------------------

@dataclass
class ReplicationResult:
    replication: int
    final_state: PopulationState
    final_epoch: int
    extinction_epoch: int | None

    @property
    def extinct(self) -> bool:
        return self.extinction_epoch is not None


def run_chain(config: ScenarioConfig, replication_index: int) -> ReplicationResult:
    """Embedded chain only (no clocks, no records); same path as ``run_trajectory``."""
    law = config.law_object
    rng, _ = replication_rngs(config.base_seed, replication_index)
    guard = _WallGuard(config.max_wall_seconds)
    draw = law.draw
    random = rng.random
    cx, cy, ax, ay = config.initial
    n = 0
    for n in range(1, config.horizon_epochs + 1):
        x_dies = random() * (cx + cy) < cx
        own, cross = draw(x_dies, cx, cy, ax, ay, rng)
        if x_dies:
            cx, cy, ax, ay = cx + own - 1, cy + cross, ax + own, ay + cross
        else:
            cx, cy, ax, ay = cx + cross, cy + own - 1, ax + cross, ay + own
        if cx < 0 or cy < 0 or ax < 0 or ay < 0:
            raise LawContractError(f"epoch {n}: sample ({own}, {cross}) made counts negative: "
                                   f"{(cx, cy, ax, ay)}")
        if cx + cy == 0:
            return ReplicationResult(replication_index, PopulationState(cx, cy, ax, ay), n, n)
        if n % _GUARD_EVERY == 0:
            guard.check(n)
    return ReplicationResult(replication_index, PopulationState(cx, cy, ax, ay), n, None)


def _run_chunk(config: ScenarioConfig, indices: Sequence[int]) -> list[ReplicationResult]:
    return [run_chain(config, i) for i in indices]


ENSEMBLE_HEADER = ("replication,extinct,nu_e,cx,cy,ax,ay,"
                   "psi_c,theta_c,psi_a,theta_a,beta_c,beta_a")


@dataclass
class EnsembleSummary:
    config: ScenarioConfig
    results: list[ReplicationResult]
    hist_bins: int = 20

    @property
    def horizon(self) -> int:
        return self.config.horizon_epochs

    @cached_property
    def final_upsilon(self) -> np.ndarray:
        """Scaled counts at the horizon (extinct paths stay frozen)."""
        c = np.array([r.final_state for r in self.results], dtype=float).reshape(-1, 4)
        return np.column_stack([c[:, 0] + c[:, 1], c[:, 0], c[:, 2] + c[:, 3], c[:, 2]]) / self.horizon

    @property
    def extinct_mask(self) -> np.ndarray:
        return np.array([r.extinct for r in self.results])

    @property
    def extinction_fraction(self) -> float:
        return float(self.extinct_mask.mean())

    @property
    def survival_fraction(self) -> float:
        return 1.0 - self.extinction_fraction

    @property
    def beta_c(self) -> np.ndarray:
        u = self.final_upsilon
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(u[:, 0] > 0, u[:, 1] / u[:, 0], np.nan)

    @property
    def beta_a(self) -> np.ndarray:
        u = self.final_upsilon
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(u[:, 2] > 0, u[:, 3] / u[:, 2], np.nan)

    def histogram(self) -> tuple[np.ndarray, np.ndarray]:
        """Counts of final beta_c over surviving paths on [0, 1]."""
        b = self.beta_c[~self.extinct_mask]
        return np.histogram(b, bins=self.hist_bins, range=(0.0, 1.0))

    def mean_ci(self, column: int) -> tuple[float, float, float]:
        v = self.final_upsilon[:, column]
        mean = float(v.mean())
        half = 1.96 * float(v.std(ddof=1)) / math.sqrt(len(v)) if len(v) > 1 else float("nan")
        return mean, mean - half, mean + half

    def write_csv(self, fh) -> None:
        fh.write(ENSEMBLE_HEADER + "\n")
        u, bc, ba = self.final_upsilon, self.beta_c, self.beta_a
        for i, r in enumerate(self.results):
            nu = "" if r.extinction_epoch is None else str(r.extinction_epoch)
            fh.write(",".join([str(r.replication), str(int(r.extinct)), nu,
                               *(str(v) for v in r.final_state),
                               *(_g(float(v)) for v in u[i]), _g(float(bc[i])),
                               _g(float(ba[i]))]) + "\n")

    def to_dict(self) -> dict:
        counts, edges = self.histogram()
        psi_c, psi_a = self.mean_ci(0), self.mean_ci(2)
        return {
            "replications": len(self.results),
            "horizon_epochs": self.horizon,
            "extinction_fraction": self.extinction_fraction,
            "survival_fraction": self.survival_fraction,
            "histogram_beta_c": {"edges": edges.tolist(), "counts": counts.tolist()},
            "psi_c": {"mean": psi_c[0], "ci95": [psi_c[1], psi_c[2]]},
            "psi_a": {"mean": psi_a[0], "ci95": [psi_a[1], psi_a[2]]},
        }


def run_ensemble(config: ScenarioConfig, parallelism: int = 1) -> EnsembleSummary:
    """All replications of ``config``; results do not depend on ``parallelism``."""
    indices = list(range(config.replications))
    if parallelism <= 1 or len(indices) == 1:
        results = _run_chunk(config, indices)
    else:
        chunks = [indices[i::parallelism] for i in range(parallelism)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(chunks), chunks))
        results = sorted((r for part in parts for r in part), key=lambda r: r.replication)
    return EnsembleSummary(config, results)
