"""Seeded sample paths and one-step conditional predictors.

One run owns one PCG64 stream. The per-step draw order is fixed
(excitation, then any mimic self-excitation, then process noise), so runs
are bit-reproducible per seed. Concurrent batches derive disjoint streams
with :func:`cps_sentinel.numerics.split_seed`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import CpsModel
from .numerics import Dirac, SpdMatrix, make_spd, sample_gaussian
from .policies import (
    Attack,
    DoS,
    Fdi,
    HonestPolicy,
    Mimic,
    Replacement,
    compose_control,
    corrupt_mean_components,
    honest_mean,
)


class NonFiniteState(RuntimeError):
    """A state entry overflowed; the closed loop is numerically unstable."""


@dataclass(frozen=True)
class Trajectory:
    """A sample path: n+1 states, n controls, n excitations, plus provenance."""

    states: np.ndarray
    controls: np.ndarray
    excitations: np.ndarray
    seed: int
    attacked: bool

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        u = np.asarray(self.controls, dtype=float)
        e = np.asarray(self.excitations, dtype=float)
        n = s.shape[0] - 1
        if s.ndim != 2 or n < 0:
            raise ValueError("states must be a (n+1, n_agents) array")
        if u.shape != (n, s.shape[1]) or e.shape != (n, s.shape[1]):
            raise ValueError("controls and excitations must have shape (n, n_agents)")
        for name, a in (("states", s), ("controls", u), ("excitations", e)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_agents(self) -> int:
        return self.states.shape[1]


def simulate(m: CpsModel, honest: HonestPolicy, attack: Attack | None,
             horizon: int, seed: int) -> Trajectory:
    """Simulate ``horizon`` steps of the closed loop under the given policies.

    Raises :class:`NonFiniteState` if a state overflows; the run is never
    clamped, since clamping would corrupt every downstream statistic.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(int(seed))
    n = m.n_agents
    a = m.dynamics
    b = m.actuator_gains
    noise_law = m.noise_law
    excitation_law = m.excitation_law

    states = np.empty((horizon + 1, n))
    controls = np.empty((horizon, n))
    excitations = np.empty((horizon, n))

    init = m.initial_law
    states[0] = init.point if isinstance(init, Dirac) else sample_gaussian(rng, init)

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            e = sample_gaussian(rng, excitation_law)
            u = compose_control(honest, attack, states[: t + 1], t, e, rng)
            w = sample_gaussian(rng, noise_law)
            x_next = a @ states[t] + b * u + w
            if not np.isfinite(np.sum(x_next)):
                raise NonFiniteState(f"state overflowed at step {t + 1} (seed {seed})")
            states[t + 1] = x_next
            controls[t] = u
            excitations[t] = e

    return Trajectory(states, controls, excitations, seed=int(seed),
                      attacked=attack is not None)


@dataclass(frozen=True)
class ConditionalPair:
    """One-step conditional laws of the next state under both hypotheses."""

    honest_mean: np.ndarray
    honest_cov: SpdMatrix
    corrupt_mean: np.ndarray
    corrupt_cov: SpdMatrix


def conditional_covariances(m: CpsModel, corrupt, cfg) -> tuple[SpdMatrix, SpdMatrix]:
    """Time-invariant conditional covariances under both hypotheses.

    Honest: diag(b) V_e diag(b) + V_w. Corrupt: the attacked channels'
    excitation variance is zeroed (replacement, DoS), kept (FDI), or
    swapped for the mimic's own covariance. With no attack both sides are
    the same object, so downstream log ratios cancel exactly.

    Results are memoized per model instance; offsets and replacement maps
    never enter the covariance, so the cache keys on kind and set only.
    """
    cache = m.__dict__.setdefault("_cov_cache", {})
    key = _cov_key(corrupt, cfg)
    hit = cache.get(key)
    if hit is not None:
        return hit
    b = m.actuator_gains
    honest = cache.get(_cov_key(None, None))
    if honest is None:
        honest_cov = make_spd(m.process_noise + np.diag(b * b * m.excitation))
        cache[_cov_key(None, None)] = (honest_cov, honest_cov)
    else:
        honest_cov = honest[0]
    if corrupt is None or cfg is None:
        return honest_cov, honest_cov
    mal = cfg.malicious_indices
    v = m.excitation.copy()
    if isinstance(corrupt, (Replacement, DoS)):
        v[mal] = 0.0
    elif isinstance(corrupt, Mimic):
        v[mal] = corrupt.self_excitation.diag
    elif not isinstance(corrupt, Fdi):
        raise TypeError(f"unknown corrupt policy {corrupt!r}")
    corrupt_cov = make_spd(m.process_noise + np.diag(b * b * v))
    cache[key] = (honest_cov, corrupt_cov)
    return honest_cov, corrupt_cov


def _cov_key(corrupt, cfg):
    if corrupt is None or cfg is None:
        return None
    extra = tuple(corrupt.self_excitation.diag) if isinstance(corrupt, Mimic) else None
    return (type(corrupt).__name__, cfg.malicious_set, extra)


def predicted_conditionals(m: CpsModel, honest: HonestPolicy, corrupt,
                           cfg, traj: Trajectory, t: int) -> ConditionalPair:
    """Both one-step predictors for x_{t+1}, evaluated along the given path.

    The corrupt predictor is evaluated on the same observed history; which
    path to feed in is the caller's choice. Pass ``corrupt=None, cfg=None``
    to mirror the honest hypothesis on both sides.
    """
    if t >= traj.horizon:
        raise ValueError(f"step {t} is beyond the trajectory horizon {traj.horizon}")
    h_cov, c_cov = conditional_covariances(m, corrupt, cfg)
    hist = traj.states[: t + 1]
    g = honest_mean(honest, hist, t)
    drive = m.dynamics @ traj.states[t]
    mu_h = drive + m.actuator_gains * g
    if corrupt is None or cfg is None:
        return ConditionalPair(mu_h, h_cov, mu_h, c_cov)
    mal = cfg.malicious_indices
    u_mean = g.copy()
    u_mean[mal] = corrupt_mean_components(corrupt, honest, hist, t, mal, honest_vec=g)
    mu_c = drive + m.actuator_gains * u_mean
    return ConditionalPair(mu_h, h_cov, mu_c, c_cov)


def write_trajectory_csv(traj: Trajectory, fp) -> None:
    """Write columns t, x_1..x_N, u_1..u_N, e_1..e_N.

    The final row carries the terminal state with empty control cells.
    """
    n = traj.n_agents
    writer = csv.writer(fp, lineterminator="\n")
    header = (["t"] + [f"x_{i+1}" for i in range(n)]
              + [f"u_{i+1}" for i in range(n)] + [f"e_{i+1}" for i in range(n)])
    writer.writerow(header)
    for t in range(traj.horizon):
        writer.writerow([t] + [repr(float(v)) for v in traj.states[t]]
                        + [repr(float(v)) for v in traj.controls[t]]
                        + [repr(float(v)) for v in traj.excitations[t]])
    writer.writerow([traj.horizon] + [repr(float(v)) for v in traj.states[-1]]
                    + [""] * (2 * n))


def trajectory_csv_text(traj: Trajectory) -> str:
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    return buf.getvalue()
