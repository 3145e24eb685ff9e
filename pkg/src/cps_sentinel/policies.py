"""Honest and corrupt control policies.

Honest actuators apply their policy mean plus the private excitation.
Corrupt actuators replace their component: replacement and denial-of-service
drop the excitation outright, false data injection rides on top of the
honest channel, and mimicry substitutes self-generated excitation. A
history is the array of states observed so far, shape (t+1, n_agents).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .model import AttackConfig
from .numerics import DiagonalPsd, GaussianLaw, sample_gaussian

History = np.ndarray


@dataclass(frozen=True)
class Zero:
    """Always-zero nominal control."""


@dataclass(frozen=True)
class LinearFeedback:
    """u = gain @ x_t; pass a sequence of gains for a per-step schedule."""

    gain: np.ndarray | tuple

    def gain_at(self, t: int) -> np.ndarray:
        if isinstance(self.gain, tuple):
            return self.gain[t]
        return self.gain

    @property
    def stationary(self) -> bool:
        return not isinstance(self.gain, tuple)


@dataclass(frozen=True)
class Affine:
    """u = gain @ x_t + offset."""

    gain: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True)
class HistoryWindow:
    """u = sum_k lag_gains[k] @ x_{t-k}; lags beyond the start are dropped."""

    lag_gains: tuple

    def __post_init__(self):
        if len(self.lag_gains) < 1:
            raise ValueError("window policy needs at least one lag gain")
        object.__setattr__(self, "lag_gains",
                           tuple(np.asarray(g, dtype=float) for g in self.lag_gains))


HonestPolicy = Union[Zero, LinearFeedback, Affine, HistoryWindow]


def is_markov(policy: HonestPolicy) -> bool:
    return not isinstance(policy, HistoryWindow)


def honest_mean(policy: HonestPolicy, history: History, t: int) -> np.ndarray:
    """Nominal control at step t given the states observed so far."""
    history = np.asarray(history, dtype=float)
    if history.ndim != 2 or history.shape[0] != t + 1:
        raise ValueError(f"history must hold states x_0..x_{t}, got shape {history.shape}")
    x = history[-1]
    if isinstance(policy, Zero):
        return np.zeros_like(x)
    if isinstance(policy, LinearFeedback):
        return policy.gain_at(t) @ x
    if isinstance(policy, Affine):
        return policy.gain @ x + policy.offset
    if isinstance(policy, HistoryWindow):
        out = np.zeros_like(x)
        for k, g in enumerate(policy.lag_gains):
            if k > t:
                break
            out += g @ history[t - k]
        return out
    raise TypeError(f"unknown honest policy {policy!r}")


@dataclass(frozen=True)
class Replacement:
    """Deterministic substitute map on the attacked channels.

    Built-ins: ``constant`` values, ``scaled_state`` (per-channel scale on
    the agent's own last state), ``sign_flip`` (negated honest mean), and a
    ``custom`` hook (history, t, malicious_idx) -> length-M vector.
    """

    mode: str
    values: np.ndarray | None = None
    custom: Callable[[History, int, np.ndarray], np.ndarray] | None = field(
        default=None, compare=False)

    def __post_init__(self):
        if self.mode not in ("constant", "scaled_state", "sign_flip", "custom"):
            raise ValueError(f"unknown replacement mode {self.mode!r}")
        if self.mode in ("constant", "scaled_state"):
            if self.values is None:
                raise ValueError(f"replacement mode {self.mode!r} needs values")
            object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.mode == "custom" and self.custom is None:
            raise ValueError("custom replacement needs a callable")

    @classmethod
    def constant(cls, values) -> "Replacement":
        return cls("constant", values=np.asarray(values, dtype=float))

    @classmethod
    def scaled_state(cls, scales) -> "Replacement":
        return cls("scaled_state", values=np.asarray(scales, dtype=float))

    @classmethod
    def sign_flip(cls) -> "Replacement":
        return cls("sign_flip")

    @classmethod
    def from_callable(cls, fn) -> "Replacement":
        return cls("custom", custom=fn)


@dataclass(frozen=True)
class Fdi:
    """Additive offsets on the attacked channels, constant or per step."""

    offsets: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.offsets, dtype=float)
        if o.ndim not in (1, 2) or not np.isfinite(o).all():
            raise ValueError("fdi offsets must be a finite vector or per-step table")
        object.__setattr__(self, "offsets", o)

    def offset_at(self, t: int) -> np.ndarray:
        if self.offsets.ndim == 1:
            return self.offsets
        if t >= self.offsets.shape[0]:
            raise ValueError(f"fdi offset schedule has {self.offsets.shape[0]} steps, "
                             f"step {t} requested")
        return self.offsets[t]


@dataclass(frozen=True)
class DoS:
    """Denial of service: the attacked channels emit zero."""


@dataclass(frozen=True)
class Mimic:
    """Honest mean map with self-generated excitation of covariance V1'."""

    self_excitation: DiagonalPsd


CorruptPolicy = Union[Replacement, Fdi, DoS, Mimic]

Attack = tuple[AttackConfig, CorruptPolicy]


def corrupt_mean_components(corrupt: CorruptPolicy, honest: HonestPolicy,
                            history: History, t: int, malicious_idx: np.ndarray,
                            honest_vec: np.ndarray | None = None) -> np.ndarray:
    """Conditional-mean contribution of the attacked channels (length M).

    For FDI this already includes the honest mean plus the offset; the
    channel's excitation is randomness, not mean, so it never appears here.
    """
    if isinstance(corrupt, DoS):
        return np.zeros(len(malicious_idx))
    if isinstance(corrupt, Fdi):
        g = honest_mean(honest, history, t) if honest_vec is None else honest_vec
        return g[malicious_idx] + corrupt.offset_at(t)
    if isinstance(corrupt, Mimic):
        g = honest_mean(honest, history, t) if honest_vec is None else honest_vec
        return g[malicious_idx]
    if isinstance(corrupt, Replacement):
        if corrupt.mode == "constant":
            return corrupt.values
        if corrupt.mode == "scaled_state":
            return corrupt.values * history[-1][malicious_idx]
        if corrupt.mode == "sign_flip":
            g = honest_mean(honest, history, t) if honest_vec is None else honest_vec
            return -g[malicious_idx]
        out = np.asarray(corrupt.custom(history, t, malicious_idx), dtype=float).reshape(-1)
        if out.size != len(malicious_idx):
            raise ValueError("custom replacement returned the wrong length")
        return out
    raise TypeError(f"unknown corrupt policy {corrupt!r}")


def compose_control(honest: HonestPolicy, attack: Attack | None, history: History,
                    t: int, excitation: np.ndarray,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Control vector actually admitted at step t.

    Honest channels emit mean plus excitation. Replacement and DoS discard
    the channel's excitation; FDI keeps it and adds the offset; mimicry
    draws fresh excitation from its own covariance (consumes ``rng``).
    """
    history = np.asarray(history, dtype=float)
    excitation = np.asarray(excitation, dtype=float)
    g = honest_mean(honest, history, t)
    u = g + excitation
    if attack is None:
        return u
    cfg, corrupt = attack
    mal = cfg.malicious_indices
    if isinstance(corrupt, Fdi):
        u[mal] = g[mal] + excitation[mal] + corrupt.offset_at(t)
    elif isinstance(corrupt, Mimic):
        if rng is None:
            raise ValueError("mimic policy draws its own excitation and needs an rng")
        own = sample_gaussian(rng, GaussianLaw(np.zeros(len(mal)), corrupt.self_excitation))
        u[mal] = g[mal] + own
    else:
        u[mal] = corrupt_mean_components(corrupt, honest, history, t, mal, honest_vec=g)
    return u
