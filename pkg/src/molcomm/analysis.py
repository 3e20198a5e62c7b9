"""Closed-form symbol error rate, transition matrices, mutual information and capacity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import physics, stats
from .modulation import Scheme, SchemeConfig, symbol_to_bits
from .stats import ArrivalMode, ArrivalModel

_TINY = 1e-300


@dataclass(frozen=True)
class Lane:
    """Operating point of one molecule type: released count, hit probability, threshold."""

    released: int
    hit_probability: float
    threshold: int
    background: float = 0.0

    @property
    def u(self) -> float:
        """Normalized threshold distance (z - np) / sqrt(np(1-p))."""
        n, p = self.released, self.hit_probability
        var = n * p * (1.0 - p)
        if var == 0.0:
            return math.copysign(math.inf, self.threshold - n * p)
        return (self.threshold - n * p) / math.sqrt(var)

    def model(self, released: Optional[int] = None, mode=ArrivalMode.GAUSSIAN) -> ArrivalModel:
        n = self.released if released is None else released
        return ArrivalModel(n, self.hit_probability, mode, self.background)


@dataclass(frozen=True)
class LinkOperatingPoint:
    lanes: tuple[Lane, ...]

    @property
    def u_values(self) -> tuple[float, ...]:
        return tuple(lane.u for lane in self.lanes)


def operating_point(cfg: SchemeConfig, geom: physics.ChannelGeometry,
                    background: float = 0.0) -> LinkOperatingPoint:
    """Per-type (n, p, z) for ``cfg`` sent over ``geom``.

    For CSK the single lane's ``released`` is the top level and its threshold
    is the first cut; the full level/cut tables stay on ``cfg``.
    """
    lanes = []
    for spec in cfg.molecule_specs:
        p = float(physics.slot_hit_probability(geom, spec.diffusion_coefficient))
        if cfg.scheme is Scheme.OOMOSK:
            n, z = cfg.molecules_per_one_bit, spec.threshold
        elif cfg.scheme is Scheme.MOSK:
            n, z = cfg.symbol_budget, spec.threshold
        else:
            n = max(cfg.csk_levels)
            z = cfg.csk_thresholds[0] if cfg.csk_thresholds else spec.threshold
        lanes.append(Lane(n, p, z, background))
    return LinkOperatingPoint(tuple(lanes))


class TransitionMatrix:
    """Row-stochastic matrix of P(receive s_j | send s_i)."""

    def __init__(self, entries, *, atol: float = 1e-9):
        w = np.array(entries, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {w.shape}")
        if np.any(w < -atol) or np.any(w > 1 + atol):
            raise ValueError("transition probabilities must lie in [0, 1]")
        rows = w.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > atol):
            raise ValueError(f"rows must sum to 1, got {rows}")
        w = np.clip(w, 0.0, 1.0)
        w.setflags(write=False)
        self.entries = w

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __repr__(self):
        return f"TransitionMatrix({self.entries.tolist()!r})"


def uniform_priors(order: int) -> np.ndarray:
    return np.full(order, 1.0 / order)


def _as_priors(priors, order: int) -> np.ndarray:
    if priors is None:
        return uniform_priors(order)
    q = np.asarray(priors, dtype=float)
    if q.shape != (order,):
        raise ValueError(f"priors have shape {q.shape}, matrix order is {order}")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
        raise ValueError("priors must be nonnegative and sum to 1")
    return q


def bit_success_probability(point: LinkOperatingPoint, lane: int,
                            mode=ArrivalMode.GAUSSIAN) -> float:
    """P(a transmitted 1 on ``lane`` is detected as 1) = P(N_l >= z_l)."""
    ln = point.lanes[lane]
    return stats.tail_geq(ln.model(mode=ArrivalMode.parse(mode)), ln.threshold)


def _false_alarm(lane: Lane, mode: ArrivalMode) -> float:
    if lane.background == 0.0:
        return 0.0
    return stats.tail_geq(ArrivalModel(0, lane.hit_probability, mode, lane.background),
                          lane.threshold)


def transition_matrix_oomosk(point: LinkOperatingPoint, cfg: SchemeConfig,
                             mode=ArrivalMode.GAUSSIAN) -> TransitionMatrix:
    """Lanes decide independently; the row is the product of per-lane outcomes.

    A lane carrying 1 reads 1 with its success probability; a silent lane
    reads 1 only through background arrivals (never, by default).
    """
    mode = ArrivalMode.parse(mode)
    k = cfg.bits_per_symbol
    if len(point.lanes) != k:
        raise ValueError(f"OOMoSK with k={k} needs {k} lanes")
    on = [bit_success_probability(point, l, mode) for l in range(k)]
    off = [_false_alarm(lane, mode) for lane in point.lanes]
    return oomosk_matrix(on, off)


def oomosk_matrix(success: Sequence[float], false_alarm: Optional[Sequence[float]] = None
                  ) -> TransitionMatrix:
    """OOMoSK channel from per-lane P(1 read | 1 sent) and P(1 read | 0 sent)."""
    k = len(success)
    off = [0.0] * k if false_alarm is None else list(false_alarm)
    m = 2**k
    w = np.ones((m, m))
    for i in range(m):
        sent = symbol_to_bits(i, k)
        for j in range(m):
            got = symbol_to_bits(j, k)
            for l in range(k):
                one = success[l] if sent[l] else off[l]
                w[i, j] *= one if got[l] else 1.0 - one
    return TransitionMatrix(w)


def transition_matrix_mosk(point: LinkOperatingPoint, cfg: SchemeConfig,
                           mode=ArrivalMode.GAUSSIAN) -> TransitionMatrix:
    """MoSK: decode the unique firing type, everything else is an erasure read as symbol 0."""
    mode = ArrivalMode.parse(mode)
    m = cfg.order
    if len(point.lanes) != m:
        raise ValueError(f"MoSK with M={m} needs {m} lanes")
    on = [bit_success_probability(point, i, mode) for i in range(m)]
    off = [_false_alarm(lane, mode) for lane in point.lanes]
    w = np.zeros((m, m))
    for i in range(m):
        fire = list(off)
        fire[i] = on[i]
        silent = [1.0 - f for f in fire]
        for j in range(m):
            others = math.prod(silent[:j] + silent[j + 1:])
            w[i, j] = fire[j] * others
        # erasure: no type or several types fired
        w[i, 0] += max(0.0, 1.0 - w[i].sum())
    return TransitionMatrix(w)


def transition_matrix_csk(point: LinkOperatingPoint, cfg: SchemeConfig,
                          mode=ArrivalMode.GAUSSIAN) -> TransitionMatrix:
    """CSK: level j is decoded when cut_j <= N < cut_{j+1}, N ~ Binomial(a_i, p)."""
    mode = ArrivalMode.parse(mode)
    if not cfg.csk_thresholds:
        raise ValueError("CSK config has no detection thresholds")
    lane = point.lanes[0]
    edges = (0, *cfg.csk_thresholds, math.inf)
    m = cfg.order
    w = np.zeros((m, m))
    for i, level in enumerate(cfg.csk_levels):
        model = lane.model(released=level, mode=mode)
        tails = [stats.tail_geq(model, int(e)) if e != math.inf else 0.0 for e in edges]
        w[i] = np.maximum(0.0, np.diff(-np.array(tails)))
    return TransitionMatrix(w)


def transition_matrix(point: LinkOperatingPoint, cfg: SchemeConfig,
                      mode=ArrivalMode.GAUSSIAN) -> TransitionMatrix:
    builder = {
        Scheme.OOMOSK: transition_matrix_oomosk,
        Scheme.MOSK: transition_matrix_mosk,
        Scheme.CSK: transition_matrix_csk,
    }[cfg.scheme]
    return builder(point, cfg, mode)


def symbol_error_rate(tm, priors=None) -> float:
    """P_s = sum_i q_i (1 - P(s_i | s_i))."""
    w = np.asarray(tm, dtype=float)
    q = _as_priors(priors, w.shape[0])
    return float(np.dot(q, 1.0 - np.diag(w)))


def oomosk4_ser(q_u1: float, q_u2: float, q: float = 0.25) -> float:
    """Closed-form 4-ary OOMoSK error rate from the two lane success probabilities."""
    return q * (3.0 - q_u1 - q_u2 - q_u1 * q_u2)


def oomosk4_ser_symmetric(q_u: float, q: float = 0.25) -> float:
    return q * (1.0 - q_u) * (3.0 + q_u)


def _xlogy_ratio(num, den):
    out = np.zeros_like(num)
    mask = (num > _TINY) & (den > _TINY)
    out[mask] = num[mask] * np.log2(num[mask] / den[mask])
    return out


def mutual_information(tm, priors=None) -> float:
    """I(X;Y) in bits from the joint P(x, y) = q_x W(y|x)."""
    w = np.asarray(tm, dtype=float)
    q = _as_priors(priors, w.shape[0])
    joint = q[:, None] * w
    py = joint.sum(axis=0)
    indep = q[:, None] * py[None, :]
    return float(max(0.0, _xlogy_ratio(joint, indep).sum()))


def entropy_bits(p) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > _TINY]
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class CapacityResult:
    capacity_bits: float
    optimal_priors: np.ndarray = field(repr=False)
    uniform_prior_mi: float
    gap: float
    iterations: int
    converged: bool


def _divergences(w: np.ndarray, r: np.ndarray) -> np.ndarray:
    """D(W_i || r W) in nats for every input row i."""
    out_dist = r @ w
    ratio = np.zeros_like(w)
    mask = w > _TINY
    ratio[mask] = w[mask] * np.log(w[mask] / out_dist[np.nonzero(mask)[1]])
    return ratio.sum(axis=1)


def _bounds(w: np.ndarray, r: np.ndarray):
    d = _divergences(w, r)
    dmax = float(d.max())
    # log sum_i r_i exp(d_i), shifted by dmax for range
    lower = dmax + math.log(float(r @ np.exp(d - dmax)))
    return d, lower, dmax


def capacity(tm, *, tol: float = 1e-9, max_iter: int = 10_000) -> CapacityResult:
    """Channel capacity in bits by Blahut-Arimoto iteration.

    The update is r_i <- r_i exp(step * D(W_i || rW)) / norm. ``step`` = 1 is
    the classical iteration and never lowers the lower bound; larger steps are
    tried while they improve it, which keeps nearly useless channels (where
    the classical step barely moves the prior) from stalling. Stops once
    max_i D(W_i||rW) - log sum_i r_i exp D(W_i||rW) <= ``tol`` bits.
    """
    w = np.asarray(tm, dtype=float)
    m = w.shape[0]
    r = uniform_priors(m)
    d, lower, upper = _bounds(w, r)
    gap = (upper - lower) / math.log(2.0)
    step = 1.0
    it = 0
    while gap > tol and it < max_iter:
        it += 1
        while True:
            z = np.log(np.maximum(r, _TINY)) + step * d
            z[r <= 0] = -np.inf
            cand = np.exp(z - z.max())
            cand /= cand.sum()
            d_c, lower_c, upper_c = _bounds(w, cand)
            if step == 1.0 or lower_c >= lower:
                break
            step = max(1.0, step / 4.0)
        r, d, lower, upper = cand, d_c, lower_c, upper_c
        step *= 2.0
        gap = (upper - lower) / math.log(2.0)
    return CapacityResult(
        capacity_bits=mutual_information(w, r),
        optimal_priors=r,
        uniform_prior_mi=mutual_information(w, None),
        gap=float(max(gap, 0.0)),
        iterations=it,
        converged=gap <= tol,
    )


def analyze(cfg: SchemeConfig, geom: physics.ChannelGeometry, mode=ArrivalMode.GAUSSIAN,
            priors: Optional[Sequence[float]] = None, background: float = 0.0):
    """Operating point, transition matrix, SER and uniform-prior MI in one call."""
    point = operating_point(cfg, geom, background)
    tm = transition_matrix(point, cfg, mode)
    return point, tm, symbol_error_rate(tm, priors), mutual_information(tm, priors)
