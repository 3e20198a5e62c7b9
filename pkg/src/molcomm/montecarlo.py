"""Monte Carlo particle oracle: first-passage sampling, slot counts, empirical SER.

Nothing here calls into the closed-form SER code; counts come either from
per-molecule first-passage draws (the physical path) or from direct binomial
draws with the slot hit probability (the fast path).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import physics
from .modulation import MoleculeSpec, SchemeConfig, decode_threshold, encode_symbol
from .stats import wilson_interval

# Upper bound on first-passage draws held in memory at once.
_PARTICLE_BATCH = 2_000_000


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.stream_id < 0:
            raise ValueError("stream_id must be nonnegative")

    def generator(self, chunk: int = 0) -> np.random.Generator:
        """Independent generator for ``chunk`` of this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, chunk))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class TrialReport:
    trials: int
    errors: int
    ser_estimate: float
    ci_95: tuple[float, float]

    @classmethod
    def from_counts(cls, trials: int, errors: int) -> "TrialReport":
        return cls(trials, errors, errors / trials, wilson_interval(errors, trials))

    @property
    def standard_error(self) -> float:
        p = self.ser_estimate
        return math.sqrt(p * (1.0 - p) / self.trials)


def sample_first_passage(r: float, D: float, rng: np.random.Generator, size=None):
    """Draw first-passage times over distance ``r``.

    P(T <= t) = erfc(r / sqrt(4Dt)) = P(|Z| >= r / sqrt(2Dt)) for standard
    normal Z, hence T = r^2 / (2 D Z^2).
    """
    if r <= 0 or D <= 0:
        raise ValueError("distance and diffusion coefficient must be positive")
    z = rng.standard_normal(size)
    with np.errstate(divide="ignore"):
        return r * r / (2.0 * D * z * z)


def _particle_counts(n_per_trial: np.ndarray, r: float, D: float, lo: float, hi: float,
                     rng: np.random.Generator) -> np.ndarray:
    trials = n_per_trial.shape[0]
    counts = np.zeros(trials, dtype=np.int64)
    if trials == 0 or n_per_trial.max(initial=0) == 0:
        return counts
    start = 0
    while start < trials:
        # grow the batch until it holds about _PARTICLE_BATCH molecules
        cum = np.cumsum(n_per_trial[start:])
        stop = start + max(1, int(np.searchsorted(cum, _PARTICLE_BATCH, side="right")))
        block = n_per_trial[start:stop]
        t = sample_first_passage(r, D, rng, int(block.sum()))
        hit = (t > lo) & (t <= hi)
        owner = np.repeat(np.arange(block.shape[0]), block)
        counts[start:stop] = np.bincount(owner, weights=hit, minlength=block.shape[0]).astype(np.int64)
        start = stop
    return counts


def _counts_for(n_per_trial: np.ndarray, spec: MoleculeSpec, geom: physics.ChannelGeometry,
                rng: np.random.Generator, method: str, hit_probability: Optional[float],
                background: float) -> np.ndarray:
    if method == "particle":
        lo, hi = geom.window
        counts = _particle_counts(n_per_trial, geom.distance, spec.diffusion_coefficient,
                                  lo, hi, rng)
    elif method == "binomial":
        p = hit_probability
        if p is None:
            p = float(physics.slot_hit_probability(geom, spec.diffusion_coefficient))
        counts = rng.binomial(n_per_trial, p)
    else:
        raise ValueError(f"unknown simulation method {method!r}")
    if background > 0:
        counts = counts + rng.poisson(background, n_per_trial.shape[0])
    return counts


def simulate_slot_counts(emission, geom: physics.ChannelGeometry,
                         specs: Sequence[MoleculeSpec], rng: np.random.Generator,
                         trials: int, *, method: str = "particle",
                         hit_probabilities: Optional[Mapping[int, float]] = None,
                         background: float = 0.0) -> dict[int, np.ndarray]:
    """Received count per molecule type over ``trials`` repetitions of one emission.

    ``method="particle"`` draws a first-passage time for every released
    molecule and counts those inside the detection window; ``"binomial"``
    draws Binomial(n_l, p_l) directly.
    """
    out = {}
    for spec in specs:
        n = np.full(trials, emission.count(spec.type_id), dtype=np.int64)
        p = None if hit_probabilities is None else hit_probabilities.get(spec.type_id)
        out[spec.type_id] = _counts_for(n, spec, geom, rng, method, p, background)
    return out


def _decode_all(counts: np.ndarray, cfg: SchemeConfig) -> np.ndarray:
    ids = [s.type_id for s in cfg.molecule_specs]
    rows, inverse = np.unique(counts, axis=0, return_inverse=True)
    decoded = np.array(
        [decode_threshold(dict(zip(ids, map(int, row))), cfg) for row in rows],
        dtype=np.int64,
    )
    return decoded[inverse.ravel()]


def _chunk_errors(cfg: SchemeConfig, geom: physics.ChannelGeometry, rng: np.random.Generator,
                  trials: int, method: str, hit_probabilities, background: float) -> int:
    table = np.array(
        [[encode_symbol(s, cfg).count(spec.type_id) for spec in cfg.molecule_specs]
         for s in range(cfg.order)],
        dtype=np.int64,
    )
    sent = rng.integers(0, cfg.order, trials)
    released = table[sent]
    counts = np.empty_like(released)
    for col, spec in enumerate(cfg.molecule_specs):
        p = None if hit_probabilities is None else hit_probabilities.get(spec.type_id)
        counts[:, col] = _counts_for(released[:, col], spec, geom, rng, method, p, background)
    return int(np.count_nonzero(_decode_all(counts, cfg) != sent))


def empirical_ser(cfg: SchemeConfig, geom: physics.ChannelGeometry, rng: RngSpec,
                  trials: int, *, point=None, method: str = "binomial",
                  background: float = 0.0, chunk_size: int = 10_000,
                  workers: int = 1) -> TrialReport:
    """Symbol error rate from uniformly drawn symbols.

    Trials are cut into fixed chunks, each with its own substream of ``rng``,
    so the report does not depend on ``workers``. ``point`` (a
    LinkOperatingPoint) may supply per-lane hit probabilities and background
    for the binomial path; otherwise both come from ``geom`` and the arguments.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hit = None
    if point is not None:
        hit = {spec.type_id: lane.hit_probability
               for spec, lane in zip(cfg.molecule_specs, point.lanes)}
        background = point.lanes[0].background
    sizes = [min(chunk_size, trials - s) for s in range(0, trials, chunk_size)]

    def run(idx):
        return _chunk_errors(cfg, geom, rng.generator(idx), sizes[idx], method, hit, background)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            errors = sum(pool.map(run, range(len(sizes))))
    else:
        errors = sum(run(i) for i in range(len(sizes)))
    return TrialReport.from_counts(trials, errors)


def random_walk_hit_fraction(r: float, D: float, t_end: float, rng: np.random.Generator,
                             *, steps: int = 2000, particles: int = 20_000) -> float:
    """Fraction of fixed-step Gaussian walkers absorbed at ``r`` by ``t_end``.

    Coarse smoke test for the exact sampler; it misses crossings between
    steps, so it is biased low by O(sqrt(dt)).
    """
    dt = t_end / steps
    sd = math.sqrt(2.0 * D * dt)
    x = np.zeros(particles)
    absorbed = np.zeros(particles, dtype=bool)
    for _ in range(steps):
        x += sd * rng.standard_normal(particles)
        absorbed |= x >= r
    return float(absorbed.mean())
