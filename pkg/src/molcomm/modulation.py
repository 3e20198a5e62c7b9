"""Symbol encoders and threshold decoders for OOMoSK, MoSK and CSK.

Symbols are indexed MSB-first: the chunk (b1, ..., bk) is symbol
sum(b_l * 2**(k - l)), and bit l rides on molecule type l in OOMoSK.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence


class Scheme(enum.Enum):
    OOMOSK = "oomosk"
    MOSK = "mosk"
    CSK = "csk"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown scheme {value!r}") from None


@dataclass(frozen=True)
class MoleculeSpec:
    type_id: int
    diffusion_coefficient: float
    threshold: int

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold!r}")
        if not (self.diffusion_coefficient > 0 and math.isfinite(self.diffusion_coefficient)):
            raise ValueError("diffusion_coefficient must be positive")


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme
    bits_per_symbol: int
    molecules_per_one_bit: int
    molecule_specs: tuple[MoleculeSpec, ...]
    csk_levels: tuple[int, ...] = ()
    csk_thresholds: tuple[int, ...] = ()

    def __post_init__(self):
        k = self.bits_per_symbol
        if k < 1:
            raise ValueError("bits_per_symbol must be >= 1")
        if self.molecules_per_one_bit < 1:
            raise ValueError("molecules_per_one_bit must be >= 1")
        ids = [s.type_id for s in self.molecule_specs]
        if len(set(ids)) != len(ids):
            raise ValueError("molecule type ids must be unique")
        expected = {Scheme.OOMOSK: k, Scheme.MOSK: 2**k, Scheme.CSK: 1}[self.scheme]
        if len(self.molecule_specs) != expected:
            raise ValueError(
                f"{self.scheme.value} with k={k} needs {expected} molecule specs, "
                f"got {len(self.molecule_specs)}"
            )
        if self.scheme is Scheme.CSK:
            if len(self.csk_levels) != self.order:
                raise ValueError(f"CSK needs {self.order} levels")
            if any(a < 0 for a in self.csk_levels):
                raise ValueError("CSK levels must be nonnegative")
            cuts = self.csk_thresholds
            if cuts:
                if len(cuts) != self.order - 1:
                    raise ValueError(f"CSK needs {self.order - 1} thresholds")
                if cuts[0] < 1 or any(b <= a for a, b in zip(cuts, cuts[1:])):
                    raise ValueError("CSK thresholds must be >= 1 and strictly ascending")

    @property
    def order(self) -> int:
        return 2**self.bits_per_symbol

    @property
    def symbol_budget(self) -> int:
        """Molecules per symbol for a full-on OOMoSK symbol, k * (molecules per bit)."""
        return self.bits_per_symbol * self.molecules_per_one_bit

    def spec(self, type_id: int) -> MoleculeSpec:
        for s in self.molecule_specs:
            if s.type_id == type_id:
                return s
        raise KeyError(type_id)

    @classmethod
    def oomosk(cls, k: int, molecules_per_bit: int, diffusion_coefficient: float,
               threshold=20) -> "SchemeConfig":
        ds = _per_type(diffusion_coefficient, k)
        zs = _per_type(threshold, k)
        specs = tuple(MoleculeSpec(l + 1, ds[l], int(zs[l])) for l in range(k))
        return cls(Scheme.OOMOSK, k, molecules_per_bit, specs)

    @classmethod
    def mosk(cls, k: int, molecules_per_bit: int, diffusion_coefficient: float,
             threshold=20) -> "SchemeConfig":
        m = 2**k
        ds = _per_type(diffusion_coefficient, m)
        zs = _per_type(threshold, m)
        specs = tuple(MoleculeSpec(i + 1, ds[i], int(zs[i])) for i in range(m))
        return cls(Scheme.MOSK, k, molecules_per_bit, specs)

    @classmethod
    def csk(cls, k: int, molecules_per_bit: int, diffusion_coefficient: float,
            thresholds: Sequence[int] = ()) -> "SchemeConfig":
        levels = csk_levels(k, molecules_per_bit)
        # The spec's own threshold is unused by CSK detection; cuts carry the decision.
        spec = MoleculeSpec(1, float(diffusion_coefficient), 1)
        return cls(Scheme.CSK, k, molecules_per_bit, (spec,), levels, tuple(thresholds))

    def with_csk_thresholds(self, hit_probability: float) -> "SchemeConfig":
        return replace(self, csk_thresholds=csk_midpoint_thresholds(self.csk_levels, hit_probability))


def _per_type(value, count):
    if isinstance(value, (list, tuple)):
        if len(value) != count:
            raise ValueError(f"expected {count} per-type values, got {len(value)}")
        return list(value)
    return [value] * count


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def csk_levels(k: int, molecules_per_bit: int) -> tuple[int, ...]:
    """Equally spaced levels {0, a, 2a, ...} whose uniform mean is k * molecules_per_bit."""
    m = 2**k
    if m == 1:
        return (0,)
    step = 2.0 * k * molecules_per_bit / (m - 1)
    return tuple(_round_half_up(i * step) for i in range(m))


def csk_midpoint_thresholds(levels: Sequence[int], hit_probability: float) -> tuple[int, ...]:
    """Cuts halfway between adjacent expected received counts, kept >= 1 and strictly ascending."""
    cuts = []
    prev = 0
    for a, b in zip(levels, levels[1:]):
        z = max(_round_half_up((a + b) * hit_probability / 2.0), prev + 1)
        cuts.append(z)
        prev = z
    return tuple(cuts)


@dataclass(frozen=True)
class Emission:
    per_type_counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for t, n in self.per_type_counts.items():
            if n < 0:
                raise ValueError(f"negative molecule count for type {t}")

    @property
    def total(self) -> int:
        return sum(self.per_type_counts.values())

    def count(self, type_id: int) -> int:
        return self.per_type_counts.get(type_id, 0)


def bits_to_symbol(bits: Sequence[int]) -> int:
    s = 0
    for b in bits:
        if b not in (0, 1):
            raise ValueError(f"bits must be 0 or 1, got {b!r}")
        s = (s << 1) | b
    return s


def symbol_to_bits(symbol: int, k: int) -> tuple[int, ...]:
    if not 0 <= symbol < 2**k:
        raise ValueError(f"symbol {symbol} out of range for k={k}")
    return tuple((symbol >> (k - 1 - l)) & 1 for l in range(k))


def encode_oomosk(bits: Sequence[int], cfg: SchemeConfig) -> Emission:
    if cfg.scheme is not Scheme.OOMOSK:
        raise ValueError("encode_oomosk needs an OOMoSK config")
    if len(bits) != cfg.bits_per_symbol:
        raise ValueError(
            f"chunk has {len(bits)} bits, scheme carries {cfg.bits_per_symbol}"
        )
    bits_to_symbol(bits)  # validates entries
    counts = {
        cfg.molecule_specs[l].type_id: cfg.molecules_per_one_bit
        for l, b in enumerate(bits)
        if b == 1
    }
    return Emission(counts)


def encode_mosk(symbol: int, cfg: SchemeConfig) -> Emission:
    if cfg.scheme is not Scheme.MOSK:
        raise ValueError("encode_mosk needs a MoSK config")
    if not 0 <= symbol < cfg.order:
        raise ValueError(f"symbol {symbol} out of range for M={cfg.order}")
    return Emission({cfg.molecule_specs[symbol].type_id: cfg.symbol_budget})


def encode_csk(symbol: int, cfg: SchemeConfig) -> Emission:
    if cfg.scheme is not Scheme.CSK:
        raise ValueError("encode_csk needs a CSK config")
    if not 0 <= symbol < cfg.order:
        raise ValueError(f"symbol {symbol} out of range for M={cfg.order}")
    return Emission({cfg.molecule_specs[0].type_id: cfg.csk_levels[symbol]})


def encode_symbol(symbol: int, cfg: SchemeConfig) -> Emission:
    if cfg.scheme is Scheme.OOMOSK:
        return encode_oomosk(symbol_to_bits(symbol, cfg.bits_per_symbol), cfg)
    if cfg.scheme is Scheme.MOSK:
        return encode_mosk(symbol, cfg)
    return encode_csk(symbol, cfg)


def decode_threshold(counts: Mapping[int, int], cfg: SchemeConfig) -> int:
    """Map received per-type counts to a symbol index.

    OOMoSK decides each bit lane independently (N_l >= z_l). MoSK picks the
    single type whose count reaches its threshold; no firing type or several
    firing types is an erasure, reported as symbol 0. CSK returns the number
    of cuts at or below the count.
    """
    if cfg.scheme is Scheme.OOMOSK:
        bits = [int(counts.get(s.type_id, 0) >= s.threshold) for s in cfg.molecule_specs]
        return bits_to_symbol(bits)
    if cfg.scheme is Scheme.MOSK:
        fired = [i for i, s in enumerate(cfg.molecule_specs)
                 if counts.get(s.type_id, 0) >= s.threshold]
        return fired[0] if len(fired) == 1 else 0
    if not cfg.csk_thresholds:
        raise ValueError("CSK config has no detection thresholds")
    n = counts.get(cfg.molecule_specs[0].type_id, 0)
    return sum(1 for z in cfg.csk_thresholds if z <= n)


def decode_bits(counts: Mapping[int, int], cfg: SchemeConfig) -> tuple[int, ...]:
    return symbol_to_bits(decode_threshold(counts, cfg), cfg.bits_per_symbol)


def split_symbols(bits: Sequence[int], k: int) -> list[int]:
    if len(bits) % k:
        raise ValueError(
            f"bit stream of length {len(bits)} is not a multiple of k={k}; refusing to pad"
        )
    return [bits_to_symbol(bits[i:i + k]) for i in range(0, len(bits), k)]


def modulate_stream(bits: Sequence[int], cfg: SchemeConfig) -> list[Emission]:
    """One emission per slot, chunking the serial stream k bits at a time."""
    return [encode_symbol(s, cfg) for s in split_symbols(bits, cfg.bits_per_symbol)]


def demodulate_stream(slot_counts: Sequence[Mapping[int, int]], cfg: SchemeConfig) -> list[int]:
    out: list[int] = []
    for counts in slot_counts:
        out.extend(decode_bits(counts, cfg))
    return out


@dataclass(frozen=True)
class MoleculeBudget:
    total_over_M_symbols: int
    per_bit_average: float
    types_required: int


def molecule_budget(cfg: SchemeConfig) -> MoleculeBudget:
    """Molecules spent sending each of the M symbols once, and types needed."""
    total = sum(encode_symbol(s, cfg).total for s in range(cfg.order))
    return MoleculeBudget(
        total_over_M_symbols=total,
        per_bit_average=total / (cfg.order * cfg.bits_per_symbol),
        types_required=len(cfg.molecule_specs),
    )
