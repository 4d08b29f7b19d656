"""Stochastic MLC NAND flash model for interrupted-program PUF extraction.

The chip is fully deterministic given two seeds. The fabrication seed fixes
the latent per-cell structure (program rates and weak-cell layout), which is
derived lazily per page so a chip never materialises its full latent arrays.
The noise seed drives a single per-operation stream consumed by program and
read commands; replaying the same seeds and command sequence reproduces every
byte of every read.

Cell model: an erased cell holds zero charge and digitises to bit 1. An
interrupted program of duration ``d`` ticks adds ``rate * d`` charge plus
per-operation Gaussian noise; a cell reads 0 once its charge crosses the
digitisation threshold. Weak-flagged cells whose charge lies inside a band
around the threshold flip their digitised value independently on every read,
which models transient read disturb. Wear accelerates programming and widens
the operation noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    AddressError,
    CalibrationError,
    ConfigurationError,
    FlashStateError,
)

LOW = "low"
HIGH = "high"

#: Digitisation threshold in charge units. Property of the read circuit, not
#: of the cell population, so it is a model constant rather than a parameter.
Q_THRESHOLD = 1.0

#: Number of discrete interrupt durations available to the controller. The
#: coarse grid is what prevents a 50/50 one/zero split: calibration can only
#: pick whole ticks.
TICK_GRID = 64

# Domain-separation tags for deterministic sub-streams.
_TAG_RATES = 1
_TAG_WEAK = 2
_TAG_NOISE = 3

_PAGE_CACHE_SIZE = 8


@dataclass(frozen=True)
class Geometry:
    """Chip layout: blocks x pages x (data + spare) bytes per page."""

    blocks_per_chip: int
    pages_per_block: int
    data_bytes_per_page: int
    spare_bytes_per_page: int

    def __post_init__(self):
        for name in ("blocks_per_chip", "pages_per_block", "data_bytes_per_page"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.spare_bytes_per_page < 0:
            raise ConfigurationError("spare_bytes_per_page must be >= 0")

    @property
    def page_bytes(self) -> int:
        return self.data_bytes_per_page + self.spare_bytes_per_page

    @property
    def page_bits(self) -> int:
        return self.page_bytes * 8

    @property
    def data_bits(self) -> int:
        return self.data_bytes_per_page * 8


def desk_geometry() -> Geometry:
    """Small geometry sized so full experiment suites run in minutes."""
    return Geometry(64, 64, 4096, 224)


def full_geometry() -> Geometry:
    """Geometry of the 32 Gb part the model is patterned on."""
    return Geometry(4096, 256, 4096, 224)


@dataclass(frozen=True)
class VariationParams:
    """Knobs of the process-variation model.

    rate_mu / rate_sigma are log-normal parameters of the per-cell program
    rate in charge units per tick. rate_byte_corr is the fraction of rate
    variance shared by the eight cells of a byte; local oxide and lithography
    variation is spatially clustered, and byte-level stability statistics
    depend on it directly. weak_gap_lambda is the per-bit rate of the
    exponential gaps between weak-cell positions.
    """

    rate_mu: float = -3.6889
    rate_sigma: float = 0.15
    rate_byte_corr: float = 0.85
    op_noise_sigma: float = 0.002
    weak_band: float = 0.999
    weak_gap_lambda: float = 0.165
    read_flip_prob: float = 0.45
    age_rate_alpha: float = 0.15
    age_noise_beta: float = 1.0
    pec_rating: int = 3000

    def __post_init__(self):
        if self.rate_sigma <= 0:
            raise ConfigurationError("rate_sigma must be > 0")
        if not 0.0 <= self.rate_byte_corr <= 1.0:
            raise ConfigurationError("rate_byte_corr must be in [0, 1]")
        if self.op_noise_sigma < 0:
            raise ConfigurationError("op_noise_sigma must be >= 0")
        if self.weak_band < 0:
            raise ConfigurationError("weak_band must be >= 0")
        if self.weak_gap_lambda <= 0:
            raise ConfigurationError("weak_gap_lambda must be > 0")
        if not 0.0 <= self.read_flip_prob <= 1.0:
            raise ConfigurationError("read_flip_prob must be in [0, 1]")
        if self.pec_rating < 1:
            raise ConfigurationError("pec_rating must be >= 1")


@dataclass(frozen=True)
class InterruptCalibration:
    """Chosen interrupt durations (ticks) and the digitisation threshold."""

    d_low: int
    d_high: int
    q_threshold: float

    def __post_init__(self):
        if not 0 < self.d_low < self.d_high:
            raise ConfigurationError("calibration requires 0 < d_low < d_high")

    def duration(self, level: str) -> int:
        if level == LOW:
            return self.d_low
        if level == HIGH:
            return self.d_high
        raise ConfigurationError(f"unknown program level {level!r}")


def _stream(seed_material) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_material)))


class FlashChip:
    """Simulated MLC NAND chip driven through erase / program / read commands.

    Single-writer: mutating commands on one chip must be serialised by the
    caller. Distinct chips are fully independent.
    """

    def __init__(self, geometry: Geometry, params: VariationParams,
                 fabrication_seed: int, noise_seed: int = 0):
        self.geometry = geometry
        self.params = params
        self.fabrication_seed = int(fabrication_seed)
        self.noise_seed = int(noise_seed)
        self.erase_counts = np.zeros(geometry.blocks_per_chip, dtype=np.int64)
        self.calibration: Optional[InterruptCalibration] = None
        # Charge arrays exist only for pages programmed since their last
        # erase; an absent entry means "erased, reads 0xFF".
        self._charges: dict[tuple[int, int], np.ndarray] = {}
        self._noise = _stream((self.noise_seed, self.fabrication_seed, _TAG_NOISE))
        self._page_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    # -- latent structure ---------------------------------------------------

    def _page_latents(self, block: int, page: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell program rates and weak flags for one page (cached)."""
        key = (block, page)
        cached = self._page_cache.get(key)
        if cached is not None:
            return cached
        rates = page_rates(self.fabrication_seed, self.geometry, self.params, block, page)
        weak = page_weak_mask(self.fabrication_seed, self.geometry, self.params, block, page)
        if len(self._page_cache) >= _PAGE_CACHE_SIZE:
            self._page_cache.pop(next(iter(self._page_cache)))
        self._page_cache[key] = (rates, weak)
        return rates, weak

    # -- address / state checks ---------------------------------------------

    def _check_block(self, block: int):
        if not 0 <= block < self.geometry.blocks_per_chip:
            raise AddressError(f"block {block} out of range")

    def _check_page(self, block: int, page: int):
        self._check_block(block)
        if not 0 <= page < self.geometry.pages_per_block:
            raise AddressError(f"page {page} out of range")

    # -- commands -------------------------------------------------------------

    def erase_block(self, block: int) -> None:
        """Clear every cell in the block to zero charge; counts one P/E cycle."""
        self._check_block(block)
        for page in range(self.geometry.pages_per_block):
            self._charges.pop((block, page), None)
        self.erase_counts[block] += 1

    def program_page_interrupted(self, block: int, page: int, level: str) -> None:
        """Apply the calibrated interrupted program for ``level`` to one page."""
        if self.calibration is None:
            raise FlashStateError("chip is not calibrated")
        self._program_with_duration(block, page, self.calibration.duration(level))

    def _program_with_duration(self, block: int, page: int, duration: int) -> None:
        self._check_page(block, page)
        if (block, page) in self._charges:
            raise FlashStateError(
                f"page ({block}, {page}) already programmed since last erase")
        rates, _ = self._page_latents(block, page)
        life = self.life_used(block)
        p = self.params
        rate_factor = 1.0 + p.age_rate_alpha * life
        sigma = p.op_noise_sigma * (1.0 + p.age_noise_beta * life)
        q = rates * (duration * rate_factor)
        if sigma > 0.0:
            q = q + self._noise.normal(0.0, sigma, size=q.shape)
        np.maximum(q, 0.0, out=q)
        self._charges[(block, page)] = q

    def read_page(self, block: int, page: int) -> np.ndarray:
        """Digitise the page; returns the data-area bytes as uint8.

        Weak-flagged cells inside the band around the threshold flip
        independently per read; charge is never modified by a read.
        """
        self._check_page(block, page)
        q = self._charges.get((block, page))
        if q is None:
            return np.full(self.geometry.data_bytes_per_page, 0xFF, dtype=np.uint8)
        bits = q < Q_THRESHOLD
        p = self.params
        if p.read_flip_prob > 0.0 and p.weak_band > 0.0:
            _, weak = self._page_latents(block, page)
            in_band = weak & (np.abs(q - Q_THRESHOLD) < p.weak_band)
            n_band = int(np.count_nonzero(in_band))
            if n_band:
                flips = self._noise.random(n_band) < p.read_flip_prob
                bits[in_band] ^= flips
        data_bits = bits[: self.geometry.data_bits]
        return np.packbits(data_bits)

    def life_used(self, block: int) -> float:
        """Fraction of the rated P/E budget consumed by this block."""
        self._check_block(block)
        return min(1.0, float(self.erase_counts[block]) / self.params.pec_rating)

    def age_block(self, block: int, cycles: int) -> None:
        """Apply ``cycles`` synthetic full-program/erase pairs to the block.

        Each pair leaves no persistent charge (the erase removes it), so only
        the wear counter carries state; the pairs are accounted without
        driving the per-cell arrays cycle by cycle.
        """
        self._check_block(block)
        if cycles < 0:
            raise ConfigurationError("cycles must be >= 0")
        if cycles == 0:
            return
        for page in range(self.geometry.pages_per_block):
            self._charges.pop((block, page), None)
        self.erase_counts[block] += cycles

    # -- snapshots of mutable state ------------------------------------------

    def programmed_pages(self) -> list[tuple[int, int]]:
        return sorted(self._charges)

    def page_charge(self, block: int, page: int) -> Optional[np.ndarray]:
        q = self._charges.get((block, page))
        return None if q is None else q.copy()

    def restore_page_charge(self, block: int, page: int, q: np.ndarray) -> None:
        self._check_page(block, page)
        if q.shape != (self.geometry.page_bits,):
            raise ConfigurationError("charge array does not match geometry")
        self._charges[(block, page)] = np.asarray(q, dtype=np.float64).copy()

    @property
    def scratch_block(self) -> int:
        """Last block; reserved for calibration sweeps, excluded from enrollment."""
        return self.geometry.blocks_per_chip - 1


def page_rates(fabrication_seed: int, geometry: Geometry, params: VariationParams,
               block: int, page: int) -> np.ndarray:
    """Latent per-cell program rates for one page.

    Log-normal marginals; a per-byte common factor carries the configured
    share of the variance so rate variation is spatially clustered at byte
    granularity.
    """
    g = _stream((fabrication_seed, block, page, _TAG_RATES))
    n_bytes = geometry.page_bytes
    byte_z = np.repeat(g.standard_normal(n_bytes), 8)
    cell_z = g.standard_normal(n_bytes * 8)
    rho = params.rate_byte_corr
    z = np.sqrt(rho) * byte_z + np.sqrt(1.0 - rho) * cell_z
    return np.exp(params.rate_mu + params.rate_sigma * z)


def page_weak_gaps(fabrication_seed: int, geometry: Geometry, params: VariationParams,
                   block: int, page: int) -> np.ndarray:
    """Continuous exponential gaps of the weak-cell arrival process for one page.

    The weak layout floors the running sum of these gaps to bit indices; the
    raw gaps are exposed so distribution tests can target the generator
    directly.
    """
    g = _stream((fabrication_seed, block, page, _TAG_WEAK))
    n_bits = geometry.page_bits
    lam = params.weak_gap_lambda
    chunks = []
    total = 0.0
    size = int(lam * n_bits * 1.2) + 64
    while total <= n_bits:
        chunk = g.exponential(1.0 / lam, size=size)
        chunks.append(chunk)
        total += float(chunk.sum())
        size = max(64, size // 4)
    gaps = np.concatenate(chunks)
    arrivals = np.cumsum(gaps)
    return gaps[arrivals < n_bits]


def page_weak_mask(fabrication_seed: int, geometry: Geometry, params: VariationParams,
                   block: int, page: int) -> np.ndarray:
    """Boolean weak flags over the linear bit index of one page."""
    gaps = page_weak_gaps(fabrication_seed, geometry, params, block, page)
    mask = np.zeros(geometry.page_bits, dtype=bool)
    positions = np.floor(np.cumsum(gaps)).astype(np.int64)
    mask[positions] = True
    return mask


def calibrate_interrupts(chip: FlashChip, scratch_pages: int = 2) -> InterruptCalibration:
    """Scan the tick grid on scratch pages and pick the 80/20 durations.

    d_low is the grid duration whose programmed (zero-bit) fraction lands
    nearest 0.20, d_high nearest 0.80. Fails if no duration comes within 0.10
    of a target or the two picks do not straddle. Scratch pages end erased.
    """
    geometry = chip.geometry
    scratch = chip.scratch_block
    pages = min(scratch_pages, geometry.pages_per_block)
    fractions = np.empty(TICK_GRID, dtype=np.float64)
    for i, duration in enumerate(range(1, TICK_GRID + 1)):
        chip.erase_block(scratch)
        acc = 0.0
        for page in range(pages):
            chip._program_with_duration(scratch, page, duration)
            data = chip.read_page(scratch, page)
            ones = int(np.unpackbits(data).sum())
            acc += 1.0 - ones / geometry.data_bits
        fractions[i] = acc / pages
    chip.erase_block(scratch)

    low_idx = int(np.argmin(np.abs(fractions - 0.20)))
    high_idx = int(np.argmin(np.abs(fractions - 0.80)))
    if abs(fractions[low_idx] - 0.20) > 0.10 or abs(fractions[high_idx] - 0.80) > 0.10:
        raise CalibrationError(
            "no grid duration reaches the target program fractions "
            f"(best low {fractions[low_idx]:.3f}, best high {fractions[high_idx]:.3f})")
    d_low, d_high = low_idx + 1, high_idx + 1
    if d_low >= d_high:
        raise CalibrationError(
            f"degenerate calibration: d_low {d_low} >= d_high {d_high}")
    cal = InterruptCalibration(d_low=d_low, d_high=d_high, q_threshold=Q_THRESHOLD)
    chip.calibration = cal
    return cal


def fabricate_chip(geometry: Geometry, params: VariationParams, seed: int,
                   noise_seed: int = 0, calibrate: bool = True) -> FlashChip:
    """Build a chip: latent draws are fixed by ``seed``; all cells start erased.

    Calibration is part of fabrication unless disabled (snapshot restore
    re-attaches a stored calibration instead of re-running the sweep).
    """
    if not isinstance(geometry, Geometry):
        raise ConfigurationError("geometry must be a Geometry")
    if not isinstance(params, VariationParams):
        raise ConfigurationError("params must be a VariationParams")
    chip = FlashChip(geometry, params, seed, noise_seed=noise_seed)
    if calibrate:
        calibrate_interrupts(chip)
    return chip
