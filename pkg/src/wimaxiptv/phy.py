"""OFDM PHY abstraction: pathloss, link budget, burst-profile ladder, loss model.

Nothing here simulates symbols. A link is reduced to one SNR figure (fixed
stations, mean pathloss) and each PDU is delivered or lost by a Bernoulli
draw whose probability follows from the SNR margin over the burst profile's
required SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .sim_core import RandomStream

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0


class PhyError(ValueError):
    pass


@dataclass(frozen=True)
class ModulationCoding:
    name: str
    code_rate: Fraction
    spectral_efficiency: float
    required_snr_db: float

    @property
    def label(self) -> str:
        return f"{self.name} {self.code_rate}"

    def __str__(self) -> str:
        return self.label


def parse_ladder(text: str) -> list[ModulationCoding]:
    """Parse ``name<TAB>code_rate<TAB>bits_per_symbol_hz<TAB>required_snr_db`` lines."""
    ladder = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise PhyError(f"ladder line {lineno}: expected 4 tab-separated fields")
        name, rate, eff, snr = parts
        try:
            ladder.append(ModulationCoding(name.strip(), Fraction(rate.strip()),
                                           float(eff), float(snr)))
        except ValueError as exc:
            raise PhyError(f"ladder line {lineno}: {exc}") from None
    check_ladder(ladder)
    return ladder


def check_ladder(ladder: list[ModulationCoding]) -> None:
    if not ladder:
        raise PhyError("empty modulation ladder")
    for lo, hi in zip(ladder, ladder[1:]):
        if not (hi.required_snr_db > lo.required_snr_db
                and hi.spectral_efficiency > lo.spectral_efficiency):
            raise PhyError(f"ladder not strictly increasing at {hi.label}")


def load_ladder(path: str | Path | None = None) -> list[ModulationCoding]:
    if path is None:
        text = resources.files("wimaxiptv.data").joinpath("ladder.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_ladder(text)


DEFAULT_LADDER: list[ModulationCoding] = load_ladder()


def find_profile(label: str, ladder: list[ModulationCoding] = DEFAULT_LADDER) -> ModulationCoding:
    """Look up a burst profile by label, e.g. ``"64-QAM 3/4"``."""
    key = " ".join(label.split())
    for mc in ladder:
        if mc.label == key:
            return mc
    raise PhyError(f"unknown burst profile {label!r}")


@dataclass(frozen=True)
class RadioConfig:
    carrier_hz: float = 2.5e9
    bandwidth_hz: float = 5e6
    subcarriers_total: int = 512
    tx_power_dbm: float = 0.0
    antenna_gain_dbi: float = 0.0
    noise_figure_db: float = 7.0
    height_m: float = 6.0

    def __post_init__(self):
        if not 1.25e6 <= self.bandwidth_hz <= 20e6:
            raise PhyError(f"bandwidth_hz={self.bandwidth_hz} outside [1.25 MHz, 20 MHz]")
        if self.subcarriers_total <= 0:
            raise PhyError("subcarriers_total must be > 0")
        for name in ("carrier_hz", "tx_power_dbm", "antenna_gain_dbi", "noise_figure_db", "height_m"):
            if not math.isfinite(getattr(self, name)):
                raise PhyError(f"{name} must be finite")
        if self.carrier_hz <= 0 or self.height_m <= 0:
            raise PhyError("carrier_hz and height_m must be positive")


@dataclass(frozen=True)
class SubcarrierPlan:
    null_count: int = 91
    data_count: int = 360
    pilot_count: int = 60
    dc_count: int = 1

    @property
    def total(self) -> int:
        return self.null_count + self.data_count + self.pilot_count + self.dc_count

    def check(self, radio: RadioConfig) -> None:
        if min(self.null_count, self.data_count, self.pilot_count, self.dc_count) < 0:
            raise PhyError("subcarrier counts must be non-negative")
        if self.data_count <= 0:
            raise PhyError("data_count must be > 0")
        if self.total != radio.subcarriers_total:
            raise PhyError(f"subcarrier plan sums to {self.total}, radio has {radio.subcarriers_total}")

    @classmethod
    def all_data(cls, total: int = 512) -> "SubcarrierPlan":
        return cls(0, total, 0, 0)


# Erceg/SUI terrain constants (a, b, c) and the receive-height correction
# style ("AB" or "C") per terrain category.
ERCEG_TERRAIN = {
    "A": (4.6, 0.0075, 12.6),
    "B": (4.0, 0.0065, 17.1),
    "C": (3.6, 0.005, 20.0),
}


@dataclass(frozen=True)
class PathlossModel:
    model: str = "suburban-erceg-C"
    reference_distance_m: float = 100.0
    shadowing_sigma_db: float = 0.0

    def __post_init__(self):
        if self.model not in ("suburban-erceg-C", "free-space"):
            raise PhyError(f"unknown pathloss model {self.model!r}")
        if self.reference_distance_m <= 0:
            raise PhyError("reference_distance_m must be > 0")
        if self.shadowing_sigma_db < 0:
            raise PhyError("shadowing_sigma_db must be >= 0")


def free_space_db(distance_m: float, carrier_hz: float) -> float:
    return 20 * math.log10(distance_m) + 20 * math.log10(carrier_hz) - 147.55


def erceg_exponent(tx_height_m: float, terrain: str = "C") -> float:
    a, b, c = ERCEG_TERRAIN[terrain]
    return a - b * tx_height_m + c / tx_height_m


def erceg_intercept_db(reference_distance_m: float, carrier_hz: float) -> float:
    wavelength = SPEED_OF_LIGHT / carrier_hz
    return 20 * math.log10(4 * math.pi * reference_distance_m / wavelength)


def pathloss_db(model: PathlossModel, distance_m: float, carrier_hz: float,
                tx_height_m: float, rx_height_m: float) -> float:
    """Median pathloss in dB.

    ``suburban-erceg-C`` is the Erceg/SUI log-distance model for flat terrain
    with light tree density::

        PL = A + 10*gamma*log10(d/d0) + Xf + Xh
        A  = 20*log10(4*pi*d0/lambda)
        gamma = a - b*hb + c/hb          (hb = BS height, m)
        Xf = 6*log10(f_MHz/2000)
        Xh = -20*log10(hr/2)             (hr = SS height, m)
    """
    if carrier_hz <= 0:
        raise PhyError("carrier_hz must be > 0")
    if model.model == "free-space":
        if distance_m <= 0:
            raise PhyError("distance must be > 0")
        return free_space_db(distance_m, carrier_hz)
    d0 = model.reference_distance_m
    if distance_m < d0:
        raise PhyError(f"distance {distance_m} m is below the reference distance {d0} m")
    a = erceg_intercept_db(d0, carrier_hz)
    gamma = erceg_exponent(tx_height_m, "C")
    xf = 6 * math.log10(carrier_hz / 1e6 / 2000)
    xh = -20 * math.log10(rx_height_m / 2)
    return a + 10 * gamma * math.log10(distance_m / d0) + xf + xh


def noise_floor_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    return THERMAL_NOISE_DBM_HZ + 10 * math.log10(bandwidth_hz) + noise_figure_db


def link_snr_db(tx: RadioConfig, rx: RadioConfig, pl_db: float) -> float:
    """Received SNR over the receiver's channel bandwidth."""
    noise = noise_floor_dbm(rx.bandwidth_hz, rx.noise_figure_db)
    return tx.tx_power_dbm + tx.antenna_gain_dbi + rx.antenna_gain_dbi - pl_db - noise


def select_modulation(snr_db: float, ladder: list[ModulationCoding] = DEFAULT_LADDER
                      ) -> ModulationCoding | None:
    """Most efficient profile whose required SNR is met; ``None`` means outage."""
    best = None
    for mc in ladder:
        if mc.required_snr_db <= snr_db:
            best = mc
        else:
            break
    return best


def phy_rate_bps(mc: ModulationCoding | None, radio: RadioConfig, plan: SubcarrierPlan) -> float:
    if mc is None:
        raise PhyError("no data rate in outage")
    return mc.spectral_efficiency * radio.bandwidth_hz * plan.data_count / radio.subcarriers_total


@dataclass(frozen=True)
class BerCurve:
    """Piecewise margin-to-BER curve.

    BER is ``at_threshold`` at zero margin, falls log-linearly to ``floor``
    at ``floor_margin_db`` and stays there; below zero margin it keeps rising
    at the same slope up to ``ceiling``.
    """

    at_threshold: float = 1e-6
    floor: float = 1e-10
    floor_margin_db: float = 6.0
    ceiling: float = 0.5

    def __post_init__(self):
        if not 0 < self.floor < self.at_threshold < self.ceiling <= 0.5:
            raise PhyError("need 0 < floor < at_threshold < ceiling <= 0.5")
        if self.floor_margin_db <= 0:
            raise PhyError("floor_margin_db must be > 0")

    @property
    def decades_per_db(self) -> float:
        return math.log10(self.at_threshold / self.floor) / self.floor_margin_db

    def ber(self, margin_db: float) -> float:
        if margin_db >= self.floor_margin_db:
            return self.floor
        ber = self.floor * 10 ** (self.decades_per_db * (self.floor_margin_db - margin_db))
        return min(ber, self.ceiling)


DEFAULT_BER = BerCurve()


def loss_probability(snr_db: float, mc: ModulationCoding | None, size_bits: int,
                     curve: BerCurve = DEFAULT_BER, outage_below_db: float | None = None) -> float:
    if size_bits <= 0:
        raise PhyError("size_bits must be > 0")
    if outage_below_db is None:
        outage_below_db = DEFAULT_LADDER[0].required_snr_db
    if mc is None or snr_db < outage_below_db:
        return 1.0
    ber = curve.ber(snr_db - mc.required_snr_db)
    return -math.expm1(size_bits * math.log1p(-ber))


def pdu_delivery(snr_db: float, mc: ModulationCoding | None, size_bits: int,
                 stream: RandomStream, curve: BerCurve = DEFAULT_BER) -> bool:
    """True if the PDU gets through. Always consumes exactly one draw."""
    p = loss_probability(snr_db, mc, size_bits, curve)
    return stream.uniform() >= p
