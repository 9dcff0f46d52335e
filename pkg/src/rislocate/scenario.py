"""Scenario constants, array layout and per-segment propagation parameters.

Coordinate conventions
----------------------
All arrays are half-wavelength ULAs parallel to the x-axis. Element ``k`` of
every array (BS, RIS, UE) sits at ``reference - k * lambda/2 * e_x``, i.e. the
element index grows towards -x.  With this ordering the steering vector
``a_N(f) = exp(-j*pi*(0..N-1)*f)`` reproduces the exact spherical-wave phase
progression to first order when every link is described by a single direction
cosine::

    BS -> RIS segment : x-component of unit(p_bs - p_seg)
    RIS segment -> UE : x-component of unit(p_seg - p_ue)

i.e. the unit vector pointing from the downstream node back to the upstream
node.  Arrival cosines therefore point from the receiving array towards the
transmitter, and the departure cosine of a link equals its arrival cosine.
The back-projection ``p = p_seg + r * [-f, -sqrt(1 - f^2)]`` then inverts the
RIS-UE link exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry, InvalidConfig, InvalidInput, NoValidPartition

SPEED_OF_LIGHT = 299_792_458.0

_DEGENERATE_DISTANCE = 1e-6


class FarFieldWarning(UserWarning):
    """Configured partition count is below the Rayleigh-distance bound."""


@dataclass(frozen=True)
class SystemConfig:
    """All scenario constants, SI units throughout.

    ``area_of_interest`` is ``(x_min, x_max, y_min, y_max)``.  The extra fields
    after ``rng_seed`` select modelling options that the protocol leaves open.
    """

    carrier_frequency_hz: float = 60e9
    subcarrier_spacing_hz: float = 120e3
    num_subcarriers: int = 128
    num_slots: int = 16
    num_tx_antennas: int = 32
    num_rx_antennas: int = 16
    num_ris_elements: int = 256
    num_partitions: int = 4
    phase_bits: int = 2
    tx_power_watts: float = 1.0
    noise_power_watts: float = 0.1
    pathloss_exponent: float = 2.08
    bs_position: tuple[float, float] = (0.0, 0.0)
    ris_center: tuple[float, float] = (15.0, 40.0)
    area_of_interest: tuple[float, float, float, float] = (10.0, 30.0, 10.0, 30.0)
    min_distance_hint: float = 10.0
    oversampling_factor: int = 4
    num_scatterers: int = 4
    rng_seed: int = 0
    precoder: str = "matched"
    nlos_common_per_path: bool = False
    channel_mode: str = "partitioned"
    fine_strategy: str = "graduated"

    def __post_init__(self):
        # normalise sequences so configs loaded from files compare equal
        for name in ("bs_position", "ris_center", "area_of_interest"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        ints = dict(
            num_subcarriers=self.num_subcarriers,
            num_slots=self.num_slots,
            num_tx_antennas=self.num_tx_antennas,
            num_rx_antennas=self.num_rx_antennas,
            num_ris_elements=self.num_ris_elements,
            num_partitions=self.num_partitions,
            phase_bits=self.phase_bits,
            oversampling_factor=self.oversampling_factor,
        )
        for name, value in ints.items():
            if int(value) != value or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if self.num_scatterers < 0:
            raise InvalidConfig("num_scatterers must be >= 0")
        if self.num_ris_elements % self.num_partitions:
            raise InvalidConfig(
                f"num_ris_elements={self.num_ris_elements} is not divisible by "
                f"num_partitions={self.num_partitions}"
            )
        if self.num_slots % 2 ** (self.phase_bits + 1):
            raise InvalidConfig(
                f"num_slots={self.num_slots} must be a multiple of 2^(b+1)={2 ** (self.phase_bits + 1)}"
            )
        if not self.pathloss_exponent > 2:
            raise InvalidConfig("pathloss_exponent must exceed 2")
        for name in ("tx_power_watts", "noise_power_watts", "subcarrier_spacing_hz",
                     "carrier_frequency_hz", "min_distance_hint"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        x0, x1, y0, y1 = self.area_of_interest
        if not (x1 > x0 and y1 > y0):
            raise InvalidConfig("area_of_interest must be (x_min, x_max, y_min, y_max) with positive extent")
        if not 0 <= self.rng_seed < 2**64:
            raise InvalidConfig("rng_seed must fit in an unsigned 64-bit integer")
        if self.precoder not in ("matched", "uniform"):
            raise InvalidConfig("precoder must be 'matched' or 'uniform'")
        if self.channel_mode not in ("partitioned", "exact"):
            raise InvalidConfig("channel_mode must be 'partitioned' or 'exact'")
        if self.fine_strategy not in ("graduated", "direct"):
            raise InvalidConfig("fine_strategy must be 'graduated' or 'direct'")
        bound = math.sqrt(self.wavelength / (2 * self.min_distance_hint)) * self.num_ris_elements
        if self.num_partitions < math.ceil(bound - 1e-12):
            warnings.warn(
                f"num_partitions={self.num_partitions} is below the far-field bound "
                f"{bound:.3f} for min_distance_hint={self.min_distance_hint} m",
                FarFieldWarning,
                stacklevel=3,
            )

    # -- derived quantities -----------------------------------------------

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    @property
    def segment_size(self) -> int:
        return self.num_ris_elements // self.num_partitions

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.tx_power_watts / self.noise_power_watts)

    def subcarrier_frequencies(self) -> np.ndarray:
        n = np.arange(1, self.num_subcarriers + 1)
        return self.carrier_frequency_hz + (n - (self.num_subcarriers + 1) / 2) * self.subcarrier_spacing_hz

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def with_snr_db(self, snr_db: float) -> "SystemConfig":
        """Copy with the noise power set so that ``10 log10(P_T / sigma^2) = snr_db``."""
        return self.replace(noise_power_watts=self.tx_power_watts / 10 ** (snr_db / 10))

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for name in ("bs_position", "ris_center", "area_of_interest"):
            out[name] = list(out[name])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            default = known[key].default
            if isinstance(default, bool):
                if isinstance(value, str):
                    value = value.strip().lower() in ("1", "true", "yes", "on")
                kwargs[key] = bool(value)
            elif isinstance(default, int):
                kwargs[key] = int(value)
            elif isinstance(default, float):
                kwargs[key] = float(value)
            elif isinstance(default, tuple):
                if isinstance(value, str):
                    value = [v for v in value.replace("(", " ").replace(")", " ").replace(",", " ").split()]
                kwargs[key] = tuple(float(v) for v in value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SystemConfig":
        """Load a flat key-value file: JSON, YAML, or ``key = value`` lines."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        suffix = path.suffix.lower()
        if suffix == ".json":
            data = json.loads(text)
        elif suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = {}
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                sep = "=" if "=" in line else ":"
                if sep not in line:
                    raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
                key, value = (s.strip() for s in line.split(sep, 1))
                data[key] = value.strip("'\"")
        if not isinstance(data, dict):
            raise InvalidConfig(f"{path}: expected a flat mapping")
        return cls.from_dict(data)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrayGeometry:
    """Element positions of the BS and RIS arrays (meters)."""

    bs_element_positions: np.ndarray
    ris_element_positions: np.ndarray
    segment_centers: np.ndarray
    wavelength: float
    num_rx_antennas: int = 1

    def ue_element_positions_for(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        k = np.arange(self.num_rx_antennas)
        return p[None, :] - np.outer(k * self.wavelength / 2, [1.0, 0.0])

    @property
    def bs_reference(self) -> np.ndarray:
        return self.bs_element_positions[0]


@dataclass(frozen=True)
class PathGeometry:
    """Per-segment far-field parameters for one UE position (arrays of length L)."""

    toa_bs_ris: np.ndarray
    toa_ris_ue: np.ndarray
    aod_bs: np.ndarray
    aoa_ris: np.ndarray
    aod_ris: np.ndarray
    aoa_ue: np.ndarray
    pathloss_bs_ris: np.ndarray
    pathloss_ris_ue: np.ndarray
    ue_position: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def num_segments(self) -> int:
        return len(self.toa_bs_ris)

    @property
    def toa_total(self) -> np.ndarray:
        return self.toa_bs_ris + self.toa_ris_ue


def min_partitions(num_elements: int, wavelength: float, min_distance: float) -> int:
    """Smallest divisor ``L`` of ``num_elements`` with ``L >= sqrt(lambda / 2D) * M``."""
    if num_elements < 1 or int(num_elements) != num_elements:
        raise InvalidInput("num_elements must be a positive integer")
    if not (wavelength > 0 and min_distance > 0):
        raise InvalidInput("wavelength and min_distance must be positive")
    bound = math.sqrt(wavelength / (2 * min_distance)) * num_elements
    for cand in range(1, num_elements + 1):
        if num_elements % cand == 0 and cand >= bound - 1e-12:
            return cand
    raise NoValidPartition(f"no divisor of M={num_elements} reaches the far-field bound {bound:.3f}")


def _ula(reference, count: int, spacing: float) -> np.ndarray:
    k = np.arange(count)
    return np.asarray(reference, dtype=float)[None, :] - np.outer(k * spacing, [1.0, 0.0])


def build_geometry(config: SystemConfig) -> ArrayGeometry:
    lam = config.wavelength
    half = lam / 2
    bs = _ula(config.bs_position, config.num_tx_antennas, half)
    m = config.num_ris_elements
    first = np.asarray(config.ris_center) + np.array([(m - 1) / 2 * half, 0.0])
    ris = _ula(first, m, half)
    centers = ris.reshape(config.num_partitions, config.segment_size, 2).mean(axis=1)
    return ArrayGeometry(
        bs_element_positions=bs,
        ris_element_positions=ris,
        segment_centers=centers,
        wavelength=lam,
        num_rx_antennas=config.num_rx_antennas,
    )


def link_cosine(upstream, downstream) -> np.ndarray:
    """x-component of the unit vector from ``downstream`` back to ``upstream``.

    Broadcasts over leading dimensions of either argument.
    """
    diff = np.asarray(upstream, dtype=float) - np.asarray(downstream, dtype=float)
    dist = np.linalg.norm(diff, axis=-1)
    if np.any(dist < _DEGENERATE_DISTANCE):
        raise DegenerateGeometry("coincident endpoints")
    return diff[..., 0] / dist


def path_geometry(geometry: ArrayGeometry, ue_position, config: SystemConfig) -> PathGeometry:
    p = np.asarray(ue_position, dtype=float)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise InvalidInput("ue_position must be a finite 2-vector")
    centers = geometry.segment_centers
    bs = geometry.bs_reference
    d_bs = np.linalg.norm(centers - bs, axis=1)
    d_ue = np.linalg.norm(centers - p, axis=1)
    if np.any(d_ue < _DEGENERATE_DISTANCE) or np.any(d_bs < _DEGENERATE_DISTANCE):
        raise DegenerateGeometry("UE or BS coincides with a RIS segment center")
    mu = config.pathloss_exponent
    cos_bs = (bs[0] - centers[:, 0]) / d_bs
    cos_ue = (centers[:, 0] - p[0]) / d_ue
    return PathGeometry(
        toa_bs_ris=d_bs / SPEED_OF_LIGHT,
        toa_ris_ue=d_ue / SPEED_OF_LIGHT,
        aod_bs=cos_bs,
        aoa_ris=cos_bs.copy(),
        aod_ris=cos_ue,
        aoa_ue=cos_ue.copy(),
        pathloss_bs_ris=d_bs ** (-mu),
        pathloss_ris_ue=d_ue ** (-mu),
        ue_position=p.copy(),
    )


def sample_positions(rng: np.random.Generator, config: SystemConfig, count: int) -> np.ndarray:
    """Uniform UE positions over the area of interest, shape ``(count, 2)``."""
    x0, x1, y0, y1 = config.area_of_interest
    return np.column_stack([rng.uniform(x0, x1, count), rng.uniform(y0, y1, count)])
