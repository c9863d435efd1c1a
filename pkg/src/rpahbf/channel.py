"""Pattern-reconfigurable wideband air-to-ground channel model.

The HAPS array is a uniform planar array in the xy-plane whose elements can
each switch between ``M`` radiation patterns.  For every user the channel is
a Rician superposition of one line-of-sight path and ``L`` scattered paths,
evaluated on ``Nc`` OFDM subcarriers.  Evaluating the channel once per
candidate pattern gives the EM-CSI tensor of shape ``(Nc, K, Nt, M)``.

Mode indices are 1-based everywhere in the public API (``c_m in {1..M}``).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

__all__ = [
    "SPEED_OF_LIGHT",
    "ConfigError",
    "DomainError",
    "SystemConfig",
    "PatternMode",
    "PatternCodebook",
    "ArrayGeometry",
    "PathSet",
    "EmCsiTensor",
    "pattern_gain",
    "steering_vector",
    "subcarrier_frequencies",
    "sample_path_set",
    "build_emcsi",
    "apply_pattern",
    "sample_emcsi",
    "validate_pattern",
]


class ConfigError(ValueError):
    """Inconsistent system or network configuration."""


class DomainError(ValueError):
    """An index or argument lies outside its admissible domain."""


@dataclass(frozen=True)
class SystemConfig:
    """Physical-layer and channel-sampling parameters of one scenario."""

    num_antennas: int = 8
    num_rf_chains: int = 4
    num_users: int = 2
    num_subcarriers: int = 8
    num_patterns: int = 4
    bandwidth_hz: float = 7.2e6
    carrier_freq_hz: float = 2.0e9
    noise_density_dbm_per_hz: float = -174.0
    transmit_power_dbm: float = 40.0
    upa_rows: int = 2
    upa_cols: int = 4
    element_spacing_wavelengths: float = 0.5
    rician_k_db: float = 10.0
    num_nlos_paths: int = 4
    haps_altitude_m: float = 20_000.0
    rng_seed: int = 0
    max_offnadir_deg: float = 60.0
    nlos_azimuth_spread_deg: float = 15.0
    nlos_elevation_spread_deg: float = 5.0
    max_excess_delay_s: float = 1e-6

    def __post_init__(self):
        for name in ("num_antennas", "num_rf_chains", "num_users",
                     "num_subcarriers", "num_patterns", "upa_rows", "upa_cols"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.num_nlos_paths < 0 or int(self.num_nlos_paths) != self.num_nlos_paths:
            raise ConfigError(f"num_nlos_paths must be a non-negative integer, got {self.num_nlos_paths!r}")
        if self.upa_rows * self.upa_cols != self.num_antennas:
            raise ConfigError(
                f"num_antennas={self.num_antennas} != upa_rows*upa_cols="
                f"{self.upa_rows}*{self.upa_cols}")
        if self.num_antennas % self.num_rf_chains:
            raise ConfigError(
                f"num_rf_chains={self.num_rf_chains} does not divide "
                f"num_antennas={self.num_antennas}")
        if self.num_users > self.num_rf_chains:
            raise ConfigError(
                f"num_users={self.num_users} exceeds num_rf_chains={self.num_rf_chains}")
        for name in ("bandwidth_hz", "carrier_freq_hz", "element_spacing_wavelengths",
                     "haps_altitude_m", "max_excess_delay_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 0 <= self.max_offnadir_deg < 90:
            raise ConfigError(f"max_offnadir_deg must lie in [0, 90), got {self.max_offnadir_deg!r}")
        if self.rng_seed < 0:
            raise ConfigError(f"rng_seed must be unsigned, got {self.rng_seed!r}")

    @property
    def subarray_size(self) -> int:
        return self.num_antennas // self.num_rf_chains

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def rician_k_linear(self) -> float:
        return 10.0 ** (self.rician_k_db / 10.0)

    @property
    def transmit_power_w(self) -> float:
        return 10.0 ** ((self.transmit_power_dbm - 30.0) / 10.0)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "SystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown SystemConfig key(s): {', '.join(unknown)}")
        return cls(**values)

    @classmethod
    def full_scale(cls, **overrides) -> "SystemConfig":
        """Full-scale simulation settings (32 elements, 8 RF chains, 60 subcarriers)."""
        values = dict(num_antennas=32, num_rf_chains=8, num_users=4,
                      num_subcarriers=60, num_patterns=4, upa_rows=4, upa_cols=8,
                      transmit_power_dbm=50.0)
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class PatternMode:
    """One parametric radiation pattern.

    Amplitude is ``A * max_lobe cos(dphi/2)**q * sin(theta)**p`` where
    ``dphi`` is the azimuth offset from the lobe peak wrapped to (-pi, pi].
    """

    peak_azimuth_deg: tuple[float, ...]
    azimuth_exponent: float = 4.0
    elevation_exponent: float = 1.0
    normalization: float = 1.0
    phase_rad: float = 0.0

    def __post_init__(self):
        peaks = self.peak_azimuth_deg
        if np.isscalar(peaks):
            peaks = (float(peaks),)
        object.__setattr__(self, "peak_azimuth_deg", tuple(float(p) for p in peaks))
        if not self.peak_azimuth_deg:
            raise ConfigError("a pattern mode needs at least one lobe")
        if not self.azimuth_exponent > 0:
            raise ConfigError("azimuth_exponent must be > 0")
        if self.elevation_exponent < 0:
            raise ConfigError("elevation_exponent must be >= 0")
        if not self.normalization > 0:
            raise ConfigError("normalization must be > 0")

    def shape(self, theta, phi) -> np.ndarray:
        """Un-normalized real amplitude at (theta, phi)."""
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        lobes = []
        for peak in self.peak_azimuth_deg:
            dphi = _wrap(phi - np.deg2rad(peak))
            lobes.append(np.cos(dphi / 2.0) ** self.azimuth_exponent)
        # wrapped offsets never exceed pi, so cos(dphi/2) >= 0 and no clamp is needed
        azimuth = np.maximum.reduce(lobes) if len(lobes) > 1 else lobes[0]
        return azimuth * np.abs(np.sin(theta)) ** self.elevation_exponent


# peak azimuths of the four-mode codebook; entry 3 is the dual-lobe pattern
_DEFAULT_PEAKS = [(0.0,), (30.0,), (56.0, -56.0), (-30.0,)]
# which of the four modes a smaller codebook keeps (mode 1 is always first)
_DEFAULT_SUBSETS = {1: [0], 2: [0, 2], 3: [0, 1, 3], 4: [0, 1, 2, 3]}


@dataclass(frozen=True)
class PatternCodebook:
    modes: tuple[PatternMode, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ConfigError("codebook must contain at least one mode")

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def num_modes(self) -> int:
        return len(self.modes)

    @classmethod
    def default(cls, num_modes: int = 4, azimuth_exponent: float = 4.0,
                elevation_exponent: float = 1.0) -> "PatternCodebook":
        """Equal-power codebook with lobes at 0, 30, +-56 and -30 degrees.

        Codebooks with fewer than four modes keep mode 1 (0 degrees) and the
        most widely spread of the remaining ones.
        """
        if num_modes not in _DEFAULT_SUBSETS:
            raise ConfigError(f"default codebook supports 1..4 modes, got {num_modes}")
        modes = []
        for idx in _DEFAULT_SUBSETS[num_modes]:
            raw = PatternMode(_DEFAULT_PEAKS[idx], azimuth_exponent, elevation_exponent)
            modes.append(dataclasses.replace(raw, normalization=_unit_power_constant(raw)))
        return cls(tuple(modes))

    def gains(self, theta, phi) -> np.ndarray:
        """Complex gains of every mode; output shape ``(..., M)``."""
        out = [m.normalization * m.shape(theta, phi) * np.exp(1j * m.phase_rad)
               for m in self.modes]
        return np.stack(out, axis=-1).astype(complex)


def _wrap(angle):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


def _unit_power_constant(mode: PatternMode, n_phi: int = 1 << 16) -> float:
    """Amplitude constant giving (1/4pi) * integral |G|^2 dOmega = 1."""
    p = mode.elevation_exponent
    # int_0^pi sin^(2p+1) = sqrt(pi) Gamma(p+1) / Gamma(p+3/2)
    theta_part = math.sqrt(math.pi) * math.gamma(p + 1.0) / math.gamma(p + 1.5)
    phi = -np.pi + 2.0 * np.pi * np.arange(n_phi) / n_phi
    flat = PatternMode(mode.peak_azimuth_deg, mode.azimuth_exponent, 0.0)
    phi_part = 2.0 * np.pi * np.mean(flat.shape(np.pi / 2, phi) ** 2)
    return math.sqrt(4.0 * math.pi / (theta_part * phi_part))


def pattern_gain(codebook: PatternCodebook, mode: int, theta, phi):
    """Complex gain ``G_mode(theta, phi)`` of a 1-based pattern index."""
    if int(mode) != mode or not 1 <= mode <= codebook.num_modes:
        raise DomainError(f"mode {mode!r} outside 1..{codebook.num_modes}")
    m = codebook.modes[int(mode) - 1]
    value = m.normalization * m.shape(theta, phi) * np.exp(1j * m.phase_rad)
    return complex(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class ArrayGeometry:
    positions: np.ndarray  # (Nt, 3) metres

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ConfigError(f"positions must have shape (Nt, 3), got {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def num_antennas(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def upa(cls, rows: int, cols: int, spacing_m: float) -> "ArrayGeometry":
        """Row-major UPA in the xy-plane; element ``m = row*cols + col``."""
        r, c = np.divmod(np.arange(rows * cols), cols)
        pos = np.stack([c * spacing_m, r * spacing_m, np.zeros(rows * cols)], axis=1)
        return cls(pos)

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "ArrayGeometry":
        spacing = cfg.element_spacing_wavelengths * cfg.wavelength_m
        return cls.upa(cfg.upa_rows, cfg.upa_cols, spacing)


def _wave_vector(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.sin(theta) * np.cos(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(theta)], axis=-1)


def _geometric_phase(geom: ArrayGeometry, theta, phi, wavelength: float) -> np.ndarray:
    """exp(-j 2pi/lambda k^T p_m); shape ``(..., Nt)``."""
    k = _wave_vector(theta, phi)
    return np.exp(-2j * np.pi / wavelength * (k @ geom.positions.T))


def validate_pattern(c, num_antennas: int, num_modes: int) -> np.ndarray:
    """Return ``c`` as an int array after checking it lies in {1..M}^Nt."""
    arr = np.asarray(c)
    if arr.shape != (num_antennas,):
        raise DomainError(f"pattern vector must have shape ({num_antennas},), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise DomainError("pattern vector entries must be integers")
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 1 or arr.max() > num_modes):
        raise DomainError(f"pattern vector entries must lie in 1..{num_modes}")
    return arr.astype(np.int64)


def steering_vector(geom: ArrayGeometry, codebook: PatternCodebook, c, theta: float,
                    phi: float, fc: float) -> np.ndarray:
    """Spatial-electromagnetic steering vector for pattern vector ``c``."""
    c = validate_pattern(c, geom.num_antennas, codebook.num_modes)
    gains = codebook.gains(theta, phi)[c - 1]
    return gains * _geometric_phase(geom, theta, phi, SPEED_OF_LIGHT / fc)


def subcarrier_frequencies(num_subcarriers: int, bandwidth_hz: float) -> np.ndarray:
    """Centred baseband offsets ``(g - (Nc+1)/2) * Bw/Nc`` for g = 1..Nc."""
    g = np.arange(1, num_subcarriers + 1)
    return (g - (num_subcarriers + 1) / 2.0) * bandwidth_hz / num_subcarriers


@dataclass(frozen=True)
class PathSet:
    """Propagation paths of one user; index 0 is the LoS path."""

    elevation: np.ndarray
    azimuth: np.ndarray
    gain: np.ndarray
    delay: np.ndarray
    rician_k_linear: float
    large_scale_gain: float
    user_index: int = 0

    def __post_init__(self):
        n = len(self.elevation)
        for name in ("azimuth", "gain", "delay"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"PathSet.{name} length differs from elevation")
        if n < 1:
            raise ConfigError("PathSet needs a LoS entry")
        if self.rician_k_linear < 0:
            raise ConfigError("rician_k_linear must be >= 0")

    @property
    def num_nlos(self) -> int:
        return len(self.elevation) - 1


def sample_path_set(cfg: SystemConfig, rng: np.random.Generator, user_index: int = 0) -> PathSet:
    """Draw one user's LoS geometry and NLoS clusters.

    LoS direction is uniform over the solid angle of the service cone around
    nadir.  NLoS angles scatter uniformly around the LoS direction, NLoS gains
    are CN(0,1) normalized to unit total power, and excess delays are uniform
    in (0, max_excess_delay_s].
    """
    L = cfg.num_nlos_paths
    cos_max = math.cos(math.radians(cfg.max_offnadir_deg))
    theta0 = math.acos(rng.uniform(cos_max, 1.0))
    phi0 = float(_wrap(rng.uniform(-np.pi, np.pi)))
    distance = cfg.haps_altitude_m / math.cos(theta0)
    tau0 = distance / SPEED_OF_LIGHT
    alpha0 = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))

    d_el = rng.uniform(-1.0, 1.0, L) * math.radians(cfg.nlos_elevation_spread_deg)
    d_az = rng.uniform(-1.0, 1.0, L) * math.radians(cfg.nlos_azimuth_spread_deg)
    alpha = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / math.sqrt(2.0)
    if L:
        alpha = alpha / np.sqrt(np.sum(np.abs(alpha) ** 2))
    excess = cfg.max_excess_delay_s * (1.0 - rng.random(L))

    theta = np.abs(theta0 + d_el)
    theta = np.where(theta > np.pi, 2.0 * np.pi - theta, theta)
    return PathSet(
        elevation=np.concatenate([[theta0], theta]),
        azimuth=np.concatenate([[phi0], _wrap(phi0 + d_az)]),
        gain=np.concatenate([[alpha0], alpha]).astype(complex),
        delay=np.concatenate([[tau0], tau0 + excess]),
        rician_k_linear=cfg.rician_k_linear,
        large_scale_gain=cfg.wavelength_m / (4.0 * math.pi * distance),
        user_index=user_index,
    )


@dataclass(frozen=True)
class EmCsiTensor:
    """Channel coefficients ``h`` for every (subcarrier, user, antenna, mode)."""

    data: np.ndarray
    subcarrier_freqs: np.ndarray = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 4:
            raise ConfigError(f"EM-CSI tensor must be 4-D (Nc, K, Nt, M), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ConfigError("EM-CSI tensor has non-finite entries")
        freqs = self.subcarrier_freqs
        freqs = np.zeros(data.shape[0]) if freqs is None else np.asarray(freqs, dtype=float)
        if freqs.shape != (data.shape[0],):
            raise ConfigError("subcarrier_freqs length must equal Nc")
        data.setflags(write=False)
        freqs.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "subcarrier_freqs", freqs)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def check_config(self, cfg: SystemConfig) -> None:
        expected = (cfg.num_subcarriers, cfg.num_users, cfg.num_antennas, cfg.num_patterns)
        if self.data.shape != expected:
            raise ConfigError(f"tensor shape {self.data.shape} does not match config {expected}")


def _rician_weights(k_linear: float) -> tuple[float, float]:
    if math.isinf(k_linear):
        return 1.0, 0.0
    return math.sqrt(k_linear / (k_linear + 1.0)), math.sqrt(1.0 / (k_linear + 1.0))


def build_emcsi(cfg: SystemConfig, geom: ArrayGeometry, codebook: PatternCodebook,
                paths: Sequence[PathSet], component: str = "both") -> EmCsiTensor:
    """Assemble the EM-CSI tensor from per-user path sets.

    ``component="los"`` / ``"nlos"`` return the un-weighted LoS or NLoS part
    alone (no Rician factor applied).
    """
    if len(paths) != cfg.num_users:
        raise ConfigError(f"expected {cfg.num_users} path sets, got {len(paths)}")
    if geom.num_antennas != cfg.num_antennas:
        raise ConfigError("array geometry size differs from num_antennas")
    if codebook.num_modes != cfg.num_patterns:
        raise ConfigError("codebook size differs from num_patterns")
    if component not in ("both", "los", "nlos"):
        raise ValueError(f"unknown component {component!r}")

    freqs = subcarrier_frequencies(cfg.num_subcarriers, cfg.bandwidth_hz)
    out = np.zeros((cfg.num_subcarriers, cfg.num_users, cfg.num_antennas, cfg.num_patterns),
                   dtype=complex)
    for u, ps in enumerate(paths):
        w_los, w_nlos = _rician_weights(ps.rician_k_linear)
        weights = np.full(len(ps.elevation), w_nlos)
        weights[0] = w_los
        if component == "los":
            weights[:] = 0.0
            weights[0] = 1.0
        elif component == "nlos":
            weights[:] = 1.0
            weights[0] = 0.0
        beta = ps.large_scale_gain * ps.gain[:, None] * np.exp(
            -2j * np.pi * ps.delay[:, None] * freqs[None, :])          # (P, Nc)
        gains = codebook.gains(ps.elevation, ps.azimuth)                # (P, M)
        phase = _geometric_phase(geom, ps.elevation, ps.azimuth, cfg.wavelength_m)  # (P, Nt)
        out[:, u] = np.einsum("p,pg,pm,px->gmx", weights, beta, phase, gains)
    return EmCsiTensor(out, freqs)


def apply_pattern(emcsi: EmCsiTensor, c) -> np.ndarray:
    """Channel matrices ``H_g(c)`` stacked as ``(Nc, K, Nt)``.

    Rows are ``h_{u,g}^H``: the selected tensor entries are conjugated.
    """
    Nc, K, Nt, M = emcsi.shape
    c = validate_pattern(c, Nt, M)
    return np.conj(emcsi.data[:, :, np.arange(Nt), c - 1])


def sample_emcsi(cfg: SystemConfig, rng: np.random.Generator,
                 geom: ArrayGeometry | None = None,
                 codebook: PatternCodebook | None = None) -> EmCsiTensor:
    """Draw path sets for all users and build one EM-CSI tensor."""
    geom = ArrayGeometry.from_config(cfg) if geom is None else geom
    codebook = PatternCodebook.default(cfg.num_patterns) if codebook is None else codebook
    paths = [sample_path_set(cfg, rng, u) for u in range(cfg.num_users)]
    return build_emcsi(cfg, geom, codebook, paths)
