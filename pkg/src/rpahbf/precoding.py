"""Sub-connected hybrid precoders, power normalization and sum-SE evaluation.

Transmit power ``pt`` is in watts throughout this module.  Channels are
passed as ``(Nc, K, Nt)`` arrays whose rows are ``h_{u,g}^H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegenerateInputError",
    "SubarrayMapping",
    "AnalogPrecoder",
    "DigitalPrecoderSet",
    "BeamformingSolution",
    "AnalogReport",
    "noise_power",
    "dbm_to_watts",
    "watts_to_dbm",
    "validate_analog",
    "average_power",
    "normalize_power",
    "sinr",
    "sinr_matrix",
    "sum_se",
]


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class SubarrayMapping:
    """Antenna ``m`` is driven by RF chain ``m // Ns`` (contiguous blocks)."""

    num_antennas: int
    num_rf_chains: int

    def __post_init__(self):
        if self.num_rf_chains < 1 or self.num_antennas % self.num_rf_chains:
            raise ValueError(f"{self.num_rf_chains} RF chains cannot split {self.num_antennas} antennas")

    @property
    def subarray_size(self) -> int:
        return self.num_antennas // self.num_rf_chains

    @property
    def rf_of_antenna(self) -> np.ndarray:
        return np.arange(self.num_antennas) // self.subarray_size

    def antennas_of(self, rf: int) -> np.ndarray:
        ns = self.subarray_size
        return np.arange(rf * ns, (rf + 1) * ns)

    def support(self) -> np.ndarray:
        """Boolean ``(Nt, N_RF)`` mask of the block-diagonal support."""
        mask = np.zeros((self.num_antennas, self.num_rf_chains), dtype=bool)
        mask[np.arange(self.num_antennas), self.rf_of_antenna] = True
        return mask


@dataclass(frozen=True)
class AnalogPrecoder:
    phases: np.ndarray
    mapping: SubarrayMapping

    def __post_init__(self):
        phases = np.array(self.phases, dtype=float)
        if phases.shape != (self.mapping.num_antennas,):
            raise ValueError(f"expected {self.mapping.num_antennas} phases, got {phases.shape}")
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)

    @property
    def matrix(self) -> np.ndarray:
        F = np.zeros((self.mapping.num_antennas, self.mapping.num_rf_chains), dtype=complex)
        F[np.arange(self.mapping.num_antennas), self.mapping.rf_of_antenna] = np.exp(1j * self.phases)
        return F


@dataclass(frozen=True)
class DigitalPrecoderSet:
    blocks: np.ndarray  # (Nc, N_RF, K)

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=complex)
        if blocks.ndim != 3:
            raise ValueError(f"digital precoders must be (Nc, N_RF, K), got {blocks.shape}")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    def __len__(self) -> int:
        return self.blocks.shape[0]


@dataclass(frozen=True)
class BeamformingSolution:
    c: np.ndarray
    analog: AnalogPrecoder
    digital: DigitalPrecoderSet
    achieved_se: float
    trace: tuple = field(default=(), compare=False)


@dataclass(frozen=True)
class AnalogReport:
    support_violations: tuple = ()
    modulus_violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.support_violations and not self.modulus_violations

    def __bool__(self) -> bool:
        return self.ok


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def noise_power(noise_density_dbm_per_hz: float, bandwidth_hz: float, num_subcarriers: int) -> float:
    """Per-subcarrier noise power in watts over a spacing of ``Bw/Nc``."""
    if not bandwidth_hz > 0 or num_subcarriers < 1:
        raise ValueError("bandwidth must be > 0 and num_subcarriers >= 1")
    spacing = bandwidth_hz / num_subcarriers
    return 10.0 ** ((noise_density_dbm_per_hz + 10.0 * np.log10(spacing) - 30.0) / 10.0)


def _as_matrix(analog) -> np.ndarray:
    return analog.matrix if isinstance(analog, AnalogPrecoder) else np.asarray(analog)


def _as_blocks(digital) -> np.ndarray:
    return digital.blocks if isinstance(digital, DigitalPrecoderSet) else np.asarray(digital)


def validate_analog(F, mapping: SubarrayMapping, tol: float = 1e-9) -> AnalogReport:
    """Check block-diagonal support and unit modulus of an analog precoder.

    ``F`` may be an :class:`AnalogPrecoder` or a raw ``(Nt, N_RF)`` matrix.
    """
    F = _as_matrix(F)
    support = mapping.support()
    if F.shape != support.shape:
        return AnalogReport(support_violations=(("shape", F.shape),))
    outside = np.argwhere(~support & (F != 0))
    bad_mod = np.argwhere(support & (np.abs(np.abs(F) - 1.0) > tol))
    return AnalogReport(tuple(map(tuple, outside.tolist())), tuple(map(tuple, bad_mod.tolist())))


def average_power(analog, digital) -> float:
    """(1/Nc) sum_g ||F_RF F_BB,g||_F^2."""
    F = _as_matrix(analog)
    blocks = _as_blocks(digital)
    return float(np.mean(np.sum(np.abs(F @ blocks) ** 2, axis=(-2, -1))))


def normalize_power(digital, analog, pt: float) -> DigitalPrecoderSet:
    """Rescale all subcarriers by one scalar so the average power equals ``pt``."""
    blocks = _as_blocks(digital)
    power = average_power(analog, blocks)
    if not power > 0:
        raise DegenerateInputError("all-zero digital precoders cannot be power-normalized")
    return DigitalPrecoderSet(blocks * np.sqrt(pt / power))


def _check_noise(sigma2: float, allow_zero_noise: bool) -> None:
    if sigma2 < 0 or (sigma2 == 0 and not allow_zero_noise):
        raise ValueError(f"noise power must be > 0, got {sigma2!r}")


def sinr_matrix(channels, analog, digital, sigma2: float, *, allow_zero_noise: bool = False) -> np.ndarray:
    """SINR of every (subcarrier, user); shape ``(..., Nc, K)``.

    Broadcasts over leading batch axes of ``channels`` and ``digital``.
    """
    _check_noise(sigma2, allow_zero_noise)
    H = np.asarray(channels)
    F = _as_matrix(analog)
    blocks = _as_blocks(digital)
    G = (H @ F) @ blocks                       # (..., Nc, K, K): row u, stream k
    power = np.abs(G) ** 2
    signal = np.diagonal(power, axis1=-2, axis2=-1)
    interference = power.sum(axis=-1) - signal
    den = interference + sigma2
    return np.divide(signal, den, out=np.zeros_like(signal), where=den > 0)


def sinr(H_g, analog, digital_g, sigma2: float, u: int, *, allow_zero_noise: bool = False) -> float:
    """SINR of user ``u`` on a single subcarrier."""
    H_g = np.asarray(H_g)
    if not 0 <= u < H_g.shape[0]:
        raise IndexError(f"user index {u} outside 0..{H_g.shape[0] - 1}")
    g = sinr_matrix(H_g[None], analog, np.asarray(_as_blocks(digital_g))[None], sigma2,
                    allow_zero_noise=allow_zero_noise)
    return float(g[0, u])


def sum_se(channels, analog, digital, sigma2: float, *, allow_zero_noise: bool = False):
    """Average over subcarriers of sum_u log2(1 + SINR), in bits/s/Hz."""
    gamma = sinr_matrix(channels, analog, digital, sigma2, allow_zero_noise=allow_zero_noise)
    se = np.log2(1.0 + gamma).sum(axis=-1).mean(axis=-1)
    return float(se) if np.ndim(se) == 0 else se
