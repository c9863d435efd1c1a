"""Model-driven precoder anchors and classical pattern-selection solvers.

The batched helpers (``*_batch``) broadcast over any leading axes so that
greedy and exhaustive search can score many pattern candidates in one
vectorized call.
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import EmCsiTensor, SystemConfig, apply_pattern
from .precoding import (AnalogPrecoder, BeamformingSolution, DegenerateInputError,
                        DigitalPrecoderSet, SubarrayMapping, noise_power, sum_se)

__all__ = [
    "DegenerateChannelWarning",
    "SearchSpaceError",
    "GreedyConfig",
    "link_budget",
    "analog_phases_batch",
    "rzf_batch",
    "hbf_solve_batch",
    "svd_analog_init",
    "svd_digital_init",
    "hbf_solve",
    "greedy_pattern_select",
    "exhaustive_pattern_select",
    "random_pattern",
    "fixed_pattern",
]


class DegenerateChannelWarning(RuntimeWarning):
    pass


class SearchSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class GreedyConfig:
    max_sweeps: int = 2
    improvement_tol: float = 1e-6

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not self.improvement_tol > 0:
            raise ValueError("improvement_tol must be positive")


def link_budget(cfg: SystemConfig, pt: float | None = None) -> tuple[float, float]:
    """(noise power per subcarrier, transmit power) in watts."""
    sigma2 = noise_power(cfg.noise_density_dbm_per_hz, cfg.bandwidth_hz, cfg.num_subcarriers)
    return sigma2, cfg.transmit_power_w if pt is None else float(pt)


def _mapping(cfg: SystemConfig) -> SubarrayMapping:
    return SubarrayMapping(cfg.num_antennas, cfg.num_rf_chains)


# relative Gram trace below which a subarray is treated as having no channel
_DEGENERATE_RTOL = 1e-24


def analog_phases_batch(channels: np.ndarray, mapping: SubarrayMapping):
    """Subarray-wise dominant-eigenvector phases.

    Returns ``(phases (..., Nt), degenerate (..., N_RF))``.  Each subarray's
    eigenvector is rotated so that its first element has zero phase.
    """
    H = np.asarray(channels)
    lead = H.shape[:-3]
    n_rf, ns = mapping.num_rf_chains, mapping.subarray_size
    Hs = H.reshape(H.shape[:-1] + (n_rf, ns))
    gram = np.einsum("...gkri,...gkrj->...rij", Hs.conj(), Hs)
    _, vecs = np.linalg.eigh(gram)
    v = vecs[..., -1]                                           # (..., N_RF, Ns)
    ref = v[..., :1]
    v = v * np.conj(ref) / np.maximum(np.abs(ref), 1e-300)
    phases = np.angle(v)

    trace = np.real(np.trace(gram, axis1=-2, axis2=-1))
    scale = trace.max(axis=-1, keepdims=True)
    degenerate = trace <= _DEGENERATE_RTOL * scale
    degenerate |= scale <= 0
    phases = np.where(degenerate[..., None], 0.0, phases)
    return phases.reshape(lead + (n_rf * ns,)), degenerate


def rzf_batch(effective: np.ndarray, sigma2: float, pt: float) -> np.ndarray:
    """Regularized zero-forcing with unit-norm columns; ``(..., Nc, N_RF, K)``."""
    E = np.asarray(effective)
    K = E.shape[-2]
    A = E @ np.conj(np.swapaxes(E, -1, -2)) + (K * sigma2 / pt) * np.eye(K)
    F = np.conj(np.swapaxes(np.linalg.solve(A, E), -1, -2))
    norms = np.linalg.norm(F, axis=-2, keepdims=True)
    return np.divide(F, norms, out=np.zeros_like(F), where=norms > 0)


def hbf_solve_batch(channels: np.ndarray, mapping: SubarrayMapping, sigma2: float, pt: float,
                    phases: np.ndarray | None = None):
    """Anchor-only hybrid precoding for a batch of channel sets.

    Returns ``(phases (..., Nt), blocks (..., Nc, N_RF, K), se (...))`` with
    the digital blocks jointly normalized to average power ``pt``.
    """
    H = np.asarray(channels)
    n_rf, ns = mapping.num_rf_chains, mapping.subarray_size
    if phases is None:
        phases, _ = analog_phases_batch(H, mapping)
    w = np.exp(1j * phases).reshape(phases.shape[:-1] + (n_rf, ns))
    E = np.einsum("...gkri,...ri->...gkr", H.reshape(H.shape[:-1] + (n_rf, ns)), w)
    F = rzf_batch(E, sigma2, pt)
    # ||F_RF F||_F^2 = Ns ||F||_F^2 for unit-modulus block-diagonal F_RF
    power = ns * np.mean(np.sum(np.abs(F) ** 2, axis=(-2, -1)), axis=-1)
    if np.any(~(power > 0)):
        raise DegenerateInputError("all-zero digital precoders cannot be power-normalized")
    F = F * np.sqrt(pt / power)[..., None, None, None]
    G = np.abs(E @ F) ** 2
    signal = np.diagonal(G, axis1=-2, axis2=-1)
    gamma = signal / (G.sum(axis=-1) - signal + sigma2)
    se = np.log2(1.0 + gamma).sum(axis=-1).mean(axis=-1)
    return phases, F, se


def svd_analog_init(channels, mapping: SubarrayMapping) -> AnalogPrecoder:
    """Phase-only projection of each subarray's dominant right singular vector."""
    H = np.asarray(channels)
    if H.ndim != 3 or H.shape[0] == 0:
        raise ValueError("channels must be a non-empty (Nc, K, Nt) array")
    phases, degenerate = analog_phases_batch(H, mapping)
    if np.any(degenerate):
        warnings.warn(f"zero channel on RF chain(s) {np.flatnonzero(degenerate).tolist()}; "
                      "phases set to 0", DegenerateChannelWarning, stacklevel=2)
    return AnalogPrecoder(phases, mapping)


def svd_digital_init(effective, sigma2: float, pt: float) -> DigitalPrecoderSet:
    """Per-subcarrier RZF on the effective channels (not power-normalized)."""
    E = np.asarray(effective)
    if E.shape[-2] > E.shape[-1]:
        raise ValueError(f"K={E.shape[-2]} exceeds N_RF={E.shape[-1]}")
    if not sigma2 > 0 or not pt > 0:
        raise ValueError("sigma2 and pt must be > 0")
    return DigitalPrecoderSet(rzf_batch(E, sigma2, pt))


def _solution(H: np.ndarray, c: np.ndarray, phases, blocks, mapping, sigma2, trace=()):
    analog = AnalogPrecoder(phases, mapping)
    digital = DigitalPrecoderSet(blocks)
    se = sum_se(H, analog, digital, sigma2)
    return BeamformingSolution(np.asarray(c, dtype=np.int64), analog, digital, se, tuple(trace))


def hbf_solve(channels, cfg: SystemConfig, c=None, *, pt: float | None = None) -> BeamformingSolution:
    """SVD analog anchor, RZF digital anchor, joint power normalization.

    ``c`` is only recorded in the returned solution; the channels must
    already reflect it.
    """
    H = np.asarray(channels)
    sigma2, pt = link_budget(cfg, pt)
    mapping = _mapping(cfg)
    analog = svd_analog_init(H, mapping)
    phases, blocks, _ = hbf_solve_batch(H, mapping, sigma2, pt, phases=analog.phases)
    if c is None:
        c = np.ones(H.shape[-1], dtype=np.int64)
    return _solution(H, c, phases, blocks, mapping, sigma2)


def _gather(emcsi: EmCsiTensor, patterns: np.ndarray) -> np.ndarray:
    """Channels for a stack of pattern vectors; ``(C, Nc, K, Nt)``."""
    Nt = emcsi.shape[2]
    H = emcsi.data[:, :, np.arange(Nt)[None, :], patterns - 1]   # (Nc, K, C, Nt)
    return np.conj(np.moveaxis(H, 2, 0))


def _score(emcsi, patterns, cfg, pt):
    sigma2, pt = link_budget(cfg, pt)
    return hbf_solve_batch(_gather(emcsi, patterns), _mapping(cfg), sigma2, pt)[2]


def fixed_pattern(emcsi: EmCsiTensor, cfg: SystemConfig, mode: int = 1, *,
                  pt: float | None = None) -> BeamformingSolution:
    c = np.full(emcsi.shape[2], mode, dtype=np.int64)
    return hbf_solve(apply_pattern(emcsi, c), cfg, c, pt=pt)


def random_pattern(emcsi: EmCsiTensor, cfg: SystemConfig, seed: int = 0, *,
                   pt: float | None = None) -> BeamformingSolution:
    rng = np.random.default_rng(seed)
    c = rng.integers(1, emcsi.shape[3] + 1, size=emcsi.shape[2])
    return hbf_solve(apply_pattern(emcsi, c), cfg, c, pt=pt)


def greedy_pattern_select(emcsi: EmCsiTensor, gcfg: GreedyConfig | None, cfg: SystemConfig, *,
                          pt: float | None = None) -> BeamformingSolution:
    """Coordinate-wise pattern search starting from the all-mode-1 pattern.

    ``trace`` of the result holds the SE after the initial point and after
    every antenna update; it is non-decreasing.
    """
    gcfg = GreedyConfig() if gcfg is None else gcfg
    Nc, K, Nt, M = emcsi.shape
    c = np.ones(Nt, dtype=np.int64)
    best = float(_score(emcsi, c[None], cfg, pt)[0])
    trace = [best]
    modes = np.arange(1, M + 1)
    for _ in range(gcfg.max_sweeps):
        start = best
        for m in range(Nt):
            candidates = np.repeat(c[None], M, axis=0)
            candidates[:, m] = modes
            se = _score(emcsi, candidates, cfg, pt)
            pick = int(np.argmax(se))           # first maximum -> lowest mode
            if se[pick] >= best:
                c = candidates[pick]
                best = float(se[pick])
            trace.append(best)
        if best - start < gcfg.improvement_tol:
            break
    return dataclasses.replace(hbf_solve(apply_pattern(emcsi, c), cfg, c, pt=pt),
                               trace=tuple(trace))


def exhaustive_pattern_select(emcsi: EmCsiTensor, cfg: SystemConfig, cap: int = 4096, *,
                              pt: float | None = None, chunk: int = 512) -> BeamformingSolution:
    """Brute-force search over all M**Nt pattern vectors.

    Ties go to the lexicographically smallest pattern vector.
    """
    Nc, K, Nt, M = emcsi.shape
    size = M ** Nt
    if size > cap:
        raise SearchSpaceError(f"search space M**Nt = {M}**{Nt} = {size} exceeds cap {cap}")
    best_se, best_c = -np.inf, None
    it = itertools.product(range(1, M + 1), repeat=Nt)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        se = _score(emcsi, block, cfg, pt)
        i = int(np.argmax(se))
        if se[i] > best_se:
            best_se, best_c = float(se[i]), block[i]
    return hbf_solve(apply_pattern(emcsi, best_c), cfg, best_c, pt=pt)
