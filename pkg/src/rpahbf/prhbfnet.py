"""PR-HBFNet: transformer pattern selection cascaded with residual hybrid beamforming.

Three encoders are used:

* the pattern network sees one token per antenna (real/imag of its EM-CSI
  entries on a strided subset of pilot subcarriers) and emits an
  ``(Nt, M)`` score matrix, discretized with a straight-through argmax;
* the analog branch sees one token per RF chain and adds a phase residual
  to the subarray-SVD anchor, so the constant-modulus block-diagonal
  structure holds by construction;
* the digital branch sees one token per subcarrier and adds a residual to
  the RZF anchor before the joint power rescaling.

All channel quantities inside the graph are divided by the per-sample RMS of
the EM-CSI tensor and the noise power by its square; SINRs are unchanged by
this rescaling, so the returned precoders apply to the raw channels.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .autodiff import Tensor, concat, inv, no_grad
from .baselines import GreedyConfig, analog_phases_batch, link_budget
from .channel import ConfigError, EmCsiTensor, SystemConfig, subcarrier_frequencies
from .nn import (Adam, Linear, Module, TransformerEncoder, TransformerEncoderConfig,
                 WarmupSchedule, load_checkpoint, save_checkpoint, ste_argmax)
from .precoding import (AnalogPrecoder, BeamformingSolution, DigitalPrecoderSet,
                        SubarrayMapping, sum_se)

__all__ = [
    "PrHbfNetConfig",
    "PrHbfNet",
    "ForwardResult",
    "TrainHistory",
    "TrainResult",
    "EvalResult",
    "SOLVERS",
    "pilot_indices",
    "loss",
    "train",
    "evaluate",
    "save_model",
    "load_model",
]

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class PrHbfNetConfig:
    prn: TransformerEncoderConfig = TransformerEncoderConfig()
    analog: TransformerEncoderConfig = TransformerEncoderConfig()
    digital: TransformerEncoderConfig = TransformerEncoderConfig()
    pilot_subcarriers: int = 8
    # softmax temperature of the straight-through backward pass
    temperature: float = 10.0
    batch_size: int = 64
    epochs: int = 30
    peak_lr: float = 1e-3
    warmup_steps: int = 100
    seed: int = 0
    training_mode: str = "joint"
    phase_reference: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.pilot_subcarriers < 1:
            raise ConfigError("pilot_subcarriers must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.training_mode not in ("joint", "stagewise"):
            raise ConfigError(f"unknown training_mode {self.training_mode!r}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")

    def replace(self, **changes) -> "PrHbfNetConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "PrHbfNetConfig":
        values = dict(values)
        for key in ("prn", "analog", "digital"):
            if isinstance(values.get(key), dict):
                values[key] = TransformerEncoderConfig(**values[key])
        return cls(**values)


def pilot_indices(num_subcarriers: int, num_pilots: int) -> np.ndarray:
    """Evenly strided subset of ``min(Nc, num_pilots)`` subcarriers."""
    n = min(num_subcarriers, num_pilots)
    if num_subcarriers % n:
        raise ConfigError(f"{n} pilot subcarriers do not evenly stride Nc={num_subcarriers}")
    return np.arange(0, num_subcarriers, num_subcarriers // n)


class _Complex:
    """Complex tensor carried as a (real, imag) pair of graph tensors."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        self.re, self.im = re, im

    def __matmul__(self, other: "_Complex") -> "_Complex":
        return _Complex(self.re @ other.re - self.im @ other.im,
                        self.re @ other.im + self.im @ other.re)

    def herm(self) -> "_Complex":
        return _Complex(self.re.swapaxes(-1, -2), -self.im.swapaxes(-1, -2))

    def abs2(self) -> Tensor:
        return self.re * self.re + self.im * self.im

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


@dataclass
class ForwardResult:
    logits: Tensor              # (B, Nt, M)
    one_hot: Tensor             # (B, Nt, M)
    c: np.ndarray               # (B, Nt), 1-based
    phases: Tensor              # (B, Nt)
    digital: _Complex           # (B, Nc, N_RF, K), power-normalized
    se: Tensor                  # (B,)
    scale: np.ndarray           # (B,) channel normalization


class PrHbfNet(Module):
    def __init__(self, system: SystemConfig, config: PrHbfNetConfig | None = None,
                 seed: int | None = None, zero_residual: bool = True):
        self.system = system
        self.config = config = config or PrHbfNetConfig()
        rng = np.random.default_rng(config.seed if seed is None else seed)
        s = system
        self.pilots = pilot_indices(s.num_subcarriers, config.pilot_subcarriers)
        npil = len(self.pilots)
        self.mapping = SubarrayMapping(s.num_antennas, s.num_rf_chains)
        ns = self.mapping.subarray_size

        d1, d2, d3 = config.prn.d_model, config.analog.d_model, config.digital.d_model
        self.prn_embed = Linear(2 * s.num_users * s.num_patterns * npil, d1, rng)
        self.prn_pos = Tensor(0.02 * rng.standard_normal((s.num_antennas, d1)), requires_grad=True)
        self.prn_encoder = TransformerEncoder(config.prn, rng)
        self.prn_head = Linear(d1, s.num_patterns, rng)

        self.analog_embed = Linear(2 * npil * s.num_users * ns, d2, rng)
        self.analog_pos = Tensor(0.02 * rng.standard_normal((s.num_rf_chains, d2)), requires_grad=True)
        self.analog_encoder = TransformerEncoder(config.analog, rng)
        self.analog_head = Linear(d2, ns, rng, zero=zero_residual)

        self.digital_embed = Linear(2 * s.num_users * s.num_rf_chains, d3, rng)
        self.digital_pos = Tensor(0.02 * rng.standard_normal((s.num_subcarriers, d3)), requires_grad=True)
        self.digital_encoder = TransformerEncoder(config.digital, rng)
        self.digital_head = Linear(d3, 2 * s.num_rf_chains * s.num_users, rng, zero=zero_residual)

    # -- parameter groups -------------------------------------------------
    def group(self, name: str) -> dict[str, Tensor]:
        prefix = {"prn": "prn_", "analog": "analog_", "digital": "digital_"}[name]
        return {k: v for k, v in self.parameters().items() if k.startswith(prefix)}

    # -- forward ----------------------------------------------------------
    def _check(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data)
        if data.ndim == 4:
            data = data[None]
        s = self.system
        expected = (s.num_subcarriers, s.num_users, s.num_antennas, s.num_patterns)
        if data.shape[1:] != expected:
            raise ConfigError(f"EM-CSI batch shape {data.shape[1:]} does not match config {expected}")
        return data

    def pattern_logits(self, hn: np.ndarray) -> Tensor:
        B, Nc, K, Nt, M = hn.shape
        x = hn[:, self.pilots]
        if self.config.phase_reference:
            # rotate each antenna's M candidate entries by their common phase
            ref = x.sum(axis=-1, keepdims=True)
            x = x * np.conj(ref) / np.maximum(np.abs(ref), 1e-300)
        x = x.transpose(0, 3, 1, 2, 4).reshape(B, Nt, -1)
        feat = Tensor(np.concatenate([x.real, x.imag], axis=-1))
        tokens = self.prn_embed(feat) + self.prn_pos
        return self.prn_head(self.prn_encoder(tokens))

    def forward(self, data, sigma2: float, pt: float, force_pattern=None,
                hard_gather: bool = False) -> ForwardResult:
        """Run the cascade on a batch ``(B, Nc, K, Nt, M)`` of EM-CSI tensors.

        ``hard_gather`` selects channels by integer indexing instead of the
        one-hot product; the forward values are identical, but no gradient
        reaches the pattern network.
        """
        data = self._check(data)
        B, Nc, K, Nt, M = data.shape
        ns, n_rf = self.mapping.subarray_size, self.mapping.num_rf_chains
        scale = np.sqrt(np.mean(np.abs(data) ** 2, axis=(1, 2, 3, 4)))
        scale = np.where(scale > 0, scale, 1.0)
        hn = data / scale[:, None, None, None, None]
        noise = (sigma2 / scale ** 2)[:, None, None]                       # (B, 1, 1)

        logits = self.pattern_logits(hn)
        if force_pattern is not None:
            c = np.broadcast_to(np.asarray(force_pattern, dtype=np.int64), (B, Nt)).copy()
            one_hot = Tensor(np.eye(M)[c - 1])
        else:
            one_hot = ste_argmax(logits, self.config.temperature)
            c = np.argmax(one_hot.data, axis=-1) + 1

        # channels H_g(c), rows h^H: conjugate of the selected tensor entries
        if hard_gather:
            sel = np.take_along_axis(hn, (c - 1)[:, None, None, :, None], axis=-1)[..., 0]
            H = _Complex(Tensor(sel.real), Tensor(-sel.imag))
        else:
            oh = one_hot.reshape(B, 1, 1, Nt, M)
            H = _Complex((Tensor(hn.real) * oh).sum(axis=-1), -(Tensor(hn.imag) * oh).sum(axis=-1))

        # analog branch: SVD anchor + learned phase residual
        base, _ = analog_phases_batch(H.numpy(), self.mapping)
        hp = _Complex(H.re[:, self.pilots], H.im[:, self.pilots])
        sub = [t.reshape(B, len(self.pilots), K, n_rf, ns).transpose(0, 3, 1, 2, 4)
               .reshape(B, n_rf, -1) for t in (hp.re, hp.im)]
        tokens = self.analog_embed(concat(sub, axis=-1)) + self.analog_pos
        delta = self.analog_head(self.analog_encoder(tokens)).reshape(B, Nt)
        phases = delta + Tensor(base)

        w = _Complex(phases.cos().reshape(B, 1, 1, n_rf, ns), phases.sin().reshape(B, 1, 1, n_rf, ns))
        Hr = H.re.reshape(B, Nc, K, n_rf, ns)
        Hi = H.im.reshape(B, Nc, K, n_rf, ns)
        E = _Complex((Hr * w.re - Hi * w.im).sum(axis=-1), (Hr * w.im + Hi * w.re).sum(axis=-1))

        # digital branch: RZF anchor + learned residual, then joint power rescaling
        F0 = _rzf(E, K * noise[..., None] / pt)
        tokens = self.digital_embed(concat([E.re.reshape(B, Nc, -1), E.im.reshape(B, Nc, -1)],
                                           axis=-1)) + self.digital_pos
        resid = self.digital_head(self.digital_encoder(tokens))
        half = n_rf * K
        F = _Complex(F0.re + resid[..., :half].reshape(B, Nc, n_rf, K),
                     F0.im + resid[..., half:].reshape(B, Nc, n_rf, K))
        power = F.abs2().sum(axis=(-2, -1)).mean(axis=-1) * float(ns)       # (B,)
        gain = (Tensor(np.full(B, pt)) / power).sqrt().reshape(B, 1, 1, 1)
        F = _Complex(F.re * gain, F.im * gain)

        G = (E @ F).abs2()                                                  # (B, Nc, K, K)
        signal = (G * Tensor(np.eye(K))).sum(axis=-1)
        interference = G.sum(axis=-1) - signal
        gamma = signal / (interference + Tensor(noise))
        se = (gamma + 1.0).log().sum(axis=-1).mean(axis=-1) * (1.0 / _LN2)
        return ForwardResult(logits, one_hot, c, phases, F, se, scale)

    __call__ = forward

    def solve(self, data, sigma2: float, pt: float, force_pattern=None) -> list[BeamformingSolution]:
        """Inference on a batch; returns feasible solutions scored on the raw channels."""
        data = self._check(data)
        with no_grad():
            out = self.forward(data, sigma2, pt, force_pattern=force_pattern, hard_gather=True)
        blocks = out.digital.numpy()
        B, Nt = out.c.shape
        H = np.conj(np.take_along_axis(data, (out.c - 1)[:, None, None, :, None], axis=-1)[..., 0])
        F = np.zeros((B, Nt, self.mapping.num_rf_chains), dtype=complex)
        F[:, np.arange(Nt), self.mapping.rf_of_antenna] = np.exp(1j * out.phases.data)
        se = np.atleast_1d(sum_se(H, F[:, None], blocks, sigma2))
        return [BeamformingSolution(out.c[b].copy(), AnalogPrecoder(out.phases.data[b], self.mapping),
                                    DigitalPrecoderSet(blocks[b]), float(se[b]))
                for b in range(B)]


def _rzf(E: _Complex, reg: np.ndarray) -> _Complex:
    """Differentiable RZF ``E^H (E E^H + reg I)^-1`` with unit-norm columns.

    The complex inverse uses the real embedding [[A, -B], [B, A]].
    """
    K = E.re.shape[-2]
    EH = E.herm()
    A = E @ EH
    eye = Tensor(reg * np.eye(K))
    Ar, Ai = A.re + eye, A.im
    top = concat([Ar, -Ai], axis=-1)
    bottom = concat([Ai, Ar], axis=-1)
    R = inv(concat([top, bottom], axis=-2))
    Ainv = _Complex(R[..., :K, :K], R[..., K:, :K])
    F = EH @ Ainv
    norm2 = F.abs2().sum(axis=-2, keepdims=True)
    norm = (norm2 + Tensor((norm2.data == 0).astype(float))).sqrt()
    return _Complex(F.re / norm, F.im / norm)


def loss(model: PrHbfNet, data, sigma2: float, pt: float, **kwargs) -> Tensor:
    """Negative mean (over the batch) sum spectral efficiency."""
    data = np.asarray(data)
    if data.ndim == 5 and data.shape[0] == 0:
        raise ValueError("empty batch")
    return -model.forward(data, sigma2, pt, **kwargs).se.mean()


# -- training -----------------------------------------------------------------

@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)          # dicts: step, lr, loss, mean_se
    val_se: list = field(default_factory=list)         # one entry per epoch
    initial_val_se: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "lr", "loss", "mean_se"])
        for row in self.steps:
            writer.writerow([row["step"], f"{row['lr']:.12f}", f"{row['loss']:.10f}",
                             f"{row['mean_se']:.10f}"])
        return buf.getvalue()

    def epoch_means(self, steps_per_epoch: int) -> list[float]:
        losses = [r["loss"] for r in self.steps]
        return [float(np.mean(losses[i:i + steps_per_epoch]))
                for i in range(0, len(losses), steps_per_epoch)]


@dataclass
class TrainResult:
    model: PrHbfNet
    best_state: dict
    last_state: dict
    history: TrainHistory
    best_val_se: float | None = None


def _val_se(model: PrHbfNet, data: np.ndarray, sigma2: float, pt: float, batch: int = 256) -> float:
    vals = []
    with no_grad():
        for i in range(0, len(data), batch):
            vals.append(model.forward(data[i:i + batch], sigma2, pt, hard_gather=True).se.data)
    return float(np.mean(np.concatenate(vals)))


def train(train_data, val_data, system: SystemConfig, config: PrHbfNetConfig | None = None,
          out_dir=None, pt: float | None = None, log=None) -> TrainResult:
    """Unsupervised end-to-end training on the negative sum-SE loss.

    ``train_data`` / ``val_data`` are ``(N, Nc, K, Nt, M)`` arrays (or
    datasets exposing ``.data``).  With ``out_dir`` the best-validation and
    last checkpoints plus ``history.csv`` are written there.
    """
    config = config or PrHbfNetConfig()
    train_data = np.asarray(getattr(train_data, "data", train_data))
    val_data = None if val_data is None else np.asarray(getattr(val_data, "data", val_data))
    sigma2, pt = link_budget(system, pt)
    model = PrHbfNet(system, config)
    history = TrainHistory()
    best_state = last_state = model.state_dict()
    best_val = None

    if config.epochs > 0 and val_data is not None and len(val_data):
        history.initial_val_se = best_val = _val_se(model, val_data, sigma2, pt)

    groups = {"prn": model.group("prn"), "hbn": {**model.group("analog"), **model.group("digital")}}
    schedule = WarmupSchedule(config.peak_lr, config.warmup_steps)
    opt = Adam(model.parameters(), schedule)
    rng = np.random.default_rng(config.seed)
    n = len(train_data)
    step = 0
    for epoch in range(config.epochs):
        if config.training_mode == "stagewise":
            active = groups["prn"] if epoch < config.epochs // 2 else groups["hbn"]
        else:
            active = opt.params
        order = rng.permutation(n)
        for i in range(0, n, config.batch_size):
            batch = train_data[order[i:i + config.batch_size]]
            opt.zero_grad()
            out = model.forward(batch, sigma2, pt)
            value = -out.se.mean()
            value.backward()
            if active is not opt.params:
                for k, p in opt.params.items():
                    if k not in active:
                        p.grad = None
            lr = opt.step()
            step += 1
            history.steps.append(dict(step=step, lr=lr, loss=value.item(),
                                      mean_se=float(out.se.data.mean())))
        if val_data is not None and len(val_data):
            v = _val_se(model, val_data, sigma2, pt)
            history.val_se.append(v)
            if best_val is None or v > best_val:
                best_val, best_state = v, model.state_dict()
        else:
            best_state = model.state_dict()
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss={history.steps[-1]['loss']:.4f} "
                f"val_se={history.val_se[-1] if history.val_se else float('nan'):.4f}")
    last_state = model.state_dict()
    model.load_state_dict(best_state)
    result = TrainResult(model, best_state, last_state, history, best_val)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"system": system.to_dict(), "network": config.to_dict()}
        save_checkpoint(out_dir / "best.rpac", best_state, meta)
        save_checkpoint(out_dir / "last.rpac", last_state, meta)
        (out_dir / "history.csv").write_text(history.to_csv())
    return result


def save_model(path, model: PrHbfNet) -> Path:
    meta = {"system": model.system.to_dict(), "network": model.config.to_dict()}
    return save_checkpoint(path, model.state_dict(), meta)


def load_model(path, system: SystemConfig | None = None) -> PrHbfNet:
    params, meta = load_checkpoint(path)
    stored = SystemConfig.from_dict(meta["system"])
    if system is not None:
        keys = ("num_antennas", "num_rf_chains", "num_users", "num_subcarriers", "num_patterns")
        bad = [k for k in keys if getattr(system, k) != getattr(stored, k)]
        if bad:
            raise ConfigError(f"checkpoint/config mismatch on {', '.join(bad)}")
    model = PrHbfNet(system or stored, PrHbfNetConfig.from_dict(meta["network"]))
    model.load_state_dict(params)
    return model


# -- evaluation ---------------------------------------------------------------

SOLVERS = ("prhbfnet", "greedy", "exhaustive", "random", "fixed")


@dataclass
class EvalResult:
    solver: str
    per_sample: np.ndarray
    patterns: np.ndarray
    seconds: float = 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_sample)) if len(self.per_sample) else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.per_sample)) if len(self.per_sample) else float("nan")

    @property
    def n(self) -> int:
        return len(self.per_sample)


def _classical(args):
    solver, data, freqs, system, pt, mode, seed, gcfg, cap, index = args
    e = EmCsiTensor(data, freqs)
    if solver == "greedy":
        sol = baselines.greedy_pattern_select(e, gcfg, system, pt=pt)
    elif solver == "exhaustive":
        sol = baselines.exhaustive_pattern_select(e, system, cap, pt=pt)
    elif solver == "random":
        sol = baselines.random_pattern(e, system, [seed, index], pt=pt)
    else:
        sol = baselines.fixed_pattern(e, system, mode, pt=pt)
    return sol.achieved_se, sol.c


def evaluate(data, solver: str, system: SystemConfig, model: PrHbfNet | None = None, *,
             pt: float | None = None, mode: int = 1, seed: int = 0,
             greedy: GreedyConfig | None = None, cap: int = 4096,
             workers: int | None = None, batch: int = 256) -> EvalResult:
    """Per-sample sum SE of one solver over a batch of EM-CSI tensors."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    data = np.asarray(getattr(data, "data", data))
    if data.ndim == 4:
        data = data[None]
    expected = (system.num_subcarriers, system.num_users, system.num_antennas, system.num_patterns)
    if data.shape[1:] != expected:
        raise ConfigError(f"data shape {data.shape[1:]} does not match config {expected}")
    sigma2, pt_w = link_budget(system, pt)
    t0 = time.perf_counter()
    if solver == "prhbfnet":
        if model is None:
            raise ConfigError("solver 'prhbfnet' needs a model or checkpoint")
        ses, pats = [], []
        for i in range(0, len(data), batch):
            for sol in model.solve(data[i:i + batch], sigma2, pt_w):
                ses.append(sol.achieved_se)
                pats.append(sol.c)
    else:
        freqs = subcarrier_frequencies(system.num_subcarriers, system.bandwidth_hz)
        jobs = [(solver, data[i], freqs, system, pt_w, mode, seed, greedy, cap, i)
                for i in range(len(data))]
        workers = int(os.environ.get("RPAHBF_WORKERS", "1")) if workers is None else workers
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_classical, jobs, chunksize=8))
        else:
            results = [_classical(j) for j in jobs]
        ses = [r[0] for r in results]
        pats = [r[1] for r in results]
    seconds = time.perf_counter() - t0
    patterns = np.array(pats, dtype=np.int64).reshape(len(data), system.num_antennas)
    return EvalResult(solver, np.array(ses, dtype=float), patterns, seconds)
