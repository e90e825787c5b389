"""Alternating critic / generator optimisation with KSGAN, GAN or WGAN-GP losses."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import losses
from . import metrics
from .autodiff import Var
from .nn import MlpSpec, ParamStore, adam_step, critic_spec, forward, generator_spec, init
from .targets import TARGETS, SampleSet, make_rng, sample_latent, sample_target, substreams

log = logging.getLogger(__name__)

METHODS = ("ksgan", "gan", "wgan_gp")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class NumericAbort(RuntimeError):
    def __init__(self, record: dict):
        super().__init__(f"non-finite {record['loss']} at generator step {record['generator_step']}")
        self.record = record


@dataclass
class TrainConfig:
    target: str
    method: str = "ksgan"
    n_train: int = 65536
    n_test: int = 8192
    k_phi: int | None = None  # None: 1 for ksgan, 5 for the baselines
    k_theta: int = 1
    batch_size: int = 512
    generator_updates_total: int = 128000
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    beta_score_penalty: float = 1.0
    gp_weight: float = 0.1
    mode: str = "mean"
    ste_clip: float | None = None
    gan_flip: bool = False
    gan_spectral_norm: bool = True
    seed: int = 0
    eval_every: int = 1000
    eval_points: int = 4096
    latent_dim: int = 8
    generator_hidden: list[int] = field(default_factory=lambda: [512, 512, 512])
    critic_hidden: list[int] = field(default_factory=lambda: [512, 512, 512])
    record_wall_clock: bool = False

    def __post_init__(self):
        if self.k_phi is None:
            self.k_phi = 1 if self.method == "ksgan" else 5
        self.generator_hidden = [int(h) for h in self.generator_hidden]
        self.critic_hidden = [int(h) for h in self.critic_hidden]
        self.validate()

    def validate(self):
        if self.target not in TARGETS:
            raise ConfigError("target", f"unknown target {self.target!r}; valid targets: {', '.join(TARGETS)}")
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {', '.join(METHODS)}")
        if self.mode not in losses.MODES:
            raise ConfigError("mode", f"must be one of {', '.join(losses.MODES)}")
        for name in ("k_phi", "k_theta", "n_train", "n_test", "eval_every", "eval_points", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2")
        if self.generator_updates_total < 0:
            raise ConfigError("generator_updates_total", "must be >= 0")
        for name in ("generator_hidden", "critic_hidden"):
            if any(h < 1 for h in getattr(self, name)):
                raise ConfigError(name, "all widths must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = {str(k).replace("-", "_"): v for k, v in d.items()}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown config key")
        if "target" not in d:
            raise ConfigError("target", f"missing; valid targets: {', '.join(TARGETS)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError("config", str(e)) from None

    @classmethod
    def from_json(cls, path) -> TrainConfig:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError("config", "top level must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def specs(self) -> tuple[MlpSpec, MlpSpec]:
        gen = generator_spec(self.latent_dim, self.generator_hidden, 2)
        crit = critic_spec(2, self.critic_hidden,
                           spectral_norm=self.method == "gan" and self.gan_spectral_norm)
        return gen, crit


@dataclass
class MetricsRecord:
    generator_step: int
    critic_loss: float
    generator_loss: float
    score_penalty: float | None
    gks_estimate: float
    mmd2: float | None = None
    mode_count: int | None = None
    wall_clock_ms: int | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


@dataclass
class TrainResult:
    generator: tuple[MlpSpec, ParamStore]
    critic: tuple[MlpSpec, ParamStore]
    metrics: list[MetricsRecord]
    checkpoints: list[Path]
    bandwidth: float | None = None
    final_mmd2: float | None = None
    final_mode_count: int | None = None
    critic_updates: int = 0
    batch_log: list = field(default_factory=list, repr=False)


def generate(spec: MlpSpec, store: ParamStore, z) -> np.ndarray:
    with ad.no_grad():
        return forward(store, spec, z).value


def checkpoint_entries(gen, crit) -> dict:
    out = ckpt.store_entries("generator", *gen)
    out.update(ckpt.store_entries("critic", *crit))
    return out


def sample_model(checkpoint, n: int, rng: np.random.Generator, latent: str = "normal") -> SampleSet:
    """Draw ``n`` points from the generator stored in ``checkpoint`` (path or entry dict)."""
    entries = ckpt.load(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    spec, store = ckpt.restore_store(entries, "generator")
    z = sample_latent(n, spec.in_dim, rng)
    return SampleSet(generate(spec, store, z.points), "model", z.rng_state)


def _digest(*arrays) -> str:
    import hashlib
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class _Trainer:
    def __init__(self, cfg: TrainConfig, out_dir: Path | None, track_batches: bool):
        self.cfg = cfg
        self.out_dir = out_dir
        self.track_batches = track_batches
        (data_rng, test_rng, gen_rng, crit_rng, self.batch_rng, self.eval_rng) = substreams(cfg.seed, 6)
        self.train_x = sample_target(cfg.target, cfg.n_train, data_rng).points
        self.test_x = sample_target(cfg.target, cfg.n_test, test_rng).points
        self.gen_spec, self.crit_spec = cfg.specs()
        self.gen = init(self.gen_spec, gen_rng)
        self.crit = init(self.crit_spec, crit_rng)
        self.batch_log: list = []
        self.critic_updates = 0

    # -- helpers -----------------------------------------------------------

    def draw(self):
        cfg = self.cfg
        idx = self.batch_rng.integers(0, cfg.n_train, size=cfg.batch_size)
        z = self.batch_rng.standard_normal((cfg.batch_size, cfg.latent_dim))
        return self.train_x[idx], z

    def critic_fn(self, params=None):
        return lambda x: forward(self.crit, self.crit_spec, x, params)

    def adam(self, store, names, grads):
        cfg = self.cfg
        adam_step(store, dict(zip(names, grads)), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

    def check(self, step, name, value):
        if not math.isfinite(value):
            raise NumericAbort({
                "generator_step": step, "loss": name, "value": repr(value),
                "generator_param_norm": self.gen.norm(), "critic_param_norm": self.crit.norm(),
            })

    # -- inner steps -------------------------------------------------------

    def critic_step(self, x, z):
        """One critic update; returns (critic loss, penalty or None)."""
        cfg = self.cfg
        x_g = generate(self.gen_spec, self.gen, z)
        phi = self.crit.as_vars()
        critic = self.critic_fn(phi)
        penalty = None
        if cfg.method == "ksgan":
            c_f, c_g, g_f, g_g = losses.critic_with_input_grads(critic, x, x_g)
            l_c = losses.critic_loss(c_f, c_g)
            r_c = losses.penalty_from_grads(g_f, g_g)
            # maximise L_c - beta R_c
            objective = ad.sub(ad.mul(r_c, cfg.beta_score_penalty), l_c)
            loss_value, penalty = l_c.item(), r_c.item()
        elif cfg.method == "wgan_gp":
            objective, _ = losses.wgan_gp_losses(critic, x, x_g, cfg.gp_weight, self.batch_rng)
            loss_value = objective.item()
        else:
            d = ad.reshape(critic(np.concatenate([x, x_g])), (2 * len(x),))
            objective, _ = losses.gan_losses(d[:len(x)], d[len(x):], cfg.gan_flip)
            loss_value = objective.item()
        grads = ad.grad(objective, list(phi.values()))
        self.adam(self.crit, phi.keys(), grads)
        self.critic_updates += 1
        return loss_value, penalty

    def generator_step(self, x, z):
        """One generator update; returns (generator loss, critic values on both batches)."""
        cfg = self.cfg
        theta = self.gen.as_vars()
        x_g = forward(self.gen, self.gen_spec, z, theta)
        critic = self.critic_fn()
        if cfg.method == "ksgan":
            with ad.no_grad():
                c_f = ad.reshape(critic(x), (len(x),))
            c_g = ad.reshape(critic(x_g), (len(x),))
            parts = losses.generator_loss(c_f, c_g, cfg.mode, ste_clip=cfg.ste_clip)
            objective = parts.total
        else:
            c_g = ad.reshape(critic(x_g), (len(x),))
            with ad.no_grad():
                c_f = ad.reshape(forward(self.crit, self.crit_spec, x), (len(x),))
            if cfg.method == "wgan_gp":
                objective = ad.neg(ad.mean(c_g))
            else:
                _, objective = losses.gan_losses(c_f, c_g, cfg.gan_flip)
        grads = ad.grad(objective, list(theta.values()))
        self.adam(self.gen, theta.keys(), grads)
        return objective.item(), c_f.value, c_g.value

    # -- evaluation --------------------------------------------------------

    def evaluate(self, n_model: int, test: np.ndarray, bandwidth: float):
        z = self.eval_rng.standard_normal((n_model, self.cfg.latent_dim))
        model = generate(self.gen_spec, self.gen, z)
        value = metrics.mmd2(test, model, bandwidth).mmd2
        modes = None
        if self.cfg.target == "8gaussians":
            modes, _ = metrics.mode_coverage_8gaussians(model, 0.01)
        return value, modes

    def write_checkpoint(self, name: str) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.out_dir / "checkpoints" / name
        path.parent.mkdir(parents=True, exist_ok=True)
        ckpt.save(path, checkpoint_entries((self.gen_spec, self.gen), (self.crit_spec, self.crit)))
        return path

    # -- main loop ---------------------------------------------------------

    def run(self) -> TrainResult:
        cfg = self.cfg
        total = cfg.generator_updates_total
        records: list[MetricsRecord] = []
        checkpoints: list[Path] = []
        if total == 0:
            if self.out_dir is not None:
                self.out_dir.mkdir(parents=True, exist_ok=True)
                (self.out_dir / "metrics.jsonl").write_text("")
                checkpoints.append(self.write_checkpoint("final.ksgn"))
            return TrainResult((self.gen_spec, self.gen), (self.crit_spec, self.crit), records, checkpoints)

        bandwidth = metrics.median_heuristic_bandwidth(self.test_x, seed=cfg.seed)
        eval_n = min(cfg.eval_points, cfg.n_test)
        eval_test = self.test_x[:eval_n]
        marks = {math.ceil(total * k / 10): k for k in range(1, 11)}
        metrics_file = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            metrics_file = open(self.out_dir / "metrics.jsonl", "w", newline="\n")

        t0 = time.perf_counter()
        step = 0
        final_mmd2 = final_modes = None
        try:
            while step < total:
                for _ in range(cfg.k_phi):
                    x, z = self.draw()
                    l_c, r_c = self.critic_step(x, z)
                    self.check(step, "critic_loss", l_c)
                if self.track_batches:
                    self.batch_log.append(("critic_last", step, _digest(x, z)))
                for j in range(cfg.k_theta):
                    if j > 0:
                        x, z = self.draw()
                    if self.track_batches and j == 0:
                        self.batch_log.append(("generator_first", step, _digest(x, z)))
                    l_g, c_f, c_g = self.generator_step(x, z)
                    self.check(step, "generator_loss", l_g)
                    step += 1
                    last = step == total
                    if step % cfg.eval_every == 0 or last:
                        if last:
                            mmd, modes = self.evaluate(cfg.n_test, self.test_x, bandwidth)
                            final_mmd2, final_modes = mmd, modes
                        else:
                            mmd, modes = self.evaluate(eval_n, eval_test, bandwidth)
                        rec = MetricsRecord(
                            generator_step=step, critic_loss=l_c, generator_loss=l_g,
                            score_penalty=r_c,
                            gks_estimate=losses.gks_from_values(c_f, c_g).value,
                            mmd2=mmd, mode_count=modes,
                            wall_clock_ms=int(1000 * (time.perf_counter() - t0)) if cfg.record_wall_clock else None,
                        )
                        records.append(rec)
                        log.info("step %d  L_c %.4f  L_g %.4f  mmd2 %.3g", step, l_c, l_g, mmd)
                        if metrics_file is not None:
                            metrics_file.write(rec.to_json() + "\n")
                            metrics_file.flush()
                    if step in marks:
                        p = self.write_checkpoint(f"step_{step:08d}.ksgn")
                        if p is not None:
                            checkpoints.append(p)
                    if last:
                        break
        finally:
            if metrics_file is not None:
                metrics_file.close()
        p = self.write_checkpoint("final.ksgn")
        if p is not None:
            checkpoints.append(p)
        return TrainResult((self.gen_spec, self.gen), (self.crit_spec, self.crit), records, checkpoints,
                           bandwidth, final_mmd2, final_modes, self.critic_updates, self.batch_log)


def _tune_allocator() -> None:
    """Keep freed activation buffers in the glibc heap instead of returning them to the OS.

    Training allocates and frees many half-megabyte arrays per step; above
    the default mmap threshold every one of them costs fresh page faults.
    A no-op on other C libraries.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 28)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 29)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_allocator_tuned = False


def train(cfg: TrainConfig, out_dir=None, track_batches: bool = False) -> TrainResult:
    """Run the training loop described by ``cfg``.

    With ``out_dir`` set, writes ``metrics.jsonl`` and checkpoints there.  On a
    non-finite loss an ``abort.json`` diagnostic is written and
    :class:`NumericAbort` raised.
    """
    _tune_allocator()
    out = Path(out_dir) if out_dir is not None else None
    trainer = _Trainer(cfg, out, track_batches)
    try:
        return trainer.run()
    except NumericAbort as e:
        if out is not None:
            (out / "abort.json").write_text(json.dumps(e.record, indent=2))
        raise
