"""GAN, associative GAN (RBM memory) and quantum-associative GAN training.

The discriminator is a dense net whose ``feature_tap`` layer is a sigmoid
feature layer followed by a single dense + sigmoid head.  In the associative
modes a Boltzmann machine learns the distribution of those features on real
data, and its samples replace the generator's noise input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from . import nn
from .data import all_configs, bits_to_spins
from .metrics import bernoulli_product_table, kl_divergence
from .pimc import MomentEstimate, TrotterConfig, population_anneal, sample_visible
from .qbm import QbmParams, QbmTrainConfig, QbmTrainer, exact_thermal
from .rbm import AnnealSchedule, RbmParams, RbmTrainConfig, RbmTrainer, exact_marginal, sample_annealed

MODES = ("dcgan", "aan", "qaan")
_MODE_ALIASES = {"dcgan-dense": "dcgan", "gan": "dcgan"}
FEATURE_EPS = 1e-9


def normalize_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode.lower(), mode.lower())
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    return mode


@dataclass
class GanConfig:
    mode: str = "dcgan"
    latent_dim: int = 32
    bm_hidden: int = 8
    batch_size: int = 64
    epochs: int = 30
    lr_gan: float = 2e-4
    lr_bm: float = 1e-3
    gibbs_k: int = 5
    beta1: float = 0.5
    beta2_gan: float = 0.999
    beta2_bm: float = 0.9
    fake_label_low: float = 0.0
    fake_label_high: float = 0.1
    real_label_low: float = 0.9
    real_label_high: float = 1.0
    gamma: float = 2.0
    anneal_rungs: int = 50
    generator_hidden: int = 128
    discriminator_hidden: int = 128
    leaky_slope: float = nn.LEAKY_SLOPE
    non_saturating: bool = False
    sampler: TrotterConfig = field(default_factory=TrotterConfig)

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if not (0.0 <= self.fake_label_low <= self.fake_label_high < self.real_label_low
                <= self.real_label_high <= 1.0):
            raise ValueError("label smoothing ranges must satisfy 0 <= fake < real <= 1")


def gan_losses(d_real, d_fake) -> tuple[float, float]:
    """(J_D, J_G) with J_G = <log D(x)>_data + <log(1 - D(G(z)))>_noise and J_D = -J_G."""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    for d in (d_real, d_fake):
        if np.any(d <= 0.0) or np.any(d >= 1.0):
            raise ValueError("discriminator probabilities must lie strictly inside (0, 1)")
    j_g = float(np.mean(np.log(d_real)) + np.mean(np.log1p(-d_fake)))
    return -j_g, j_g


def gan_losses_from_logits(real_logits, fake_logits) -> tuple[float, float]:
    j_g = float(np.mean(nn.log_sigmoid(real_logits)) + np.mean(nn.log_one_minus_sigmoid(fake_logits)))
    return -j_g, j_g


def smoothed_cross_entropy(logits, targets) -> float:
    """Mean binary cross-entropy of sigmoid(logits) against soft targets."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    return float(-np.mean(targets * nn.log_sigmoid(logits) + (1.0 - targets) * nn.log_one_minus_sigmoid(logits)))


def build_generator(config: GanConfig, data_dim: int, rng: np.random.Generator) -> nn.DenseNet:
    return nn.DenseNet.build([config.latent_dim, config.generator_hidden, data_dim],
                             ["leaky_relu", "tanh"], rng, slope=config.leaky_slope)


def build_discriminator(config: GanConfig, data_dim: int, rng: np.random.Generator) -> nn.DenseNet:
    return nn.DenseNet.build([data_dim, config.discriminator_hidden, config.latent_dim, 1],
                             ["leaky_relu", "sigmoid", "sigmoid"], rng, feature_tap=1, slope=config.leaky_slope)


Memory = Union[RbmParams, QbmParams, None]


@dataclass
class TrainerState:
    config: GanConfig
    generator: nn.DenseNet
    discriminator: nn.DenseNet
    opt_g: nn.Adam
    opt_d: nn.Adam
    memory_trainer: Union[RbmTrainer, QbmTrainer, None] = None
    epoch: int = 0
    steps: int = 0
    metric_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.config.mode != "dcgan":
            if self.memory_trainer is None:
                raise ValueError(f"mode {self.config.mode!r} needs an associative memory")
            if self.memory.n_visible != self.discriminator.layers[self.discriminator.feature_tap].shape[1]:
                raise ValueError("feature layer width must equal the memory's visible units")
            if self.memory.n_visible != self.config.latent_dim:
                raise ValueError("latent dimension must equal the memory's visible units")

    @property
    def memory(self) -> Memory:
        return None if self.memory_trainer is None else self.memory_trainer.params


def init_state(config: GanConfig, data_dim: int, rng: np.random.Generator) -> TrainerState:
    """Xavier-initialized networks and (for associative modes) a fresh memory."""
    gen = build_generator(config, data_dim, rng)
    disc = build_discriminator(config, data_dim, rng)
    opt_g = nn.Adam(config.lr_gan, config.beta1, config.beta2_gan)
    opt_d = nn.Adam(config.lr_gan, config.beta1, config.beta2_gan)
    trainer = None
    if config.mode == "aan":
        cfg = RbmTrainConfig(lr=config.lr_bm, k=config.gibbs_k, batch_size=config.batch_size,
                             beta1=config.beta1, beta2=config.beta2_bm)
        trainer = RbmTrainer(RbmParams.init(config.latent_dim, config.bm_hidden, rng), cfg)
    elif config.mode == "qaan":
        cfg = QbmTrainConfig(lr=config.lr_bm, batch_size=config.batch_size, beta1=config.beta1,
                             beta2=config.beta2_bm, sampler=config.sampler)
        trainer = QbmTrainer(QbmParams.init(config.latent_dim, config.bm_hidden, rng, config.gamma), cfg)
    return TrainerState(config, gen, disc, opt_g, opt_d, trainer)


def sample_latents(state: TrainerState, count: int, rng: np.random.Generator) -> tuple[np.ndarray, Optional[MomentEstimate]]:
    """Generator inputs and, in QAAN mode, the free-phase moments of the same run."""
    cfg = state.config
    if cfg.mode == "dcgan":
        return rng.uniform(-1.0, 1.0, size=(count, cfg.latent_dim)), None
    if state.memory is None:
        raise ValueError(f"mode {cfg.mode!r} needs an associative memory")
    if cfg.mode == "aan":
        bits = sample_annealed(state.memory, count, AnnealSchedule.linear(cfg.anneal_rungs), rng)
        return bits_to_spins(bits).astype(np.float64), None
    sampler = replace(cfg.sampler, replicas=max(cfg.sampler.replicas, count))
    pop, stats = population_anneal(state.memory, sampler, rng)
    return sample_visible(pop, count, rng).astype(np.float64), stats


def latent_batch(state: TrainerState, count: int, rng: np.random.Generator) -> np.ndarray:
    """Noise in [-1, 1] (GAN) or Boltzmann-machine samples mapped to {-1, +1}."""
    return sample_latents(state, count, rng)[0]


def generate(state: TrainerState, count: int, rng: np.random.Generator, chunk: int = 1000) -> np.ndarray:
    out = []
    for start in range(0, count, chunk):
        z, _ = sample_latents(state, min(chunk, count - start), rng)
        out.append(nn.forward(state.generator, z)[0])
    return np.concatenate(out)


def discriminator_features(state: TrainerState, x: np.ndarray) -> np.ndarray:
    _, cache = nn.forward(state.discriminator, x)
    return np.clip(cache.features, FEATURE_EPS, 1.0 - FEATURE_EPS)


def generator_gradients(generator: nn.DenseNet, discriminator: nn.DenseNet, latents: np.ndarray,
                        non_saturating: bool = False) -> tuple[list[np.ndarray], float]:
    """Gradient of the generator loss; touches real data only through D's parameters."""
    fake, g_cache = nn.forward(generator, latents)
    d_fake, d_cache = nn.forward(discriminator, fake)
    logits = d_cache.preacts[-1]
    n = latents.shape[0]
    if non_saturating:
        loss = float(-np.mean(nn.log_sigmoid(logits)))
        g_logits = -(1.0 - d_fake) / n
    else:
        loss = float(np.mean(nn.log_one_minus_sigmoid(logits)))
        g_logits = -d_fake / n
    _, g_input = nn.backward(discriminator, d_cache, g_logits, wrt_logits=True)
    grads, _ = nn.backward(generator, g_cache, g_input)
    return grads, loss


def train_step(state: TrainerState, real_batch: np.ndarray, rng: np.random.Generator,
               latents: Optional[np.ndarray] = None) -> dict:
    """One adversarial step: D update, memory update on real features, G update.

    ``real_batch`` is on the generator's output scale ([-1, 1]).  Memory
    features are read from the discriminator before its update.
    """
    cfg = state.config
    real = np.asarray(real_batch, dtype=np.float64)
    n = real.shape[0]
    stats = None
    if latents is None:
        latents, stats = sample_latents(state, n, rng)
    fake, _ = nn.forward(state.generator, latents)

    disc = state.discriminator
    d_real, real_cache = nn.forward(disc, real)
    d_fake, fake_cache = nn.forward(disc, fake)
    real_logits, fake_logits = real_cache.preacts[-1], fake_cache.preacts[-1]
    real_t = rng.uniform(cfg.real_label_low, cfg.real_label_high, size=real_logits.shape)
    fake_t = rng.uniform(cfg.fake_label_low, cfg.fake_label_high, size=fake_logits.shape)
    d_loss = smoothed_cross_entropy(real_logits, real_t) + smoothed_cross_entropy(fake_logits, fake_t)
    grads_r, _ = nn.backward(disc, real_cache, (d_real - real_t) / n, wrt_logits=True)
    grads_f, _ = nn.backward(disc, fake_cache, (d_fake - fake_t) / n, wrt_logits=True)
    j_d, j_g = gan_losses_from_logits(real_logits, fake_logits)
    features = np.clip(real_cache.features, FEATURE_EPS, 1.0 - FEATURE_EPS)
    state.opt_d.step(disc.params(), [a + b for a, b in zip(grads_r, grads_f)])

    if cfg.mode == "aan":
        state.memory_trainer.step(features, rng)
    elif cfg.mode == "qaan":
        state.memory_trainer.step(features, rng, neg_stats=stats)

    g_grads, g_loss = generator_gradients(state.generator, disc, latents, cfg.non_saturating)
    state.opt_g.step(state.generator.params(), g_grads)
    state.steps += 1
    return {"d_loss": d_loss, "g_loss": g_loss, "j_d": j_d, "j_g": j_g,
            "d_real": float(d_real.mean()), "d_fake": float(d_fake.mean()), "features": features}


def feature_kl(state: TrainerState, real: np.ndarray) -> Optional[float]:
    """KL(feature distribution of real data || memory's visible marginal), if enumerable."""
    mem = state.memory
    if mem is None:
        return None
    configs = all_configs(mem.n_visible)
    target = bernoulli_product_table(discriminator_features(state, real), configs)
    if isinstance(mem, RbmParams):
        if mem.n_visible + mem.n_hidden > 20:
            return None
        model = exact_marginal(mem)
    else:
        if mem.n_units > 12:
            return None
        model = exact_thermal(mem).visible_marginal
    return kl_divergence(target, model)


MetricHook = Callable[[TrainerState, int], list]


def run_epoch(state: TrainerState, data: np.ndarray, rng: np.random.Generator) -> dict:
    order = rng.permutation(len(data))
    bs = state.config.batch_size
    logs = []
    for start in range(0, len(data) - bs + 1, bs):
        logs.append(train_step(state, data[order[start : start + bs]], rng))
    state.epoch += 1
    return {k: float(np.mean([l[k] for l in logs])) for k in ("d_loss", "g_loss", "j_d", "j_g", "d_real", "d_fake")}


def train(state: TrainerState, data: np.ndarray, rng: np.random.Generator, epochs: Optional[int] = None,
          hooks: tuple = ()) -> TrainerState:
    """Run epochs of :func:`train_step`; each hook returns rows for the metric log.

    A hook is ``hook(state, epoch) -> [(metric, mean, std), ...]``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if data.shape[0] < state.config.batch_size:
        raise ValueError("dataset is smaller than one mini-batch")
    for _ in range(state.config.epochs if epochs is None else epochs):
        summary = run_epoch(state, data, rng)
        rows = [("d_loss", summary["d_loss"], 0.0), ("g_loss", summary["g_loss"], 0.0)]
        for hook in hooks:
            rows.extend(hook(state, state.epoch))
        for metric, mean, std in rows:
            state.metric_log.append((state.epoch, state.config.mode, metric, float(mean), float(std)))
    return state


def d_mean_hook(heldout: np.ndarray) -> MetricHook:
    def hook(state: TrainerState, epoch: int) -> list:
        d, _ = nn.forward(state.discriminator, heldout)
        return [("d_real_heldout", float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d))))]
    return hook


def feature_kl_hook(heldout: np.ndarray) -> MetricHook:
    def hook(state: TrainerState, epoch: int) -> list:
        value = feature_kl(state, heldout)
        return [] if value is None else [("bm_feature_kl", value, 0.0)]
    return hook

