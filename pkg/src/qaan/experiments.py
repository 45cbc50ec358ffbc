"""Reproducible experiment setups shared by the CLI and the acceptance tests."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import nn
from .adversarial import GanConfig, TrainerState, feature_kl_hook, generate, init_state, run_epoch
from .data import BernoulliMixture, mixture_table, sample_mixture, toy_images
from .metrics import feature_summary, frechet_distance, inception_style_score, kl_divergence
from .pimc import PopulationDegeneracyWarning, TrotterConfig
from .qbm import QbmParams, QbmTrainConfig, QbmTrainer, exact_thermal
from .rbm import RbmParams, RbmTrainConfig, RbmTrainer, exact_marginal
from .streams import make_streams

@dataclass
class SyntheticConfig:
    n_visible: int = 8
    n_hidden: int = 2
    n_modes: int = 8
    q: float = 0.9
    samples: int = 6400
    epochs: int = 5
    batch_size: int = 64
    lr: float = 1e-3
    gibbs_k: int = 5
    gamma: float = 2.0
    sampler: TrotterConfig = field(default_factory=TrotterConfig)


@dataclass
class SyntheticRun:
    """Both Boltzmann machines trained on one mixture sample, epoch by epoch."""

    config: SyntheticConfig
    seed: int
    target: np.ndarray
    data: np.ndarray
    rbm: RbmTrainer
    qbm: QbmTrainer
    streams: dict
    degeneracy_warnings: int = 0
    log: list = field(default_factory=list)

    @property
    def epoch(self) -> int:
        return self.rbm.epoch

    def step_epoch(self) -> list:
        self.rbm.run_epoch(self.data, self.streams["rbm"])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PopulationDegeneracyWarning)
            self.qbm.run_epoch(self.data, self.streams["qbm"])
        self.degeneracy_warnings += sum(issubclass(w.category, PopulationDegeneracyWarning) for w in caught)
        rows = [(self.epoch, "rbm", "kl", kl_divergence(self.target, exact_marginal(self.rbm.params)), 0.0),
                (self.epoch, "qbm", "kl", kl_divergence(self.target, exact_thermal(self.qbm.params).visible_marginal), 0.0)]
        self.log.extend(rows)
        return rows


def synthetic_setup(config: SyntheticConfig, seed: int) -> SyntheticRun:
    streams = make_streams(seed)
    mixture = BernoulliMixture.random(config.n_modes, config.n_visible, config.q, streams["data"])
    data = sample_mixture(mixture, config.samples, streams["data"]).astype(np.float64)
    target = mixture_table(mixture)
    rbm_cfg = RbmTrainConfig(lr=config.lr, k=config.gibbs_k, batch_size=config.batch_size, epochs=config.epochs)
    qbm_cfg = QbmTrainConfig(lr=config.lr, batch_size=config.batch_size, epochs=config.epochs, sampler=config.sampler)
    rbm = RbmTrainer(RbmParams.init(config.n_visible, config.n_hidden, streams["rbm"]), rbm_cfg)
    qbm = QbmTrainer(QbmParams.init(config.n_visible, config.n_hidden, streams["qbm"], config.gamma), qbm_cfg)
    return SyntheticRun(config, seed, target, data, rbm, qbm, streams)


def run_synthetic(config: SyntheticConfig, seed: int) -> SyntheticRun:
    run = synthetic_setup(config, seed)
    while run.epoch < config.epochs:
        run.step_epoch()
    return run


@dataclass
class ToyConfig:
    """Small adversarial experiment on 8x8 grey-level toy images."""

    train_samples: int = 8192
    heldout_samples: int = 512
    n_modes: int = 8
    side: int = 8
    q: float = 0.9
    contrast: float = 0.6
    pixel_noise: float = 0.1
    eval_samples: int = 1000
    eval_batches: int = 10
    classifier_epochs: int = 10
    gan: GanConfig = field(default_factory=lambda: GanConfig(mode="qaan", latent_dim=8, bm_hidden=2, epochs=5))


@dataclass
class ToyRun:
    config: ToyConfig
    seed: int
    state: TrainerState
    train: np.ndarray
    heldout: np.ndarray
    heldout_labels: np.ndarray
    classifier: nn.DenseNet
    streams: dict
    degeneracy_warnings: int = 0

    @property
    def epoch(self) -> int:
        return self.state.epoch

    @property
    def log(self) -> list:
        return self.state.metric_log

    def class_probs(self, x: np.ndarray) -> np.ndarray:
        return nn.softmax(nn.forward(self.classifier, x)[0])

    def class_features(self, x: np.ndarray) -> np.ndarray:
        return nn.forward(self.classifier, x)[1].outputs[0]

    def evaluate(self) -> list:
        rng = self.streams["eval"]
        state = self.state
        rows = [("d_real_heldout", *_mean_sem(nn.forward(state.discriminator, self.heldout)[0]))]
        for metric, value, std in feature_kl_hook(self.heldout)(state, state.epoch):
            rows.append((metric, value, std))
        fake = generate(state, self.config.eval_samples, rng)
        score = inception_style_score(fake, self.class_probs, self.config.eval_batches)
        rows.append(("inception_score", score.mean, score.std_of_mean))
        fid = frechet_distance(feature_summary(fake, self.class_features),
                               feature_summary(self.heldout, self.class_features))
        rows.append(("fid", fid, 0.0))
        return rows

    def step_epoch(self) -> list:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PopulationDegeneracyWarning)
            summary = run_epoch(self.state, self.train, self.streams["nn"])
            rows = [("d_loss", summary["d_loss"], 0.0), ("g_loss", summary["g_loss"], 0.0)] + self.evaluate()
        self.degeneracy_warnings += sum(issubclass(w.category, PopulationDegeneracyWarning) for w in caught)
        out = [(self.epoch, self.state.config.mode, m, float(a), float(b)) for m, a, b in rows]
        self.state.metric_log.extend(out)
        return out


def _mean_sem(values: np.ndarray) -> tuple[float, float]:
    values = np.ravel(values)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def toy_setup(config: ToyConfig, seed: int) -> ToyRun:
    streams = make_streams(seed)
    train_set, mixture = toy_images(config.train_samples, streams["data"], config.n_modes, config.side, config.q,
                                      contrast=config.contrast, pixel_noise=config.pixel_noise)
    held_set, _ = toy_images(config.heldout_samples, streams["data"], mixture=mixture,
                             contrast=config.contrast, pixel_noise=config.pixel_noise)
    train = 2.0 * train_set.records - 1.0
    heldout = 2.0 * held_set.records - 1.0
    classifier = nn.DenseNet.build([train.shape[1], 32, config.n_modes], ["leaky_relu", "identity"], streams["eval"])
    nn.train_classifier(classifier, train, train_set.labels, streams["eval"], epochs=config.classifier_epochs)
    state = init_state(config.gan, train.shape[1], streams["nn"])
    return ToyRun(config, seed, state, train, heldout, held_set.labels, classifier, streams)


def run_toy(config: ToyConfig, seed: int, on_epoch: Optional[Callable[[ToyRun], None]] = None) -> ToyRun:
    run = toy_setup(config, seed)
    while run.epoch < config.gan.epochs:
        run.step_epoch()
        if on_epoch is not None:
            on_epoch(run)
    return run


def toy_config(mode: str, **overrides) -> ToyConfig:
    """Toy defaults for a mode; DCGAN keeps the same latent width as the associative modes."""
    cfg = ToyConfig()
    cfg.gan = replace(cfg.gan, mode=mode)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def metric_series(log: list, mode: str, metric: str) -> np.ndarray:
    return np.array([row[3] for row in log if row[1] == mode and row[2] == metric])

