"""Small built-in corpora: the gradient-check fixture and a 3-location toy set."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import ForecastConfig
from .dataset import Corpus
from .gradcheck import finite_diff_check
from .model import ForecastModel, collate
from .snapshots import StatsTable, parse_snapshot
from .synth import SynthSpec, generate


def corpus_from_synth(synth, config):
    snapshots = [parse_snapshot(rec, i + 1) for i, rec in enumerate(synth.records)]
    return Corpus(snapshots, StatsTable(synth.stats), config)


def gradcheck_config(**overrides):
    """3 locations, 5 entities, T=3, H=2, hidden 8; dropout off so the loss is deterministic."""
    base = dict(
        horizon=1, window=3, d_e=4, d_t=2, heads=2, dgnn_hidden=8, rnn_hidden=8,
        dropout=0.0, batch_size=2, max_epochs=1, patience=1, validation_size=1,
    )
    base.update(overrides)
    return ForecastConfig(**base)


def gradcheck_fixture(seed=0):
    """(model, batch) for the tiny end-to-end gradient check."""
    spec = SynthSpec(
        num_locations=3, num_background=4, num_drivers=1, lag=1, duration=2, d_e=4,
        driver_rate=0.5, background_rate=1.5, relation_rate=1.0, seed=seed,
        level_low=5.0, level_high=20.0, history_days=2,
    )
    synth = generate(spec, days=6, window=3, max_horizon=1)
    config = gradcheck_config(seed=seed)
    corpus = corpus_from_synth(synth, config)
    ends = corpus.window_ends()
    examples = [corpus.example(e, 1) for e in ends[:2]]
    rng = np.random.default_rng(seed)
    model = ForecastModel(config, corpus.locations, rng)
    # O(1) targets keep relative errors meaningful; the offset keeps them
    # off-centre so bias gradients are not exactly zero at initialization
    counts = np.concatenate([ex.target for ex in examples])
    model.normalizer.mean[:] = 0.5 * float(np.mean(counts))
    model.normalizer.std[:] = float(np.std(counts)) + 1.0
    batch = collate(examples, model.normalizer)
    return model, batch


def end_to_end_gradcheck(seed=0, epsilon=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    model, batch = gradcheck_fixture(seed)

    def loss():
        out, _, _ = model.forward(batch, training=True, rng=None)
        return ad.mse_loss(out, batch.y)

    return finite_diff_check(loss, model.parameters(), epsilon=epsilon)


def toy_config(**overrides):
    """Default training settings with widths scaled down to 16 for the toy set."""
    base = dict(
        horizon=1, window=7, d_e=8, d_t=7, heads=2, dgnn_hidden=16, rnn_hidden=16,
        learning_rate=0.001, batch_size=4, dropout=0.5, max_epochs=300, patience=300,
        validation_size=5, normalize=True,
    )
    base.update(overrides)
    return ForecastConfig(**base)


def toy_corpus(config=None, days=100, seed=0):
    """3 locations whose counts follow a noise-free weekly cycle.

    The next value is a function of the previous seven, so a model with
    enough capacity can drive the training error towards zero even with
    dropout active. Snapshots come from the synthetic generator with the
    driver effect switched off.
    """
    spec = SynthSpec(
        num_locations=3, num_background=6, num_drivers=1, lag=3, duration=3, d_e=8, effect=0.0,
        driver_rate=0.1, background_rate=1.0, seed=seed, history_days=7,
    )
    synth = generate(spec, days=days, window=7, max_horizon=7)
    rng = np.random.default_rng(seed)
    level = rng.uniform(50, 200, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    first = synth.stats[0][0]
    rows = []
    for date, loc, _, _ in synth.stats:
        j, t = int(loc[3:]), (date - first).days
        cases = float(np.rint(level[j] * (1.0 + 0.4 * np.sin(2 * np.pi * t / 7 + phase[j]))))
        rows.append((date, loc, cases, float(np.rint(0.02 * cases))))
    snapshots = [parse_snapshot(rec, i + 1) for i, rec in enumerate(synth.records)]
    return Corpus(snapshots, StatsTable(rows), config or toy_config())
