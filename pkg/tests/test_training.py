import datetime as dt
import io

import numpy as np
import pytest

from kgcast.checkpoint import FORMAT_VERSION, MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from kgcast.config import ForecastConfig
from kgcast.errors import CompatibilityError, ConfigurationError, CoverageError, DivergenceError, IntegrityError
from kgcast.fixtures import corpus_from_synth
from kgcast.model import ForecastModel, collate
from kgcast.snapshots import StatsTable
from kgcast.synth import SynthSpec, generate
from kgcast.training import build_task, build_tasks, predict_records, train, walk_forward

DAY = dt.timedelta(days=1)


def small_config(**kw):
    base = dict(horizon=7, window=7, d_e=4, d_t=7, heads=2, dgnn_hidden=8, rnn_hidden=8,
                batch_size=4, dropout=0.5, max_epochs=3, patience=3, validation_size=5)
    base.update(kw)
    return ForecastConfig(**base)


def small_synth(days=30, seed=0, **kw):
    spec = SynthSpec(num_locations=3, num_background=6, num_drivers=1, lag=2, duration=2, d_e=4,
                     driver_rate=0.2, background_rate=1.0, seed=seed, history_days=7, **kw)
    return generate(spec, days=days, window=7, max_horizon=7)


@pytest.fixture(scope="module")
def synth30():
    return small_synth()


def day(n):
    """1-based day number of the 30-day corpus."""
    return dt.date(2020, 3, 1) + (n - 1) * DAY


# ------------------------------------------------------------------ config


def test_default_hyperparameters():
    c = ForecastConfig()
    assert (c.learning_rate, c.batch_size, c.dropout) == (0.001, 4, 0.5)
    assert (c.dgnn_hidden, c.rnn_hidden, c.window, c.d_e, c.d_t) == (64, 64, 7, 768, 7)
    assert (c.max_epochs, c.patience, c.validation_size) == (300, 100, 5)


def test_config_text_round_trip_and_errors():
    c = small_config(merge_eps=0.25, normalize=True)
    assert ForecastConfig.from_text(c.to_text()) == c
    unclipped = small_config(grad_clip=None)
    assert ForecastConfig.from_text(unclipped.to_text()) == unclipped
    with pytest.raises(ConfigurationError):
        ForecastConfig.from_text("horizon = 0")
    with pytest.raises(ConfigurationError):
        ForecastConfig.from_text("unknown_key = 3")
    with pytest.raises(ConfigurationError):
        ForecastConfig(patience=400)


# -------------------------------------------------------------------- tasks


def test_thirty_day_example(synth30):
    corpus = corpus_from_synth(synth30, small_config())
    task = build_task(corpus, day(30), 7, 5)
    ends = task.train_ends + task.validation_ends
    assert ends == [day(n) for n in range(7, 24)]
    assert task.validation_ends == [day(n) for n in range(19, 24)]
    assert not set(task.train_ends) & set(task.validation_ends)


def test_horizon_beyond_data(synth30):
    corpus = corpus_from_synth(synth30, small_config())
    with pytest.raises(CoverageError):
        build_tasks(corpus, small_config(horizon=30), cutoffs=[day(30)])


def test_two_horizons_two_tasks(synth30):
    corpus = corpus_from_synth(synth30, small_config())
    tasks = build_tasks(corpus, small_config(), cutoffs=[day(30)], horizons=[1, 7])
    assert [(t.cutoff, t.horizon) for t in tasks] == [(day(30), 1), (day(30), 7)]
    assert tasks[0].train_ends != tasks[1].train_ends
    assert all(e + t.horizon * DAY <= t.cutoff for t in tasks for e in t.train_ends + t.validation_ends)


# ----------------------------------------------------------------- training


def test_patience_zero_runs_one_epoch(synth30):
    cfg = small_config(patience=0)
    corpus = corpus_from_synth(synth30, cfg)
    result = train(build_task(corpus, day(30), 7, 5), corpus, cfg)
    assert [row["epoch"] for row in result.trace] == [0, 1]


def test_training_is_deterministic(synth30):
    cfg = small_config()
    states = []
    for _ in range(2):
        corpus = corpus_from_synth(synth30, cfg)
        result = train(build_task(corpus, day(30), 7, 5), corpus, cfg)
        states.append(result.model.state_dict())
    assert states[0].keys() == states[1].keys()
    assert all(states[0][k].tobytes() == states[1][k].tobytes() for k in states[0])


def test_trace_and_best_state(synth30):
    cfg = small_config(max_epochs=4, patience=4)
    corpus = corpus_from_synth(synth30, cfg)
    result = train(build_task(corpus, day(30), 7, 5), corpus, cfg)
    vals = [row["val_mae"] for row in result.trace[1:]]
    assert result.best_epoch == 1 + int(np.argmin(vals))
    recs = predict_records(result.model, corpus, result.task.validation_ends, 7)
    mae = np.mean([abs(r.actual - r.predicted) for r in recs])
    assert mae == pytest.approx(result.trace[result.best_epoch]["val_mae"], rel=1e-12)


def test_divergence_reports_epoch_and_rate(synth30):
    cfg = small_config(learning_rate=1e300, grad_clip=None, batch_norm=False, dropout=0.0)
    corpus = corpus_from_synth(synth30, cfg)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as exc:
        train(build_task(corpus, day(30), 7, 5), corpus, cfg)
    assert exc.value.epoch >= 1 and exc.value.learning_rate == 1e300


def _perturbed(synth, after):
    stats = [(d, loc, c * 3 + 11 if d > after else c, k) for d, loc, c, k in synth.stats]
    records = []
    for rec in synth.records:
        rec = dict(rec)
        if dt.date.fromisoformat(rec["date"]) > after:
            rec["entities"] = [{**e, "embedding": [v + 1.0 for v in e["embedding"]]} for e in rec["entities"]]
        records.append(rec)
    return type(synth)(synth.spec, records, stats, synth.manifest, synth.drivers, synth.locations)


@pytest.mark.parametrize("normalize", [False, True])
def test_no_lookahead(normalize):
    synth = small_synth(days=40)
    cutoff = day(30)
    cfg = small_config(normalize=normalize)
    states = []
    for s in (synth, _perturbed(synth, cutoff)):
        corpus = corpus_from_synth(s, cfg)
        states.append(train(build_task(corpus, cutoff, 7, 5), corpus, cfg).model.state_dict())
    assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])


def test_validation_targets_never_drive_gradients(synth30):
    cfg = small_config(max_epochs=3, patience=3)
    traces = []
    for scale in (1, 5):
        stats = [(d, loc, c * scale if d >= day(26) else c, k) for d, loc, c, k in synth30.stats]
        s = type(synth30)(synth30.spec, synth30.records, stats, synth30.manifest, synth30.drivers, synth30.locations)
        corpus = corpus_from_synth(s, cfg)
        traces.append(train(build_task(corpus, day(30), 7, 5), corpus, cfg).trace)
    assert [r["train_loss"] for r in traces[0]] == [r["train_loss"] for r in traces[1]]
    assert [r["val_mae"] for r in traces[0]] != [r["val_mae"] for r in traces[1]]


# ---------------------------------------------------------------- ablations


def _entity_variant(synth, rng):
    records = []
    for rec in synth.records:
        ents = [{**e, "embedding": list(rng.normal(size=len(e["embedding"])))} for e in rec["entities"]]
        ids = [e["id"] for e in ents]
        rel = [[ids[0], ids[1]]] if len(ids) > 1 else []
        records.append({**rec, "entities": ents, "relations": rel})
    return type(synth)(synth.spec, records, synth.stats, synth.manifest, synth.drivers, synth.locations)


def _predict(synth, cfg):
    corpus = corpus_from_synth(synth, cfg)
    model = ForecastModel(cfg, corpus.locations, np.random.default_rng(0))
    ends = corpus.window_ends()[:6]
    pred, _ = model.predict(collate([corpus.example(e, 7) for e in ends], model.normalizer, with_targets=False))
    return pred


def test_bypass_dgnn_ignores_entities(synth30):
    cfg = small_config(bypass_dgnn=True)
    variant = _entity_variant(synth30, np.random.default_rng(5))
    no_mentions = type(synth30)(synth30.spec, [{**r, "entities": [], "relations": [], "location_mentions": []}
                                               for r in synth30.records], synth30.stats, [], [], synth30.locations)
    base = _predict(synth30, cfg)
    assert np.array_equal(base, _predict(variant, cfg))
    assert np.array_equal(base, _predict(no_mentions, cfg))


def test_dropped_location_entity_edges_ignore_entities(synth30):
    cfg = small_config(drop_location_entity_edges=True)
    base = _predict(synth30, cfg)
    assert np.array_equal(base, _predict(_entity_variant(synth30, np.random.default_rng(6)), cfg))
    # and entity data does matter with the edges kept
    full = small_config()
    assert not np.array_equal(_predict(synth30, full), _predict(_entity_variant(synth30, np.random.default_rng(6)), full))


def test_mean_pool_variant_averages_dgnn_outputs(synth30):
    cfg = small_config(mean_pool_instead_of_birnn=True)
    corpus = corpus_from_synth(synth30, cfg)
    model = ForecastModel(cfg, corpus.locations, np.random.default_rng(0))
    batch = collate([corpus.example(e, 7) for e in corpus.window_ends()[:2]], model.normalizer)
    _, _, beta = model.forward(batch)
    np.testing.assert_allclose(beta, 1.0 / cfg.window)
    assert model.pool.W1.shape[0] == cfg.dgnn_hidden


# -------------------------------------------------------------- checkpoints


@pytest.fixture(scope="module")
def trained(synth30):
    cfg = small_config(max_epochs=2, patience=2, normalize=True)
    corpus = corpus_from_synth(synth30, cfg)
    return corpus, train(build_task(corpus, day(30), 7, 5), corpus, cfg).model


def test_checkpoint_round_trip_is_byte_identical(trained, tmp_path):
    _, model = trained
    save_checkpoint(model, tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_loaded_model_predicts_identically(trained):
    corpus, model = trained
    ends = corpus.window_ends()
    before = predict_records(model, corpus, ends, 7)
    after = predict_records(loads(dumps(model)), corpus, ends, 7)
    assert [r.predicted for r in before] == [r.predicted for r in after]


def test_checkpoint_embeds_config_and_shapes(trained):
    _, model = trained
    blob = dumps(model)
    header = blob[len(MAGIC) + 8 :].split(b"[blocks]")[0].decode()
    assert f"format_version = {FORMAT_VERSION}" in header
    assert "dgnn_hidden = 8" in header
    assert loads(blob).config == model.config


def test_tampered_shape_field(trained):
    _, model = trained
    blob = dumps(model)
    bad = blob.replace(b"dgnn.0.W 2,8,11", b"dgnn.0.W 2,8,12")
    assert bad != blob
    # keep the header length field consistent so only the shape is wrong
    with pytest.raises(IntegrityError):
        loads(bad)


def test_version_mismatch(trained):
    _, model = trained
    blob = dumps(model).replace(f"format_version = {FORMAT_VERSION}".encode(), b"format_version = 9")
    with pytest.raises(CompatibilityError):
        loads(blob)


def test_truncated_payload(trained):
    _, model = trained
    with pytest.raises(IntegrityError):
        loads(dumps(model)[:-8])
    with pytest.raises(IntegrityError):
        loads(b"not a checkpoint")


# ------------------------------------------------------------- walk-forward


def test_walk_forward_blocks(synth30):
    cfg = small_config(max_epochs=1, patience=1, horizon=1)
    corpus = corpus_from_synth(synth30, cfg)
    cutoffs = [day(n) for n in range(26, 30)]
    records, results = walk_forward(corpus, cfg, cutoffs, horizon=1, refit_every=2)
    assert [r.task.cutoff for r in results] == [day(26), day(28)]
    assert sorted({r.cutoff for r in records}) == cutoffs
    for res in results:
        assert max(res.task.train_ends + res.task.validation_ends) + DAY <= res.task.cutoff
