"""Walk-forward task construction and the training loop."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import CoverageError, DivergenceError
from .evaluation import PredictionRecord
from .model import ForecastModel, collate
from .optim import OptimizerState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)
DAY = dt.timedelta(days=1)


@dataclass
class TrainingTask:
    cutoff: dt.date
    horizon: int
    train_ends: list
    validation_ends: list

    @property
    def key(self):
        return (self.cutoff.isoformat(), self.horizon)


@dataclass
class TrainResult:
    model: ForecastModel
    trace: list = field(default_factory=list)  # dicts: epoch, train_loss, train_mse, val_mae
    best_epoch: int = 0
    task: TrainingTask = None


def build_task(corpus, cutoff, horizon, validation_size):
    ends = corpus.training_ends(cutoff, horizon)
    if len(ends) <= validation_size:
        raise CoverageError(
            f"cutoff {cutoff.isoformat()}, horizon {horizon}: {len(ends)} labelled windows, "
            f"need more than {validation_size} (validation)"
        )
    return TrainingTask(cutoff, horizon, ends[:-validation_size], ends[-validation_size:])


def build_tasks(corpus, config, cutoffs=None, horizons=None):
    """One task per (cutoff, horizon).

    Each example pairs the window ending on day t with targets on day t + l,
    restricted to t + l <= cutoff. The most recent ``validation_size`` window
    ends are held out for model selection.
    """
    horizons = [config.horizon] if horizons is None else list(horizons)
    if cutoffs is None:
        cutoffs = [corpus.stats.last_date]
    tasks = []
    for cutoff in cutoffs:
        for h in horizons:
            tasks.append(build_task(corpus, cutoff, h, config.validation_size))
    return tasks


def task_rngs(seed, cutoff, horizon):
    """Independent (init, order, dropout) generators for one task."""
    root = np.random.SeedSequence([int(seed), cutoff.toordinal(), int(horizon)])
    return [np.random.default_rng(s) for s in root.spawn(3)]


def _mae_raw(model, corpus, ends, horizon):
    if not ends:
        return float("nan")
    batch = collate([corpus.example(e, horizon) for e in ends], model.normalizer)
    pred, _ = model.predict(batch)
    actual = model.normalizer.inverse(batch.y, batch.row_location)
    return float(np.mean(np.abs(pred - actual)))


def _mse_norm(model, batch):
    with ad.no_grad():
        out, _, _ = model.forward(batch, training=False)
    return float(np.mean((out.data - batch.y) ** 2))


def train(task, corpus, config, progress=None):
    """Fit a fresh model on one task with Adam and validation early stopping.

    The trace's epoch-0 row is measured on the initial parameters. Training
    stops once ``patience`` consecutive epochs pass without a validation MAE
    improvement; the best-validation parameters are restored at the end.
    """
    init_rng, order_rng, drop_rng = task_rngs(config.seed, task.cutoff, task.horizon)
    model = ForecastModel(config, corpus.locations, init_rng)
    model.normalizer = corpus.normalizer(task.cutoff)
    params = model.parameters()
    state = OptimizerState(
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )
    h = task.horizon
    train_examples = [corpus.example(e, h) for e in task.train_ends]
    full_train = collate(train_examples, model.normalizer)

    result = TrainResult(model=model, task=task)
    mse0 = _mse_norm(model, full_train)
    best_val = _mae_raw(model, corpus, task.validation_ends, h)
    result.trace.append({"epoch": 0, "train_loss": mse0, "train_mse": mse0, "val_mae": best_val})
    best_state, best_epoch, since = None, 0, 0

    n = len(train_examples)
    for epoch in range(1, config.max_epochs + 1):
        order = order_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = collate([train_examples[i] for i in order[start : start + config.batch_size]], model.normalizer)
            for p in params:
                p.zero_grad()
            out, _, _ = model.forward(batch, training=True, rng=drop_rng)
            loss = ad.mse_loss(out, batch.y)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(epoch, config.learning_rate)
            ad.backward(loss)
            clip_grad_norm(params, config.grad_clip)
            adam_step(params, state)
            model.mark_stale()
            losses.append(value)
        train_mse = _mse_norm(model, full_train)
        val = _mae_raw(model, corpus, task.validation_ends, h)
        if not np.isfinite(train_mse) or not np.isfinite(val):
            raise DivergenceError(epoch, config.learning_rate, "non-finite evaluation")
        result.trace.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "train_mse": train_mse, "val_mae": val})
        if progress is not None:
            progress(epoch, result.trace[-1])
        if best_state is None or val < best_val:
            best_val, best_state, best_epoch, since = val, model.state_dict(), epoch, 0
        else:
            since += 1
        if since >= config.patience:
            break
    model.load_state_dict(best_state)
    result.best_epoch = best_epoch
    log.info("task %s: %d epochs, best epoch %d, val MAE %.4f", task.key, len(result.trace) - 1, best_epoch, best_val)
    return result


def predict_records(model, corpus, ends, horizon, model_name="model"):
    """Forecast the target at end + horizon for each window end."""
    if not ends:
        return []
    examples = [corpus.example(e, horizon) for e in ends]
    batch = collate(examples, model.normalizer, with_targets=False)
    pred, _ = model.predict(batch)
    records = []
    for r in range(batch.R):
        ex = examples[batch.row_example[r]]
        j = batch.row_location[r]
        actual = ex.target[j]
        records.append(
            PredictionRecord(
                cutoff=ex.end,
                horizon=horizon,
                location=corpus.locations[j],
                target=corpus.kind,
                predicted=float(pred[r]),
                actual=None if np.isnan(actual) else float(actual),
            )
        )
    return records


def _run_refit(args):
    corpus, config, refit_cutoff, horizon, block = args
    task = build_task(corpus, refit_cutoff, horizon, config.validation_size)
    result = train(task, corpus, config)
    return predict_records(result.model, corpus, block, horizon), result


def walk_forward(corpus, config, cutoffs, horizon=None, refit_every=None, workers=1):
    """Train at cutoffs and forecast each cutoff + horizon without lookahead.

    Cutoffs are processed in blocks of ``refit_every``: a model is trained
    with data up to the first cutoff of the block and forecasts every cutoff
    in that block, each from its own window.
    """
    horizon = config.horizon if horizon is None else horizon
    refit_every = config.refit_every if refit_every is None else refit_every
    cutoffs = sorted(cutoffs)
    valid = set(corpus.window_ends())
    bad = [c for c in cutoffs if c not in valid]
    if bad:
        raise CoverageError(f"no complete window ending at {bad[0].isoformat()}")
    jobs = [
        (corpus, config, cutoffs[i], horizon, cutoffs[i : i + refit_every])
        for i in range(0, len(cutoffs), refit_every)
    ]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_refit, jobs))
    else:
        outputs = [_run_refit(job) for job in jobs]
    records, results = [], []
    for recs, res in outputs:
        records.extend(recs)
        results.append(res)
    return records, results
