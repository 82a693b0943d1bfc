"""Windowed examples drawn from a snapshot corpus and a statistics table."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, DataError
from .model import Normalizer
from .window import aggregate_window, build_features

DAY = dt.timedelta(days=1)


@dataclass
class Example:
    end: dt.date  # last day of the window (the cutoff the example forecasts from)
    target_date: dt.date
    graph: object
    features: object
    history: np.ndarray  # (L, T, d_t) raw statistics per location copy
    target: np.ndarray  # (L,) raw counts at target_date, nan if unknown


class Corpus:
    """Snapshots plus statistics, with cached per-window graphs and features."""

    def __init__(self, snapshots, stats, config):
        self.config = config
        self.snapshots = {s.date: s for s in snapshots}
        if not self.snapshots:
            raise DataError("no snapshots")
        self.stats = stats
        first = snapshots[0]
        self.locations = sorted(first.locations)
        missing = [loc for loc in self.locations if loc not in stats.locations]
        if missing:
            raise CoverageError(f"no statistics for locations {missing}")
        self._cache = {}
        self._ends = None

    @property
    def kind(self):
        return self.config.target

    def window_dates(self, end):
        T = self.config.window
        return [end - k * DAY for k in range(T - 1, -1, -1)]

    def has_window(self, end):
        cfg = self.config
        if any(d not in self.snapshots for d in self.window_dates(end)):
            return False
        first = end - (cfg.window - 1) * DAY
        for k in range(1, cfg.d_t + 1):
            day = first - k * DAY
            if not all(self.stats.has(day, loc, self.kind) for loc in self.locations):
                return False
        # later history days fall inside the window and must be present too
        if cfg.d_t:
            for d in self.window_dates(end)[:-1]:
                if not all(self.stats.has(d, loc, self.kind) for loc in self.locations):
                    return False
        return True

    def has_target(self, date):
        return all(self.stats.has(date, loc, self.kind) for loc in self.locations)

    def window_ends(self):
        """All dates that can end a complete window, ascending."""
        if self._ends is None:
            self._ends = [d for d in sorted(self.snapshots) if self.has_window(d)]
        return list(self._ends)

    def training_ends(self, cutoff, horizon):
        """Window ends whose labels are known at ``cutoff``."""
        return [e for e in self.window_ends() if e + horizon * DAY <= cutoff and self.has_target(e + horizon * DAY)]

    def _graph_features(self, end):
        if end not in self._cache:
            cfg = self.config
            if not self.has_window(end):
                raise CoverageError(f"incomplete window or history ending {end.isoformat()}")
            g = aggregate_window(
                [self.snapshots[d] for d in self.window_dates(end)],
                self_loops=cfg.self_loops,
                merge_eps=cfg.merge_eps,
                merge_min_pts=cfg.merge_min_pts,
                mobility_threshold=cfg.mobility_threshold,
                drop_entity_entity_edges=cfg.drop_entity_entity_edges,
                drop_location_entity_edges=cfg.drop_location_entity_edges,
            )
            f = build_features(g, self.stats, cfg.d_t, d_e=cfg.d_e, kind=self.kind)
            L, T = g.num_locations, g.T
            hist = f.rows[g.location_rows.reshape(-1), cfg.d_e :].reshape(L, T, cfg.d_t)
            self._cache[end] = (g, f, hist)
        return self._cache[end]

    def example(self, end, horizon):
        g, f, hist = self._graph_features(end)
        target_date = end + horizon * DAY
        target = np.array(
            [
                self.stats.value(target_date, loc, self.kind) if self.stats.has(target_date, loc, self.kind) else np.nan
                for loc in self.locations
            ]
        )
        return Example(end, target_date, g, f, hist, target)

    def normalizer(self, cutoff):
        """Per-location mean/std of the target series up to ``cutoff``."""
        if not self.config.normalize:
            return Normalizer.identity(len(self.locations))
        means, stds = [], []
        for loc in self.locations:
            _, vals = self.stats.series(loc, self.kind, end=cutoff)
            if not vals:
                raise CoverageError(f"no statistics for {loc} up to {cutoff.isoformat()}")
            arr = np.asarray(vals)
            means.append(arr.mean())
            stds.append(max(arr.std(), 1.0))
        return Normalizer(means, stds)
