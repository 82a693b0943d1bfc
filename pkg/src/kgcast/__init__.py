"""Event-aware spatio-temporal forecasting of daily case counts.

Daily knowledge-graph snapshots (entities, relations, location mentions,
mobility) are aggregated into windowed graphs, propagated with multi-head
graph attention, summarized per location by an attentive bidirectional GRU
and mapped to a forecast by a small feed-forward head.
"""

__version__ = "0.1.0"
