"""Traffic steering and radio scheduling simulator for a multi-RU open RAN.

Modules: ``model`` (numerologies, topology, channels), ``traffic`` (demand and
queues), ``rates`` (rates and latency), ``predictor`` (numpy LSTM),
``heuristics`` (bandwidth and flow split), ``convex`` (barrier solver),
``scheduler`` (per-TTI SCA), ``harness`` and ``cli``.
"""
__version__ = "0.1.0"
