"""Search-based testing workbench for camera/radar fusion in driving scenarios.

Core pieces: a deterministic longitudinal micro-simulator with noisy sensor
models, pluggable fusion methods, an evolutionary fuzzer that hunts for
fusion-induced collisions, and a counterfactual-replay analyzer that
attributes collisions to the fusion method and counts distinct errors.
"""

__version__ = "0.1.0"
