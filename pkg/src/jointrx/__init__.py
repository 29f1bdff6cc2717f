"""Joint multi-AP uplink OFDM decoding: a cross-attention transformer receiver,
classical LS/LMMSE/perfect-CSI baselines and a Monte Carlo BER harness."""

__version__ = "0.1.0"
