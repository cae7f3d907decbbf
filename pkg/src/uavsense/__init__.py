"""Multi-station LFMCW radar sensing of low, slow, small UAVs.

Scene geometry, IF-cube synthesis, CA-CFAR/MUSIC estimation, micro-Doppler
recognition, grid fusion, CRLB analysis and Q-learning station selection.
"""

__version__ = "0.1.0"
