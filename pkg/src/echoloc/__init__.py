"""Two-microphone echo-aware sound source localization.

Simulates close-surface stereo recordings with an image-source room model,
regresses the echo-time triple (TDOA, iTDOA, TDOE) from interaural features,
and aggregates those times over the virtual four-microphone array (real
microphones plus their mirror images) to recover azimuth and elevation.
"""

__version__ = "0.1.0"
