"""Direction-aware mask-based MVDR beamforming, CTC recognition, and
run-time semi-supervised joint adaptation on simulated multichannel
conversational scenes."""

__version__ = "0.1.0"
