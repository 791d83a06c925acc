"""Low-latency streaming multichannel speech enhancement.

Two compact recurrent enhancers wrapped around a per-frequency Wiener
spatial filter, with trainable analysis/synthesis transforms, plus room
simulation, objective metrics, and a weight-container format.
"""

from nwfbeam.framing import FrameSpec, FrameTensor, MultichannelSignal

__all__ = ["FrameSpec", "FrameTensor", "MultichannelSignal"]

__version__ = "0.1.0"
