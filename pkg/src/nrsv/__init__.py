"""Noise-robust speaker verification workbench.

Synthetic corpus generation, MFCC/gammatone signal analysis, STSA-MMSE
and mask-based enhancement baselines, an adversarial bottleneck feature
extractor, a GMM-UBM verification backend, and EER evaluation, wired
into one reproducible experiment pipeline.
"""

__version__ = "0.1.0"

from .audio import SAMPLE_RATE, Waveform, read_wav, write_wav

__all__ = ["SAMPLE_RATE", "Waveform", "read_wav", "write_wav", "__version__"]
