"""Multi-modal pan-cancer survival modelling on synthetic cohorts.

A from-scratch numpy stack: reverse-mode autodiff tensor core, data-bag
formation, modality encoders, entropic-OT cross-modal fusion, a guided
soft mixture-of-experts hazard head, survival losses and statistics, a
planted-signal cohort generator, and the joint training loop.
"""

from . import (attribution, autodiff, bags, encoders, fusion, model, moe,
               optim, survival, synthetic, training)

__all__ = ["attribution", "autodiff", "bags", "encoders", "fusion", "model",
           "moe", "optim", "survival", "synthetic", "training"]

__version__ = "0.1.0"
