"""emoalign: audio-text contrastive alignment with soundscape prompt tuning.

A self-contained desk-scale pipeline: synthetic emotional-audio corpus,
log-mel features, small convolutional audio encoder and transformer text
encoder trained with a symmetric contrastive loss, per-soundscape acoustic
prompt tuning, and an angular-margin cross-modal classifier, all on a
from-scratch float64 autodiff core.
"""

__version__ = "0.1.0"
