"""Acoustic screening of cough recordings.

Pipeline: WAV decoding and resampling, activity trimming and centre
cropping, log-Mel spectrograms, a numpy ResNet-50 trained with Adam,
augmentation, stratified k-fold evaluation and ROC analysis.
"""

from . import (audio_io, augment, dataset, errors, features, metrics, nncore, preprocess,
               resnet, trainer)
from .audio_io import AudioClip, load_audio
from .features import FeatureConfig, extract
from .preprocess import preprocess as preprocess_clip
from .resnet import ResNetConfig
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = ["audio_io", "augment", "dataset", "errors", "features", "metrics", "nncore",
           "preprocess", "resnet", "trainer", "AudioClip", "load_audio", "FeatureConfig",
           "extract", "preprocess_clip", "ResNetConfig", "TrainConfig", "__version__"]
