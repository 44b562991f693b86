"""Pleasure-arousal-dominance embeddings of emotional speech learned from categorical labels."""

from .analysis import SynthSpec, emotion_stats, generate_corpus, separability_report
from .classifier import EmotionClassifier, MlpModel, TrainConfig, train_classifier
from .corpus import AudioClip, LabelRegistry, load_manifest, read_wav, resample, write_wav
from .exceptions import ConvergenceError, DataError, NotFittedError
from .features import FeatureExtractor, FrameConfig, pooled_features
from .predictor import EdPredictor, PadVector, control_ed, predict_ed
from .reduction import AnchorTable, AnchoredReduction, EmbeddingLayout, ReductionConfig

__version__ = "0.1.0"

__all__ = [
    "AnchorTable", "AnchoredReduction", "AudioClip", "ConvergenceError", "DataError",
    "EdPredictor", "EmbeddingLayout", "EmotionClassifier", "FeatureExtractor", "FrameConfig",
    "LabelRegistry", "MlpModel", "NotFittedError", "PadVector", "ReductionConfig", "SynthSpec",
    "TrainConfig", "control_ed", "emotion_stats", "generate_corpus", "load_manifest",
    "pooled_features", "predict_ed", "read_wav", "resample", "separability_report",
    "train_classifier", "write_wav",
]
