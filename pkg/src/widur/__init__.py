"""WiFi CSI activity recognition with CNN transfer learning and hybrid
SVM / random-forest heads, plus a synthetic CSI generator."""
__version__ = "0.1.0"

from .classical import CartForestClassifier, SmoSvmClassifier
from .csi_model import LABELS, CsiTrace, LabeledInterval
from .features import TimeFrequencyFeaturizer, assemble_feature_vector
from .nn import CnnClassifier
from .preprocess import PC1Transformer
from .segment import ActivitySegmenter
from .transfer import HybridModel, TransferHybridClassifier

__all__ = [
    "LABELS", "CsiTrace", "LabeledInterval", "PC1Transformer",
    "ActivitySegmenter", "TimeFrequencyFeaturizer", "assemble_feature_vector",
    "CnnClassifier", "SmoSvmClassifier", "CartForestClassifier",
    "HybridModel", "TransferHybridClassifier",
]
