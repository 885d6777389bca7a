from .models import BackboneSpec, BimodalCNN, UnimodalCNN, build_bimodal, build_unimodal, pooling_plan
from .training import (
    MODALITIES,
    EarlyStopping,
    FitConfig,
    SearchResult,
    SearchSpace,
    TrainedClassifier,
    VolumeData,
    accuracy,
    fit,
    hyperparameter_search,
    predict_proba,
)

__all__ = [
    "MODALITIES", "BackboneSpec", "BimodalCNN", "EarlyStopping", "FitConfig", "SearchResult",
    "SearchSpace", "TrainedClassifier", "UnimodalCNN", "VolumeData", "accuracy", "build_bimodal",
    "build_unimodal", "fit", "hyperparameter_search", "pooling_plan", "predict_proba",
]
