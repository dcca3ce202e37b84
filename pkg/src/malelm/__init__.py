"""Extreme Learning Machines for classifying malware rendered as grayscale images."""

from .dataset import ClassCatalog, Dataset, Featurization, class_weights, load_corpus, stratified_split
from .elm import ElmConfig, ElmModel, HiddenLayer, init_hidden, predict, predict_scores, train
from .ensemble import Ensemble, evaluate_members, train_ensemble, vote
from .imaging import GrayImage, bytes_to_image, flatten_2d, resample_1d, resize, width_for_size
from .metrics import EvaluationReport, emit_report, evaluate

__version__ = "0.1.0"
