"""Self-adversarial variational autoencoder for anomaly detection on tabular data."""

from .data import Dataset, Scaler, Split, SplitSpec, load_csv, load_dataset, split
from .metrics import EvalReport, auc, average_precision, confusion_at, evaluate
from .model import VARIANTS, AdvaeModel, GaussianParams, Hyperparams, load_model, save_model
from .nn import Adam, DenseNet, RngStream
from .score import NOISE_KINDS, anomaly_scores, latent_probe, wasserstein_1d
from .threshold import classify, fit_kde, solve_threshold
from .train import TrainConfig, TrainingDivergedError, fit

__version__ = "0.1.0"
