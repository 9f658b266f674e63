"""Contrastive change-point detection for time series."""

from .contrastive import CapacityError, cosine_similarity, info_nce, sample_batch
from .data import LabeledSeries, SynthSpec, load_csv, synth_generate, znormalize
from .detector import DetectorConfig, detect, find_peaks, similarity_profile
from .encoder import EncoderConfig, EncoderParams, encode, init, receptive_field
from .evaluation import EvalReport, match_and_score, report_suite
from .trainer import TrainConfig, TrainHistory, train

__version__ = "0.1.0"
