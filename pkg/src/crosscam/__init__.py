"""Cross-camera pseudo-label mining on a synthetic multi-camera scene."""
from .association import AssociationConfig, TrackletPair, TrainingSets, build_training_sets
from .geometry import CameraModel, EpipolarBand, FundamentalMatrix, bbox_epipolar_band, fundamental_matrix
from .labels import PseudoLabel, Tier, split_labels
from .pipeline import PipelineConfig, run_pipeline
from .simulator import SceneConfig, gen_scene, render_detections
from .trainer import LossSchedule, ToyModelParams, TrainConfig, train_two_phase

__version__ = "0.1.0"
