"""Multi-instance object detection by aggregating keypoint votes."""
from .aggregation import DetectionConfig, Occurrence, Pose, detect
from .cascade import CascadeConfig, run_cascade
from .config import RunConfig, load_config
from .features import FeatureSet, GrayImage, load_feature_set, load_pgm, match
from .pipeline import ProcessResult, run_process
from .vote_image import Proposition, VoteImage, find_propositions, rasterize
from .votespace import Correspondence, Keypoint, PatternMeta, Vote, VoteSpace, build_vote_space

__version__ = "0.1.0"

__all__ = [
    "CascadeConfig", "Correspondence", "DetectionConfig", "FeatureSet", "GrayImage", "Keypoint",
    "Occurrence", "PatternMeta", "Pose", "ProcessResult", "Proposition", "RunConfig", "Vote",
    "VoteImage", "VoteSpace", "build_vote_space", "detect", "find_propositions",
    "load_config", "load_feature_set", "load_pgm", "match", "rasterize", "run_cascade",
    "run_process",
]
