"""Partial video copy detection and segment alignment from frame features.

The pipeline: frame-feature sequences are encoded and compared into a
spatial similarity matrix; a small CNN predicts a temporal-similarity
mask and a step-direction map from it; a walker turns those into scored
alignment paths and copied-segment pairs. Training is fully
self-supervised on synthetically transformed sequence pairs.
"""

from .alignment import (AlignConfig, AlignmentPath, Detection, detect,
                        hough_voting_align, partial_align, score_path,
                        segments_from_path, shorter_span, soft_weight,
                        weight_filter)
from .autograd import Parameter, Tensor, grad_check, sgd_step
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, build_config, parse_config_file
from .datagen import (MatchSet, StepTargets, TracedSequence, TrainingPair,
                      feature_perturb, make_negative_pair, make_training_pair,
                      mask_label, match_set_from_origins, step_label,
                      synth_base_sequence, temporal_transform)
from .encoder import (SequenceEncoderParams, encode_sequence,
                      spatial_similarity)
from .errors import (ConfigError, CopyAlignError, DataError,
                     DegenerateInputError, DimensionError, GenerationError,
                     NumericError, OptimizerError)
from .evaluation import (DetectionRecord, EvalReport, GroundTruthPair,
                         match_detection, precision_recall_sweep, segment_iou)
from .features import (FeatureSequence, SimilarityMatrix, l2_normalize,
                       load_features, read_feature_csv, read_feature_file,
                       write_feature_file)
from .model import (MaskMap, MaskStepParams, StepMap, TrainSchedule,
                    mask_loss, model_forward, predict_maps, step_loss,
                    total_loss, train)

__version__ = "0.1.0"
