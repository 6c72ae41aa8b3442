"""Log-polar Hough voting for bottom-up object detection."""

from .decoder import Detection, ScaleResult, decode_boxes, detect, extract_peaks, merge_multiscale, rescale_to_original, soft_nms
from .errors import ConfigError, HoughVoteError, IntegrityError, ShapeError, TensorFormatError, ValidationError
from .votefield import OUTSIDE, VoteField, VoteFieldConfig, build_field, mask_rings, region_of
from .voting import aggregate_adjoint, aggregate_gather, aggregate_multiclass, aggregate_scatter

__version__ = "0.1.0"
