"""Depth structure maps, a toy boundary-enhanced SAM2-style segmenter, and
salient-object-detection metrics."""

from .dataio import Checkpoint, Image, load_checkpoint, read_image, save_checkpoint, write_image
from .loss import boundary_weights, structure_loss, total_loss
from .metrics import (MetricReport, e_measure_mean, evaluate_directory, f_beta, f_max,
                      f_weighted, mae, s_measure)
from .net import BEDSAM, NetConfig, expand_patch_embed, predict
from .structmap import (attach_channel, center_depth, cumulative_structure_map, invert_depth,
                        sobel_soft_edges)

__version__ = "0.1.0"
