"""Pseudo-label refinement with class-agnostic instance masks."""
from .core import (
    Assignment,
    FlattenPolicy,
    Rule,
    SelectedMask,
    SelectionOutcome,
    SeplConfig,
    assign_masks,
    cam_to_label_map,
    canonicalize,
    enhance_image,
    flatten,
    select_masks,
)
from .masks import BinaryMask, ClassSlice, LabelMap, intersect_count, slice_of, union_merge
from .metrics import ConfusionMatrix, MetricsReport, accumulate, merge, report
from .rle import RleMask, decode_rle, encode_rle

__version__ = "0.1.0"
