"""Mask assignment, selection and merging of class-agnostic masks into pseudo-labels."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySlice,
    InvalidScores,
    ShapeMismatch,
    ThresholdOutOfRange,
)
from .masks import (
    BACKGROUND,
    IGNORE,
    BinaryMask,
    ClassSlice,
    LabelMap,
    intersect_count,
    slice_of,
    union_merge,
)


class FlattenPolicy(str, enum.Enum):
    SMALLER_REGION_LAST = "smaller_region_last"
    HIGHER_CLASS_LAST = "higher_class_last"


class Rule(str, enum.Enum):
    BY_OS = "by_os"
    BY_OP = "by_op"
    BOTH = "both"
    FALLBACK = "fallback_original"


@dataclass(frozen=True)
class SeplConfig:
    t1: float = 0.5
    t2: float = 0.85
    flatten_policy: FlattenPolicy = FlattenPolicy.SMALLER_REGION_LAST

    def __post_init__(self):
        for name in ("t1", "t2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ThresholdOutOfRange(f"{name}={value} outside [0, 1]")
        object.__setattr__(self, "flatten_policy", FlattenPolicy(self.flatten_policy))


@dataclass(frozen=True)
class Assignment:
    """Per-class candidate lists. Entries are (mask index, intersection) into the canonical mask list."""

    num_classes: int
    per_class: dict[int, list[tuple[int, int]]]
    discarded: list[int]

    def candidates(self, k: int) -> list[tuple[int, int]]:
        return self.per_class.get(k, [])

    def assigned_count(self) -> int:
        return sum(len(v) for v in self.per_class.values())


@dataclass(frozen=True)
class SelectedMask:
    index: Optional[int]  # None for the fallback entry
    intersection: int
    o_s: float
    o_p: float
    rule: Rule


@dataclass
class SelectionOutcome:
    masks: list[BinaryMask]
    assignment: Assignment
    selected: dict[int, list[SelectedMask]]
    enhanced_slices: dict[int, BinaryMask]
    flat: LabelMap
    original_slices: dict[int, BinaryMask] = field(default_factory=dict)

    def is_fallback(self, k: int) -> bool:
        sel = self.selected.get(k, [])
        return len(sel) == 1 and sel[0].rule is Rule.FALLBACK

    def to_record(self) -> dict:
        """JSON-ready audit record of the per-class decisions."""
        classes = []
        for k in sorted(self.selected):
            classes.append(
                {
                    "class": k,
                    "pseudo_area": self.original_slices[k].area if k in self.original_slices else None,
                    "candidates": len(self.assignment.candidates(k)),
                    "enhanced_area": self.enhanced_slices[k].area,
                    "selected": [
                        {
                            "mask": s.index,
                            "intersection": s.intersection,
                            "o_s": s.o_s,
                            "o_p": s.o_p,
                            "rule": s.rule.value,
                        }
                        for s in self.selected[k]
                    ],
                }
            )
        return {
            "num_masks": len(self.masks),
            "discarded": len(self.assignment.discarded),
            "classes": classes,
        }


def canonical_order(masks: Sequence[BinaryMask]) -> list[int]:
    """Indices sorting masks by descending area, then first set pixel (column-major), then raw bits."""
    return sorted(
        range(len(masks)),
        key=lambda i: (-masks[i].area, masks[i].first_index(), masks[i].words.tobytes()),
    )


def canonicalize(masks: Sequence[BinaryMask]) -> list[BinaryMask]:
    return [masks[i] for i in canonical_order(masks)]


def _check_dims(pseudo: LabelMap, masks: Sequence[BinaryMask]) -> None:
    for m in masks:
        if m.shape != pseudo.shape:
            raise DimensionMismatch(f"mask {m.shape} vs label map {pseudo.shape}")


def _class_slices(pseudo: LabelMap) -> dict[int, ClassSlice]:
    present = set(pseudo.classes_present())
    h, w = pseudo.shape
    return {
        k: slice_of(pseudo, k) if k in present else ClassSlice(k, BinaryMask.empty(h, w))
        for k in range(1, pseudo.class_count + 1)
    }


def assign_masks(
    pseudo: LabelMap,
    masks: Sequence[BinaryMask],
    slices: Optional[dict[int, ClassSlice]] = None,
) -> Assignment:
    """Send every mask to the class whose slice it overlaps most (lowest class id on ties).

    Masks are referenced by their position in ``masks``; callers wanting
    order-independent results pass a canonicalized list.
    """
    _check_dims(pseudo, masks)
    if slices is None:
        slices = _class_slices(pseudo)
    live = [k for k in sorted(slices) if slices[k].area > 0]
    per_class: dict[int, list[tuple[int, int]]] = {k: [] for k in sorted(slices)}
    discarded: list[int] = []
    for i, m in enumerate(masks):
        best_k, best = 0, 0
        for k in live:
            n = intersect_count(m, slices[k])
            if n > best:
                best_k, best = k, n
        if best == 0:
            discarded.append(i)
        else:
            per_class[best_k].append((i, best))
    return Assignment(pseudo.class_count, per_class, discarded)


def _rule(o_s: float, o_p: float, cfg: SeplConfig) -> Optional[Rule]:
    by_os, by_op = o_s > cfg.t1, o_p > cfg.t2
    if by_os and by_op:
        return Rule.BOTH
    if by_os:
        return Rule.BY_OS
    if by_op:
        return Rule.BY_OP
    return None


def select_masks(
    slice_: ClassSlice,
    candidates: Sequence[BinaryMask],
    cfg: SeplConfig = SeplConfig(),
    indices: Optional[Sequence[int]] = None,
) -> list[tuple[BinaryMask, SelectedMask]]:
    """Keep candidates with o_s > t1 or o_p > t2; fall back to the slice itself if none survive."""
    if slice_.area == 0:
        raise EmptySlice(f"class {slice_.class_id} has an empty pseudo-label slice")
    if indices is None:
        indices = range(len(candidates))
    kept = []
    for idx, mask in zip(indices, candidates):
        inter = intersect_count(mask, slice_)
        o_s = inter / mask.area if mask.area else 0.0
        o_p = inter / slice_.area
        rule = _rule(o_s, o_p, cfg)
        if rule is not None:
            kept.append((mask, SelectedMask(idx, inter, o_s, o_p, rule)))
    if not kept:
        return [(slice_.region, SelectedMask(None, slice_.area, 1.0, 1.0, Rule.FALLBACK))]
    return kept


def flatten(
    enhanced_slices: dict[int, BinaryMask],
    cfg: SeplConfig = SeplConfig(),
    shape: Optional[tuple[int, int]] = None,
    ignore: Optional[np.ndarray] = None,
    num_classes: Optional[int] = None,
) -> LabelMap:
    """Paint per-class regions into one raster.

    Under smaller_region_last, classes are painted by decreasing area (ties by
    ascending id) so the smallest region wins contested pixels. Pixels nobody
    claims become background, or stay ignore where ``ignore`` is set.
    """
    shapes = {m.shape for m in enhanced_slices.values()}
    if shape is not None:
        shapes.add(tuple(shape))
    if ignore is not None:
        shapes.add(ignore.shape)
    if len(shapes) > 1:
        raise DimensionMismatch(f"inconsistent raster shapes {sorted(shapes)}")
    if not shapes:
        raise DimensionMismatch("flatten needs at least one raster or an explicit shape")
    (h, w), = shapes
    if cfg.flatten_policy is FlattenPolicy.SMALLER_REGION_LAST:
        order = sorted(enhanced_slices, key=lambda k: (-enhanced_slices[k].area, k))
    else:
        order = sorted(enhanced_slices)
    flat = np.full(h * w, BACKGROUND, dtype=np.uint8)
    if ignore is not None:
        flat[np.asarray(ignore, dtype=bool).ravel(order="F")] = IGNORE
    for k in order:
        region = enhanced_slices[k]
        if region.area:
            flat[region.flat()] = k
    return LabelMap(flat.reshape((h, w), order="F"), num_classes)


def enhance_image(
    pseudo: LabelMap,
    masks: Sequence[BinaryMask],
    cfg: SeplConfig = SeplConfig(),
) -> SelectionOutcome:
    """Run the full assignment/selection/merge/flatten pipeline for one image."""
    _check_dims(pseudo, masks)
    masks = canonicalize(masks)
    slices = _class_slices(pseudo)
    assignment = assign_masks(pseudo, masks, slices)
    selected: dict[int, list[SelectedMask]] = {}
    enhanced: dict[int, BinaryMask] = {}
    for k, sl in slices.items():
        if sl.area == 0:
            enhanced[k] = sl.region
            continue
        cands = assignment.candidates(k)
        kept = select_masks(sl, [masks[i] for i, _ in cands], cfg, [i for i, _ in cands])
        selected[k] = [entry for _, entry in kept]
        enhanced[k] = union_merge([m for m, _ in kept])
    flat = flatten(enhanced, cfg, pseudo.shape, pseudo.data == IGNORE, pseudo.num_classes)
    return SelectionOutcome(
        masks=list(masks),
        assignment=assignment,
        selected=selected,
        enhanced_slices=enhanced,
        flat=flat,
        original_slices={k: s.region for k, s in slices.items()},
    )


def cam_to_label_map(
    scores: np.ndarray,
    bg_threshold: float,
    num_classes: Optional[int] = None,
) -> LabelMap:
    """Threshold a K x H x W activation stack into a label map (class ids start at 1)."""
    scores = np.asarray(scores)
    if scores.ndim != 3 or 0 in scores.shape:
        raise ShapeMismatch(f"expected a non-empty K x H x W stack, got {scores.shape}")
    if not 0.0 <= bg_threshold <= 1.0:
        raise ThresholdOutOfRange(f"background threshold {bg_threshold} outside [0, 1]")
    if not np.all((scores >= 0) & (scores <= 1)):
        raise InvalidScores("scores must lie in [0, 1]")
    k = scores.shape[0]
    if k >= IGNORE:
        raise ShapeMismatch(f"{k} classes cannot be stored in an 8-bit label map")
    best = scores.argmax(axis=0)
    peak = scores.max(axis=0)
    labels = np.where(peak >= bg_threshold, best + 1, BACKGROUND).astype(np.uint8)
    return LabelMap(labels, num_classes if num_classes is not None else k)
