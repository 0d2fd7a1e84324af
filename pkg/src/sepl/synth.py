"""Synthetic scenes, degraded pseudo-labels, mask decompositions and a naive oracle.

Scenes are built from rectangles and ellipses on a small canvas. Pseudo-labels
are derived from the ground truth by cropping (partial activation) and
dilation (false activation); mask lists mimic an automatic mask generator with
whole objects, parts, background distractors and optional enveloping masks.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import (
    Assignment,
    FlattenPolicy,
    Rule,
    SelectedMask,
    SelectionOutcome,
    SeplConfig,
)
from .errors import DimensionMismatch, InfeasibleSpec
from .io import (
    DatasetManifest,
    ManifestEntry,
    MaskRecord,
    write_label_png,
    write_manifest,
    write_mask_records,
)
from .masks import BACKGROUND, IGNORE, BinaryMask, LabelMap

SHAPES = ("rectangle", "ellipse")
PRESETS = ("clean", "partial", "false", "wrong_object", "missing_mask", "envelope")
# presets that satisfy the exact-recovery constructions
RECOVERY_PRESETS = ("clean", "partial", "false")


@dataclass
class ObjectSpec:
    class_id: int  # 0 marks an unlabeled decoy object (background in the ground truth)
    shape: str = "rectangle"
    placement: Optional[tuple[int, int, int, int]] = None  # top, left, height, width


@dataclass
class Degradation:
    erode_fraction: float = 0.0
    spill_fraction: float = 0.0
    decoy_activation: float = 0.0


@dataclass
class MaskPlan:
    parts_per_object: int = 0
    background_distractors: int = 0
    include_envelope: bool = False
    include_exact: bool = True


@dataclass
class SceneSpec:
    seed: int
    canvas: tuple[int, int] = (64, 64)
    objects: list[ObjectSpec] = field(default_factory=list)
    degradation: Degradation = field(default_factory=Degradation)
    mask_plan: MaskPlan = field(default_factory=MaskPlan)
    num_classes: int = 5
    size_range: tuple[int, int] = (10, 22)

    def validate(self) -> None:
        h, w = self.canvas
        if h <= 0 or w <= 0:
            raise InfeasibleSpec(f"bad canvas {self.canvas}")
        d = self.degradation
        for name in ("erode_fraction", "spill_fraction", "decoy_activation"):
            v = getattr(d, name)
            if not 0.0 <= v < 1.0:
                raise InfeasibleSpec(f"{name}={v} outside [0, 1)")
        for obj in self.objects:
            if obj.shape not in SHAPES:
                raise InfeasibleSpec(f"unknown shape {obj.shape!r}")
            if not 0 <= obj.class_id <= self.num_classes:
                raise InfeasibleSpec(f"class {obj.class_id} outside 0..{self.num_classes}")
            if obj.placement is not None:
                top, left, oh, ow = obj.placement
                if oh <= 0 or ow <= 0 or top < 0 or left < 0 or top + oh > h or left + ow > w:
                    raise InfeasibleSpec(f"placement {obj.placement} outside canvas {self.canvas}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SceneSpec":
        obj = dict(obj)
        objects = [
            ObjectSpec(o["class_id"], o.get("shape", "rectangle"), tuple(o["placement"]) if o.get("placement") else None)
            for o in obj.pop("objects", [])
        ]
        deg = Degradation(**obj.pop("degradation", {}))
        plan = MaskPlan(**obj.pop("mask_plan", {}))
        for key in ("canvas", "size_range"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(objects=objects, degradation=deg, mask_plan=plan, **obj)


class Scene(NamedTuple):
    gt: LabelMap
    pseudo: LabelMap
    masks: list[BinaryMask]


# generation --------------------------------------------------------------------------


def _shape_raster(shape: str, box: tuple[int, int, int, int], canvas: tuple[int, int]) -> np.ndarray:
    top, left, h, w = box
    out = np.zeros(canvas, dtype=bool)
    if shape == "rectangle":
        out[top : top + h, left : left + w] = True
    else:
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = (h - 1) / 2, (w - 1) / 2
        ry, rx = h / 2, w / 2
        out[top : top + h, left : left + w] = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return out


def _spill_radius(spill: float, h: int, w: int) -> int:
    return math.ceil(spill * min(h, w) / 2)


def _place(spec: SceneSpec, rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
    ch, cw = spec.canvas
    lo, hi = spec.size_range
    gap = 2 * _spill_radius(spec.degradation.spill_fraction, hi, hi) + 2
    boxes: list[tuple[int, int, int, int]] = []

    def clear(box) -> bool:
        t, l, h, w = box
        for t2, l2, h2, w2 in boxes:
            if t < t2 + h2 + gap and t2 < t + h + gap and l < l2 + w2 + gap and l2 < l + w + gap:
                return False
        return True

    for obj in spec.objects:
        if obj.placement is not None:
            box = tuple(obj.placement)
            if not clear(box):
                raise InfeasibleSpec(f"placement {box} collides with another object")
            boxes.append(box)
            continue
        for _ in range(500):
            h = int(rng.integers(lo, hi + 1))
            w = int(rng.integers(lo, hi + 1))
            h, w = min(h, ch), min(w, cw)
            box = (int(rng.integers(0, ch - h + 1)), int(rng.integers(0, cw - w + 1)), h, w)
            if clear(box):
                boxes.append(box)
                break
        else:
            raise InfeasibleSpec(f"could not place {len(spec.objects)} objects on {spec.canvas}")
    return boxes


def _erode(obj: np.ndarray, box, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if fraction == 0:
        return obj.copy()
    top, left, h, w = box
    sh, sw = max(1, math.ceil((1 - fraction) * h)), max(1, math.ceil((1 - fraction) * w))
    window = np.zeros_like(obj)
    oy, ox = int(rng.integers(0, h - sh + 1)), int(rng.integers(0, w - sw + 1))
    window[top + oy : top + oy + sh, left + ox : left + ox + sw] = True
    region = obj & window
    if not region.any():
        window[:] = False
        cy, cx = top + (h - sh) // 2, left + (w - sw) // 2
        window[cy : cy + sh, cx : cx + sw] = True
        region = obj & window
    if not region.any():
        region = np.zeros_like(obj)
        region[top + h // 2, left + w // 2] = True
    return region


def _dilate(region: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return region
    return ndimage.binary_dilation(region, structure=np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool))


def _parts(obj: np.ndarray, box, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    if n <= 1:
        return []
    top, left, h, w = box
    vertical = bool(rng.integers(0, 2))
    length = w if vertical else h
    cuts = np.linspace(0, length, n + 1).round().astype(int)
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        strip = np.zeros_like(obj)
        if vertical:
            strip[top : top + h, left + a : left + b] = True
        else:
            strip[top + a : top + b, left : left + w] = True
        part = obj & strip
        if part.any():
            out.append(part)
    return out


def _envelope(box, canvas) -> np.ndarray:
    top, left, h, w = box
    ch, cw = canvas
    out = np.zeros(canvas, dtype=bool)
    out[max(0, top - h // 2) : min(ch, top + h + h // 2), max(0, left - w // 2) : min(cw, left + w + w // 2)] = True
    return out


def _distractor_ok(d: np.ndarray, pseudo: np.ndarray, cfg: SeplConfig) -> bool:
    area = int(d.sum())
    if area == 0:
        return False
    fg = (pseudo != BACKGROUND) & (pseudo != IGNORE)
    if (d & fg).sum() / area > cfg.t1:
        return False
    for k in np.unique(pseudo[fg]):
        sl = pseudo == k
        inter = int((d & sl).sum())
        if inter / area > cfg.t1 or inter / int(sl.sum()) > cfg.t2:
            return False
    return True


def generate(spec: SceneSpec, cfg: SeplConfig = SeplConfig()) -> Scene:
    """Build (gt, pseudo, masks) for a scene; fully determined by ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    canvas = tuple(spec.canvas)
    boxes = _place(spec, rng)
    deg, plan = spec.degradation, spec.mask_plan

    gt = np.zeros(canvas, dtype=np.uint8)
    pseudo = np.zeros(canvas, dtype=np.uint8)
    rasters = [_shape_raster(o.shape, b, canvas) for o, b in zip(spec.objects, boxes)]
    labeled = [i for i, o in enumerate(spec.objects) if o.class_id > 0]
    decoys = [i for i, o in enumerate(spec.objects) if o.class_id == 0]
    for i in labeled:
        gt[rasters[i]] = spec.objects[i].class_id

    for i in labeled:
        top, left, h, w = boxes[i]
        region = _erode(rasters[i], boxes[i], deg.erode_fraction, rng)
        region = _dilate(region, _spill_radius(deg.spill_fraction, h, w))
        if deg.decoy_activation > 0 and decoys:
            j = decoys[int(rng.integers(0, len(decoys)))]
            region = region | _erode(rasters[j], boxes[j], 1 - deg.decoy_activation, rng)
        pseudo[region] = spec.objects[i].class_id

    masks: list[np.ndarray] = []
    for i, (obj, box) in enumerate(zip(rasters, boxes)):
        if plan.include_exact:
            masks.append(obj)
        masks.extend(_parts(obj, box, plan.parts_per_object, rng))
        if plan.include_envelope and i in labeled:
            masks.append(_envelope(box, canvas))

    ch, cw = canvas
    for _ in range(plan.background_distractors):
        for _attempt in range(50):
            h = int(rng.integers(3, max(4, ch // 3)))
            w = int(rng.integers(3, max(4, cw // 3)))
            h, w = min(h, ch), min(w, cw)
            d = np.zeros(canvas, dtype=bool)
            t, l = int(rng.integers(0, ch - h + 1)), int(rng.integers(0, cw - w + 1))
            d[t : t + h, l : l + w] = True
            if _distractor_ok(d, pseudo, cfg):
                masks.append(d)
                break

    k = spec.num_classes
    return Scene(
        LabelMap(gt, k),
        LabelMap(pseudo, k),
        [BinaryMask.from_array(m) for m in masks if m.any()],
    )


def preset_spec(
    name: str,
    seed: int,
    canvas: tuple[int, int] = (64, 64),
    num_classes: int = 5,
    max_objects: int = 3,
) -> SceneSpec:
    """A randomized scene spec of one of the named families in ``PRESETS``."""
    if name not in PRESETS:
        raise InfeasibleSpec(f"unknown preset {name!r}; choose from {PRESETS}")
    rng = np.random.default_rng([seed, PRESETS.index(name)])
    n = int(rng.integers(1, min(max_objects, num_classes) + 1))
    classes = sorted(rng.choice(np.arange(1, num_classes + 1), size=n, replace=False).tolist())
    objects = [ObjectSpec(int(c), SHAPES[int(rng.integers(0, 2))]) for c in classes]
    deg = Degradation()
    plan = MaskPlan(parts_per_object=int(rng.integers(0, 4)), background_distractors=int(rng.integers(0, 5)))
    if name == "partial":
        deg.erode_fraction = float(rng.uniform(0.3, 0.7))
    elif name == "false":
        deg.spill_fraction = float(rng.uniform(0.1, 0.4))
    elif name == "wrong_object":
        objects += [ObjectSpec(0, SHAPES[int(rng.integers(0, 2))]) for _ in range(n)]
        deg.erode_fraction = 0.5
        deg.decoy_activation = 0.7
    elif name == "missing_mask":
        deg.erode_fraction = float(rng.uniform(0.3, 0.7))
        plan.include_exact = False
        plan.parts_per_object = 4
    elif name == "envelope":
        deg.erode_fraction = float(rng.uniform(0.3, 0.7))
        plan.include_envelope = True
    size_hi = max(4, min(canvas) // 3)
    return SceneSpec(
        seed=seed,
        canvas=canvas,
        objects=objects,
        degradation=deg,
        mask_plan=plan,
        num_classes=num_classes,
        size_range=(max(3, size_hi // 2), size_hi),
    )


def random_instance(
    rng: np.random.Generator,
    shape: tuple[int, int] = (64, 64),
    max_classes: int = 5,
    max_masks: int = 40,
) -> tuple[LabelMap, list[BinaryMask]]:
    """Unstructured pseudo-label/mask pair for oracle-equivalence testing."""
    h, w = shape
    k = int(rng.integers(1, max_classes + 1))
    label = np.zeros(shape, dtype=np.uint8)
    for _ in range(int(rng.integers(0, 7))):
        box = _random_box(rng, shape)
        label[_shape_raster(SHAPES[int(rng.integers(0, 2))], box, shape)] = int(rng.integers(1, k + 1))
    if rng.random() < 0.3:
        t, l, bh, bw = _random_box(rng, shape)
        label[t : t + bh, l : l + bw] = IGNORE
    slices = [label == c for c in range(1, k + 1) if (label == c).any()]

    masks = []
    for _ in range(int(rng.integers(0, max_masks + 1))):
        kind = int(rng.integers(0, 7))
        if kind in (0, 1):
            m = _shape_raster(SHAPES[kind], _random_box(rng, shape), shape)
        elif kind == 2 and slices:
            m = slices[int(rng.integers(0, len(slices)))].copy()
        elif kind == 3 and slices:
            m = slices[int(rng.integers(0, len(slices)))] & _shape_raster("rectangle", _random_box(rng, shape), shape)
        elif kind == 4 and slices:
            m = slices[int(rng.integers(0, len(slices)))] | _shape_raster("rectangle", _random_box(rng, shape), shape)
        elif kind == 5 and slices:
            m = _boundary_mask(rng, slices[int(rng.integers(0, len(slices)))])
        else:
            m = rng.random(shape) < rng.uniform(0.01, 0.3)
        if m.any():
            masks.append(BinaryMask.from_array(m))
        if masks and rng.random() < 0.05:
            masks.append(masks[int(rng.integers(0, len(masks)))])
    return LabelMap(label, k), masks


def _random_box(rng: np.random.Generator, shape) -> tuple[int, int, int, int]:
    h, w = shape
    bh, bw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
    return int(rng.integers(0, h - bh + 1)), int(rng.integers(0, w - bw + 1)), bh, bw


def _boundary_mask(rng: np.random.Generator, sl: np.ndarray) -> np.ndarray:
    """A mask with exactly as many pixels inside the slice as outside (o_s == 0.5)."""
    inside = np.flatnonzero(sl.ravel())
    outside = np.flatnonzero(~sl.ravel())
    n = min(inside.size, outside.size, int(rng.integers(1, 200)))
    m = np.zeros(sl.size, dtype=bool)
    if n == 0:
        return m.reshape(sl.shape)
    m[rng.choice(inside, n, replace=False)] = True
    m[rng.choice(outside, n, replace=False)] = True
    return m.reshape(sl.shape)


# reference implementation ------------------------------------------------------------


def reference_sepl(
    pseudo: LabelMap,
    masks: Sequence[BinaryMask],
    cfg: SeplConfig = SeplConfig(),
) -> SelectionOutcome:
    """Plain dense-array transcription of the per-image procedure, used as a test oracle."""
    P = np.asarray(pseudo.data)
    H, W = P.shape
    K = pseudo.class_count
    S_all = [m.to_array() for m in masks]
    for s in S_all:
        if s.shape != (H, W):
            raise DimensionMismatch(f"mask {s.shape} vs label map {(H, W)}")

    def first_pixel(s):
        col_major = s.T.ravel()
        hits = np.nonzero(col_major)[0]
        return int(hits[0]) if len(hits) else H * W

    order = sorted(
        range(len(S_all)),
        key=lambda i: (-int(S_all[i].sum()), first_pixel(S_all[i]), tuple(S_all[i].T.ravel().tolist())),
    )
    S = [S_all[i] for i in order]
    P_k = {k: P == k for k in range(1, K + 1)}

    A = {k: [] for k in range(1, K + 1)}
    discarded = []
    for l in range(len(S)):
        best_k, best = None, 0
        for k in range(1, K + 1):
            inter = int(np.logical_and(S[l], P_k[k]).sum())
            if inter > best:
                best_k, best = k, inter
        if best_k is None:
            discarded.append(l)
        else:
            A[best_k].append((l, best))

    selected: dict[int, list[SelectedMask]] = {}
    enhanced: dict[int, np.ndarray] = {}
    for k in range(1, K + 1):
        if not P_k[k].any():
            enhanced[k] = np.zeros((H, W), dtype=bool)
            continue
        tmp, entries = [], []
        for l, _ in A[k]:
            inter = int(np.logical_and(S[l], P_k[k]).sum())
            o_s = inter / int(S[l].sum())
            o_p = inter / int(P_k[k].sum())
            if o_s > cfg.t1 or o_p > cfg.t2:
                tmp.append(S[l])
                if o_s > cfg.t1 and o_p > cfg.t2:
                    rule = Rule.BOTH
                elif o_s > cfg.t1:
                    rule = Rule.BY_OS
                else:
                    rule = Rule.BY_OP
                entries.append(SelectedMask(l, inter, o_s, o_p, rule))
        if not tmp:
            tmp.append(P_k[k])
            entries.append(SelectedMask(None, int(P_k[k].sum()), 1.0, 1.0, Rule.FALLBACK))
        merged = np.zeros((H, W), dtype=bool)
        for t in tmp:
            merged = np.logical_or(merged, t)
        enhanced[k] = merged
        selected[k] = entries

    if cfg.flatten_policy is FlattenPolicy.SMALLER_REGION_LAST:
        paint = sorted(enhanced, key=lambda k: (-int(enhanced[k].sum()), k))
    else:
        paint = sorted(enhanced)
    flat = np.where(P == IGNORE, IGNORE, BACKGROUND).astype(np.uint8)
    for k in paint:
        flat[enhanced[k]] = k

    return SelectionOutcome(
        masks=[masks[i] for i in order],
        assignment=Assignment(K, A, discarded),
        selected=selected,
        enhanced_slices={k: BinaryMask.from_array(v) for k, v in enhanced.items()},
        flat=LabelMap(flat, pseudo.num_classes),
        original_slices={k: BinaryMask.from_array(v) for k, v in P_k.items()},
    )


# corpus dump -------------------------------------------------------------------------


def write_corpus(scenes: Sequence[tuple[str, Scene]], out_dir, num_classes: int) -> Path:
    """Write gt/pseudo PNGs, mask-record files and a manifest; returns the manifest path."""
    out = Path(out_dir)
    entries = []
    for image_id, scene in scenes:
        gt_path = out / "gt" / f"{image_id}.png"
        pseudo_path = out / "pseudo" / f"{image_id}.png"
        mask_path = out / "masks" / f"{image_id}.json"
        write_label_png(scene.gt, gt_path)
        write_label_png(scene.pseudo, pseudo_path)
        write_mask_records([MaskRecord.from_mask(m, 0.95, 0.97) for m in scene.masks], mask_path)
        entries.append(ManifestEntry(image_id, pseudo_path, mask_path, gt_path))
    manifest_path = out / "manifest.jsonl"
    write_manifest(DatasetManifest(entries, num_classes), manifest_path)
    return manifest_path
