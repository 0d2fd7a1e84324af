"""Reading and writing label PNGs, mask-record files, manifests and score stacks."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .core import canonicalize
from .errors import (
    AreaMismatch,
    ClassOutOfRange,
    ManifestError,
    MalformedRecord,
    MalformedRle,
    ShapeMismatch,
    UnreadableFile,
    UnsupportedPngDepth,
)
from .masks import IGNORE, BinaryMask, LabelMap
from .rle import RleMask, decode_rle, decode_runs, encode_rle

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

PRED_IOU_MIN = 0.86
STABILITY_MIN = 0.92


def voc_palette() -> list[int]:
    """The standard PASCAL VOC colour map, flattened to 768 entries."""
    palette = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette += [r, g, b]
    return palette


_PALETTE = voc_palette()


# label maps --------------------------------------------------------------------------


def read_label_png(path: PathLike, num_classes: Optional[int] = None) -> LabelMap:
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode not in ("L", "P"):
                raise UnsupportedPngDepth(f"{path}: mode {mode!r} is not 8-bit single-channel or palette")
            data = np.array(img, dtype=np.uint8)
    except UnsupportedPngDepth:
        raise
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    try:
        return LabelMap(data, num_classes)
    except ClassOutOfRange as exc:
        raise ClassOutOfRange(f"{path}: {exc}") from None


def write_label_png(label_map: LabelMap, path: PathLike) -> None:
    """Write a palette PNG whose indices are the class ids."""
    img = Image.fromarray(np.ascontiguousarray(label_map.data), mode="P")
    img.putpalette(_PALETTE)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG", optimize=False)


# mask records ------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityFilter:
    enabled: bool = True
    pred_iou_min: float = PRED_IOU_MIN
    stability_min: float = STABILITY_MIN

    def accepts(self, record: "MaskRecord") -> bool:
        if not self.enabled:
            return True
        return record.predicted_iou >= self.pred_iou_min and record.stability_score >= self.stability_min


NO_FILTER = QualityFilter(enabled=False)


@dataclass
class MaskRecord:
    segmentation: RleMask
    area: int
    bbox: tuple[float, float, float, float]
    predicted_iou: float
    stability_score: float
    mask: Optional[BinaryMask] = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "segmentation": self.segmentation.to_json(),
            "area": self.area,
            "bbox": list(self.bbox),
            "predicted_iou": self.predicted_iou,
            "stability_score": self.stability_score,
        }

    @classmethod
    def from_mask(cls, mask: BinaryMask, predicted_iou: float = 1.0, stability_score: float = 1.0) -> "MaskRecord":
        return cls(encode_rle(mask), mask.area, mask_bbox(mask), predicted_iou, stability_score, mask)


def mask_bbox(mask: BinaryMask) -> tuple[int, int, int, int]:
    """(x, y, w, h) of the set pixels; zeros for an empty mask."""
    arr = mask.to_array()
    rows = np.flatnonzero(arr.any(axis=1))
    cols = np.flatnonzero(arr.any(axis=0))
    if rows.size == 0:
        return (0, 0, 0, 0)
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def _decode_segmentation(seg) -> tuple[RleMask, BinaryMask]:
    if isinstance(seg, list):
        raise MalformedRecord("polygon segmentation is not supported (RLE only)")
    if not isinstance(seg, dict):
        raise MalformedRecord(f"segmentation must be an RLE object, got {type(seg).__name__}")
    counts = seg.get("counts")
    if isinstance(counts, list):
        try:
            h, w = (int(v) for v in seg["size"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRle(f"bad RLE size: {exc}") from None
        mask = decode_runs([int(c) for c in counts], h, w)
        return encode_rle(mask), mask
    rle = RleMask.from_json(seg)
    return rle, decode_rle(rle)


def parse_record(obj: dict) -> MaskRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord(f"record must be an object, got {type(obj).__name__}")
    try:
        seg = obj["segmentation"]
        area = int(obj["area"])
        bbox = tuple(float(v) for v in obj["bbox"])
        pred_iou = float(obj["predicted_iou"])
        stability = float(obj["stability_score"])
    except KeyError as exc:
        raise MalformedRecord(f"missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad field value: {exc}") from None
    if len(bbox) != 4:
        raise MalformedRecord(f"bbox must have 4 values, got {len(bbox)}")
    rle, mask = _decode_segmentation(seg)
    if mask.area != area:
        raise AreaMismatch(f"stated area {area} but decoded area {mask.area}")
    x, y, w, h = bbox
    if x < 0 or y < 0 or w < 0 or h < 0 or x + w > mask.width + 1e-6 or y + h > mask.height + 1e-6:
        raise MalformedRecord(f"bbox {bbox} outside {mask.height}x{mask.width} image")
    return MaskRecord(rle, area, bbox, pred_iou, stability, mask)


def load_mask_records(path: PathLike) -> tuple[list[MaskRecord], list[str]]:
    """All well-formed records of a file plus one message per rejected polygon record."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"{path}: invalid JSON: {exc}") from None
    if isinstance(payload, dict) and "annotations" in payload:
        payload = payload["annotations"]
    if not isinstance(payload, list):
        raise MalformedRecord(f"{path}: expected a list of mask records")
    records, rejected = [], []
    for i, obj in enumerate(payload):
        if isinstance(obj, dict) and isinstance(obj.get("segmentation"), list):
            msg = f"{path}: record {i}: polygon segmentation rejected (RLE only)"
            log.warning(msg)
            rejected.append(msg)
            continue
        try:
            records.append(parse_record(obj))
        except MalformedRecord as exc:
            raise type(exc)(f"{path}: record {i}: {exc}") from None
        except MalformedRle as exc:
            raise MalformedRle(f"{path}: record {i}: {exc}") from None
    return records, rejected


def filter_records(records: list[MaskRecord], quality: QualityFilter = QualityFilter()) -> list[MaskRecord]:
    return [r for r in records if r.area > 0 and quality.accepts(r)]


def read_mask_records(path: PathLike, quality: QualityFilter = QualityFilter()) -> list[BinaryMask]:
    """Decoded masks that survive the quality filter, largest first."""
    records, _ = load_mask_records(path)
    return canonicalize([r.mask for r in filter_records(records, quality)])


def write_mask_records(records: list[MaskRecord], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump([r.to_json() for r in records], fh)
        fh.write("\n")


# manifests ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    pseudo: Optional[Path]
    masks: Optional[Path]
    gt: Optional[Path] = None


@dataclass
class DatasetManifest:
    """Line-delimited JSON; an optional header line carries num_classes and class_names."""

    entries: list[ManifestEntry]
    num_classes: Optional[int] = None
    class_names: Optional[list[str]] = None

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.id: e for e in self.entries}


def read_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    num_classes = class_names = None

    def resolve(value) -> Optional[Path]:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}:{lineno}: expected an object")
        if "id" not in obj:
            if "num_classes" in obj or "class_names" in obj:
                num_classes = obj.get("num_classes", num_classes)
                class_names = obj.get("class_names", class_names)
                continue
            raise ManifestError(f"{path}:{lineno}: record without id")
        image_id = str(obj["id"])
        if image_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {image_id!r}")
        seen.add(image_id)
        entries.append(ManifestEntry(image_id, resolve(obj.get("pseudo")), resolve(obj.get("masks")), resolve(obj.get("gt"))))
    if num_classes is not None and not (isinstance(num_classes, int) and 0 <= num_classes < IGNORE):
        raise ManifestError(f"{path}: bad num_classes {num_classes!r}")
    return DatasetManifest(entries, num_classes, class_names)


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    """Write with paths relative to the manifest's directory where possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Optional[Path]) -> Optional[str]:
        if p is None:
            return None
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    lines = []
    if manifest.num_classes is not None or manifest.class_names:
        header = {"num_classes": manifest.num_classes}
        if manifest.class_names:
            header["class_names"] = manifest.class_names
        lines.append(json.dumps(header))
    for e in manifest.entries:
        rec = {"id": e.id, "pseudo": rel(e.pseudo), "masks": rel(e.masks)}
        if e.gt is not None:
            rec["gt"] = rel(e.gt)
        lines.append(json.dumps(rec))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


# score stacks ------------------------------------------------------------------------

_STACK_MAGIC = b"SCST"
_STACK_HEADER = struct.Struct("<4sIII")


def write_score_stack(scores: np.ndarray, path: PathLike) -> None:
    """Header ``SCST`` + uint32 K, H, W (little-endian), then K*H*W float32 LE values."""
    scores = np.asarray(scores, dtype="<f4")
    if scores.ndim != 3:
        raise ShapeMismatch(f"expected K x H x W, got {scores.shape}")
    k, h, w = scores.shape
    with open(path, "wb") as fh:
        fh.write(_STACK_HEADER.pack(_STACK_MAGIC, k, h, w))
        fh.write(np.ascontiguousarray(scores).tobytes())


def read_score_stack(path: PathLike) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if len(raw) < _STACK_HEADER.size:
        raise ShapeMismatch(f"{path}: truncated header")
    magic, k, h, w = _STACK_HEADER.unpack_from(raw)
    if magic != _STACK_MAGIC:
        raise ShapeMismatch(f"{path}: bad magic {magic!r}")
    expected = _STACK_HEADER.size + 4 * k * h * w
    if len(raw) != expected:
        raise ShapeMismatch(f"{path}: {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=_STACK_HEADER.size).reshape(k, h, w)
