"""Annotation parsers (VOC XML, KITTI labels), the synthetic dataset
generator, the 8:1:1 splitter and the GDK1 named-tensor weights format."""

from __future__ import annotations

import io
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .losses import Box
from .metrics import Difficulty, GroundTruth

VOC_VEHICLE_CLASSES = ("bicycle", "motorbike", "bus", "car", "person")
KITTI_CLASSES = ("Car", "Pedestrian", "Cyclist")


class AnnotationError(ValueError):
    """Structured parse failure: ``line`` and ``field`` locate the problem."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class AnnotatedImage:
    image_ref: str
    width: int
    height: int
    objects: list[GroundTruth] = field(default_factory=list)
    dropped: int = 0
    ignore_regions: list[Box] = field(default_factory=list)
    class_names: tuple[str, ...] = ()


def _clamp_box(box: Box, width: float, height: float) -> Box:
    x1 = min(max(box.x1, 0.0), width)
    y1 = min(max(box.y1, 0.0), height)
    x2 = min(max(box.x2, 0.0), width)
    y2 = min(max(box.y2, 0.0), height)
    return Box(x1, y1, x2, y2)


# ---------------------------------------------------------------------------
# Pascal VOC
# ---------------------------------------------------------------------------


_LINES: dict[int, int] = {}  # id(element) -> source line of the current document


def _line_of(elem: ET.Element) -> int | None:
    return _LINES.get(id(elem))


def _parse_with_lines(text: str) -> ET.Element:
    """ElementTree parse that records each element's source line."""
    parser = ET.XMLPullParser(events=("start",))
    root = None
    _LINES.clear()
    try:
        for lineno, line in enumerate(io.StringIO(text), start=1):
            parser.feed(line)
            for _, elem in parser.read_events():
                _LINES[id(elem)] = lineno
                if root is None:
                    root = elem
        parser.close()
        for _, elem in parser.read_events():
            pass
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else None
        raise AnnotationError(f"malformed XML: {exc}", line=line) from None
    if root is None:
        raise AnnotationError("empty document")
    return root


def _num(elem: ET.Element | None, name: str, parent: ET.Element, cast=float):
    if elem is None or elem.text is None or not elem.text.strip():
        raise AnnotationError(f"missing <{name}>", line=_line_of(parent), field=name)
    try:
        return cast(float(elem.text.strip())) if cast is int else cast(elem.text.strip())
    except ValueError:
        raise AnnotationError(f"not a number: {elem.text.strip()!r}", line=_line_of(elem), field=name) from None


def parse_voc_xml(document: str, class_names: Sequence[str] = VOC_VEHICLE_CLASSES,
                  image_id: int | str | None = None) -> AnnotatedImage:
    try:
        root = _parse_with_lines(document)
    except AnnotationError:
        raise
    except Exception as exc:  # parser totality: never leak an unstructured error
        raise AnnotationError(f"unreadable document: {exc}") from None
    if root.tag != "annotation":
        raise AnnotationError(f"root element is <{root.tag}>, expected <annotation>", line=_line_of(root))
    fname = (root.findtext("filename") or "").strip()
    size = root.find("size")
    if size is None:
        raise AnnotationError("missing <size>", line=_line_of(root), field="size")
    width = _num(size.find("width"), "width", size, int)
    height = _num(size.find("height"), "height", size, int)
    img_id = image_id if image_id is not None else fname
    lookup = {n: i for i, n in enumerate(class_names)}
    objects, dropped = [], 0
    for obj in root.findall("object"):
        name = (obj.findtext("name") or "").strip()
        if not name:
            raise AnnotationError("object without <name>", line=_line_of(obj), field="name")
        bnd = obj.find("bndbox")
        if bnd is None:
            raise AnnotationError("object without <bndbox>", line=_line_of(obj), field="bndbox")
        coords = [_num(bnd.find(k), k, bnd) for k in ("xmin", "ymin", "xmax", "ymax")]
        if coords[2] < coords[0]:
            raise AnnotationError(f"xmax {coords[2]} < xmin {coords[0]}", line=_line_of(bnd), field="xmax")
        if coords[3] < coords[1]:
            raise AnnotationError(f"ymax {coords[3]} < ymin {coords[1]}", line=_line_of(bnd), field="ymax")
        if name not in lookup:
            dropped += 1
            continue
        difficult = (obj.findtext("difficult") or "0").strip() == "1"
        box = _clamp_box(Box(*coords), width, height)
        objects.append(GroundTruth(box, lookup[name], Difficulty.UNRATED, img_id, ignore=difficult))
    return AnnotatedImage(fname, width, height, objects, dropped, class_names=tuple(class_names))


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def to_voc_xml(image: AnnotatedImage) -> str:
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = image.image_ref
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(image.width)
    ET.SubElement(size, "height").text = str(image.height)
    ET.SubElement(size, "depth").text = "3"
    for g in image.objects:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = image.class_names[g.class_id]
        ET.SubElement(obj, "difficult").text = "1" if g.ignore else "0"
        bnd = ET.SubElement(obj, "bndbox")
        for k, v in zip(("xmin", "ymin", "xmax", "ymax"), (g.box.x1, g.box.y1, g.box.x2, g.box.y2)):
            ET.SubElement(bnd, k).text = _fmt(v)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# ---------------------------------------------------------------------------
# KITTI
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KittiObject:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]
    dimensions: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    score: float | None = None


# (min box height px, max occlusion level, max truncation) per tier
KITTI_TIERS = (
    (Difficulty.EASY, 40.0, 0, 0.15),
    (Difficulty.MODERATE, 25.0, 1, 0.30),
    (Difficulty.HARD, 25.0, 2, 0.50),
)


def kitti_difficulty(height: float, occluded: int, truncated: float) -> Difficulty:
    for tier, min_h, max_occ, max_trunc in KITTI_TIERS:
        if height >= min_h and occluded <= max_occ and truncated <= max_trunc:
            return tier
    return Difficulty.UNRATED


def parse_kitti_objects(document: str) -> list[KittiObject]:
    out = []
    for lineno, line in enumerate(document.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (15, 16):
            raise AnnotationError(f"expected 15 or 16 fields, got {len(parts)}", line=lineno)
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise AnnotationError(f"non-numeric field: {exc}", line=lineno) from None
        occ = vals[1]
        if not float(occ).is_integer():
            raise AnnotationError(f"occlusion must be an integer, got {parts[2]}", line=lineno, field="occluded")
        x1, y1, x2, y2 = vals[3:7]
        if x2 < x1 or y2 < y1:
            raise AnnotationError("bbox has x2 < x1 or y2 < y1", line=lineno, field="bbox")
        out.append(KittiObject(
            parts[0], vals[0], int(occ), vals[2], (x1, y1, x2, y2), tuple(vals[7:10]), tuple(vals[10:13]),
            vals[13], vals[14] if len(vals) == 15 else None,
        ))
    return out


def format_kitti_objects(objects: Sequence[KittiObject]) -> str:
    lines = []
    for o in objects:
        fields = [o.type, f"{o.truncated:.2f}", str(o.occluded), f"{o.alpha:.2f}"]
        fields += [f"{v:.2f}" for v in o.bbox + o.dimensions + o.location]
        fields.append(f"{o.rotation_y:.2f}")
        if o.score is not None:
            fields.append(f"{o.score:.2f}")
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


def parse_kitti_label(document: str, image_height: float, image_width: float | None = None,
                      class_names: Sequence[str] = KITTI_CLASSES, image_id: int | str = 0) -> AnnotatedImage:
    objs = parse_kitti_objects(document)
    width = image_width if image_width is not None else max([o.bbox[2] for o in objs] + [0.0])
    lookup = {n: i for i, n in enumerate(class_names)}
    objects, ignore, dropped = [], [], 0
    for o in objs:
        box = _clamp_box(Box(*o.bbox), width, image_height)
        if o.type == "DontCare":
            ignore.append(box)
            continue
        if o.type not in lookup:
            dropped += 1
            continue
        diff = kitti_difficulty(o.bbox[3] - o.bbox[1], o.occluded, o.truncated)
        objects.append(GroundTruth(box, lookup[o.type], diff, image_id))
    return AnnotatedImage(str(image_id), int(round(width)), int(round(image_height)), objects, dropped, ignore,
                          tuple(class_names))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

PALETTE = np.array([
    [1.0, 0.1, 0.1],
    [0.1, 1.0, 0.1],
    [0.1, 0.2, 1.0],
    [1.0, 1.0, 0.1],
    [1.0, 0.1, 1.0],
    [0.1, 1.0, 1.0],
    [1.0, 0.6, 0.1],
    [0.6, 0.3, 1.0],
])


def synth_dataset(seed: int, count: int, image_size: int, class_count: int,
                  max_objects: int = 3) -> list[tuple[np.ndarray, AnnotatedImage]]:
    """``count`` images [3,S,S] of 1..max_objects solid rectangles on noise.

    The class of a rectangle is its palette color.  Rectangles never overlap
    and keep a one-pixel gap, so their centers fall in distinct grid cells.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if image_size < 32:
        raise ValueError("imageSize must be >= 32")
    if not 1 <= class_count <= len(PALETTE):
        raise ValueError(f"classCount must lie in [1, {len(PALETTE)}]")
    rng = np.random.default_rng(seed)
    s = image_size
    lo, hi = 8, max(9, int(s * 0.45))
    out = []
    for idx in range(count):
        img = rng.uniform(0.0, 0.35, size=(3, s, s))
        boxes: list[tuple[int, int, int, int]] = []
        objects = []
        want = int(rng.integers(1, max_objects + 1))
        tries = 0
        while len(boxes) < want and tries < 200:
            tries += 1
            w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
            x1, y1 = int(rng.integers(0, s - w + 1)), int(rng.integers(0, s - h + 1))
            cand = (x1, y1, x1 + w, y1 + h)
            if any(cand[0] <= b[2] and b[0] <= cand[2] and cand[1] <= b[3] and b[1] <= cand[3] for b in boxes):
                continue
            cls = int(rng.integers(0, class_count))
            img[:, cand[1]:cand[3], cand[0]:cand[2]] = PALETTE[cls][:, None, None] * rng.uniform(0.85, 1.0)
            boxes.append(cand)
            objects.append(GroundTruth(Box(*map(float, cand)), cls, Difficulty.UNRATED, idx))
        names = tuple(f"class{i}" for i in range(class_count))
        out.append((img, AnnotatedImage(f"synth_{seed}_{idx}", s, s, objects, class_names=names)))
    return out


def split_dataset(items: Sequence, seed: int = 0, ratios: tuple[int, int, int] = (8, 1, 1)):
    """Deterministic shuffled train/val/test split by integer ratios."""
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_val = n * ratios[1] // total
    pick = [items[i] for i in order]
    return pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:]


# ---------------------------------------------------------------------------
# GDK1 weights
# ---------------------------------------------------------------------------

MAGIC = b"GDK1"


class WeightsFormatError(ValueError):
    pass


def write_weights(target: str | Path | BinaryIO, tensors: dict[str, np.ndarray]) -> None:
    """Layout: magic, u32 count, then per entry u32 name length, UTF-8 name,
    u32 rank, rank x u32 extents, little-endian float64 values."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise WeightsFormatError("duplicate tensor names")
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", len(names))
    for name in names:
        arr = np.array(tensors[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(bytes(buf))
    else:
        target.write(bytes(buf))


def read_weights(source: str | Path | BinaryIO | bytes) -> dict[str, np.ndarray]:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise WeightsFormatError(f"truncated payload while reading {what} at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise WeightsFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"entry {i} name length"))
        try:
            name = take(nlen, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise WeightsFormatError(f"entry {i} name is not valid UTF-8") from None
        if name in out:
            raise WeightsFormatError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<I", take(4, f"{name} rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} extents"))
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(take(8 * n, f"{name} values"), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise WeightsFormatError(f"{len(data) - pos} trailing bytes after {count} entries")
    return out
