"""Image loading/saving, resizing and dataset manifests."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .autodiff import Tensor


class DecodeError(IOError):
    pass


class ManifestError(ValueError):
    pass


def load_image(path: str | Path) -> Tensor:
    """Read a PNG/JPEG as a (3, H, W) tensor in [0, 1], channel order RGB."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return Tensor(arr.transpose(2, 0, 1) / 255.0)


def to_uint8(img: np.ndarray | Tensor) -> np.ndarray:
    """(3, H, W) floats -> (H, W, 3) uint8, clamped and rounded to nearest."""
    data = img.data if isinstance(img, Tensor) else np.asarray(img)
    return np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(img: np.ndarray | Tensor, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def read_uint8(path: str | Path) -> np.ndarray:
    """(H, W, 3) uint8 view of an image file, for metrics."""
    return to_uint8(load_image(path))


def resize_bilinear(img: np.ndarray | Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel-centred sampling (no antialiasing)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    data = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=float)
    _, h, w = data.shape
    if (h, w) == (out_h, out_w):
        return Tensor(data.copy())

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    top = data[:, y0][:, :, x0] * (1 - fx) + data[:, y0][:, :, x1] * fx
    bot = data[:, y1][:, :, x0] * (1 - fx) + data[:, y1][:, :, x1] * fx
    fy = fy[:, None]
    return Tensor(top * (1 - fy) + bot * fy)


@dataclass
class ImagePairRecord:
    raw_path: Path
    reference_path: Path | None
    split: str
    line: int = 0


@dataclass
class Manifest:
    name: str
    records: list[ImagePairRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


_HEADER = ["raw_path", "ref_path", "split"]


def read_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Parse ``raw_path,ref_path,split`` lines. Relative paths resolve against the manifest."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    records: list[ImagePairRecord] = []
    seen: dict[Path, int] = {}
    problems: list[str] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row]
            if not row or not any(row) or row[0].startswith("#"):
                continue
            if lineno == 1 and row[:3] == _HEADER:
                continue
            if len(row) == 2:
                row = [row[0], "", row[1]]
            if len(row) != 3:
                problems.append(f"line {lineno}: expected raw_path,ref_path,split")
                continue
            raw = base / row[0]
            ref = base / row[1] if row[1] else None
            if raw in seen:
                problems.append(f"line {lineno}: duplicate raw path {row[0]} (first on line {seen[raw]})")
                continue
            seen[raw] = lineno
            if check_files:
                for p in (raw, ref):
                    if p is not None and not p.is_file():
                        problems.append(f"line {lineno}: missing file {p}")
            records.append(ImagePairRecord(raw, ref, row[2] or "train", lineno))
    if problems:
        raise ManifestError(f"{path}: " + "; ".join(problems))
    return Manifest(path.stem, records)


def write_manifest(path: str | Path, records: list[tuple[str, str, str]]):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        writer.writerows(records)


def load_pairs(manifest: Manifest, resize: int | None = None, limit: int | None = None):
    """Decode paired records into ``(raw, ref)`` arrays, optionally square-resized."""
    pairs = []
    for rec in manifest.records[:limit]:
        if rec.reference_path is None:
            raise ManifestError(f"line {rec.line}: {rec.raw_path} has no reference image")
        raw, ref = load_image(rec.raw_path), load_image(rec.reference_path)
        if resize:
            raw, ref = resize_bilinear(raw, resize, resize), resize_bilinear(ref, resize, resize)
        elif raw.shape != ref.shape:
            raise ManifestError(f"line {rec.line}: raw {raw.shape} and reference {ref.shape} differ")
        pairs.append((raw.data, ref.data))
    return pairs
