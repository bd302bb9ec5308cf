"""Procedural faces, degraded input pairs and their on-disk layout."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .rain import IlluminationField, random_field, shade_render
from .vision import bicubic_resize, grid_sample

SIZE = 128
LR_SIZE = 16
N_LANDMARKS = 5
LANDMARK_NAMES = ("left_eye", "right_eye", "nose_tip", "mouth_left", "mouth_right")

MAX_ROTATION_DEG = 10.0
MAX_SHIFT_PX = 5.0
SCALE_RANGE = (0.9, 1.1)


@dataclass
class FacePair:
    ni_lr: np.ndarray  # (3, 16, 16)
    ui_hr: np.ndarray  # (3, 128, 128)
    guide: np.ndarray  # (3, 128, 128), a different identity
    landmarks: np.ndarray  # (5, 2) x, y in 128-scale pixels
    seed: int
    identity: int = -1
    guide_identity: int = -1


@dataclass
class Transform:
    angle_deg: float = 0.0
    shift: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def theta(self, size: int = SIZE) -> np.ndarray:
        """Affine (2, 3) map from output to source in normalized coordinates."""
        a = np.deg2rad(self.angle_deg)
        c, s = np.cos(a) / self.scale, np.sin(a) / self.scale
        tx, ty = (-2.0 * self.shift[0] / size, -2.0 * self.shift[1] / size)
        return np.array([[c, -s, tx], [s, c, ty]])


# ------------------------------------------------------------------------- faces


def _soft(d: np.ndarray) -> np.ndarray:
    """Coverage from a signed distance in pixels (negative inside)."""
    return np.clip(0.5 - d, 0.0, 1.0)


def _ellipse(px, py, cx, cy, rx, ry) -> np.ndarray:
    r = np.sqrt(((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2)
    return _soft((r - 1.0) * min(rx, ry))


def _triangle(px, py, pts) -> np.ndarray:
    d = np.full(px.shape, -np.inf)
    area = (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1]) - (pts[1][1] - pts[0][1]) * (pts[2][0] - pts[0][0])
    sign = 1.0 if area > 0 else -1.0
    for i in range(3):
        (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % 3]
        ex, ey = x1 - x0, y1 - y0
        n = np.hypot(ex, ey)
        d = np.maximum(d, sign * ((px - x0) * ey - (py - y0) * ex) / n)  # outward distance
    return _soft(d)


def _paint(img: np.ndarray, alpha: np.ndarray, color) -> None:
    img *= 1.0 - alpha
    img += alpha * np.asarray(color, dtype=np.float64)[:, None, None]


def render_face(rng: np.random.Generator, size: int = SIZE) -> tuple[np.ndarray, np.ndarray]:
    """One evenly lit face as a (3, size, size) image plus (5, 2) landmarks."""
    f = size / 128.0
    py, px = np.mgrid[0:size, 0:size].astype(np.float64)
    bg_top = rng.uniform(0.15, 0.9, 3)
    bg_bottom = np.clip(bg_top + rng.uniform(-0.15, 0.15, 3), 0, 1)
    t = py / (size - 1)
    img = bg_top[:, None, None] * (1 - t) + bg_bottom[:, None, None] * t

    cx = size / 2 + rng.uniform(-4, 4) * f
    cy = size / 2 + rng.uniform(0, 8) * f
    rx, ry = rng.uniform(34, 44) * f, rng.uniform(44, 54) * f
    tone = rng.uniform(0.45, 0.95)
    skin = np.array([tone, tone * rng.uniform(0.72, 0.86), tone * rng.uniform(0.55, 0.72)])
    hair = rng.uniform(0.02, 0.45) * np.array([1.0, rng.uniform(0.6, 0.9), rng.uniform(0.4, 0.8)])

    _paint(img, _ellipse(px, py, cx, cy - ry * rng.uniform(0.12, 0.25), rx * 1.08, ry * 0.95), hair)
    _paint(img, _ellipse(px, py, cx, cy, rx, ry), skin)

    eye_dx = rng.uniform(13, 18) * f
    eye_y = cy - rng.uniform(8, 14) * f
    eye_rx, eye_ry = rng.uniform(6, 8) * f, rng.uniform(3, 4) * f
    iris_r = rng.uniform(2.5, 3.4) * f
    iris = rng.uniform(0.0, 0.25) * np.array([1.0, rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.4)])
    brow_y = eye_y - rng.uniform(7, 10) * f
    eyes = []
    for side in (-1.0, 1.0):
        ex = cx + side * eye_dx
        _paint(img, _ellipse(px, py, ex, brow_y, eye_rx * 1.1, rng.uniform(1.2, 2.0) * f), hair)
        _paint(img, _ellipse(px, py, ex, eye_y, eye_rx, eye_ry), (0.93, 0.93, 0.9))
        _paint(img, _ellipse(px, py, ex, eye_y, iris_r, iris_r), np.clip(iris, 0, 1))
        eyes.append((ex, eye_y))

    nose_y = cy + rng.uniform(6, 12) * f
    nose_w = rng.uniform(4, 7) * f
    _paint(img, _triangle(px, py, [(cx, eye_y + 2 * f), (cx - nose_w, nose_y), (cx + nose_w, nose_y)]),
           skin * rng.uniform(0.7, 0.85))

    mouth_y = cy + rng.uniform(20, 27) * f
    mouth_hw = rng.uniform(9, 14) * f
    lips = np.array([rng.uniform(0.45, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)])
    _paint(img, _ellipse(px, py, cx, mouth_y, mouth_hw, rng.uniform(2.0, 3.5) * f), lips)

    landmarks = np.array([
        eyes[0], eyes[1], (cx, nose_y), (cx - mouth_hw, mouth_y), (cx + mouth_hw, mouth_y),
    ])
    return np.clip(img, 0.0, 1.0), landmarks


def synth_faces(n: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic corpus; face ``i`` depends only on (seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [render_face(np.random.default_rng([seed, i])) for i in range(n)]


# ------------------------------------------------------------------------- pairs


def random_transform(rng: np.random.Generator) -> Transform:
    return Transform(
        angle_deg=rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG),
        shift=(rng.uniform(-MAX_SHIFT_PX, MAX_SHIFT_PX), rng.uniform(-MAX_SHIFT_PX, MAX_SHIFT_PX)),
        scale=rng.uniform(*SCALE_RANGE),
    )


def degrade(ui_hr: np.ndarray, transform: Transform, field: IlluminationField, lr_size: int = LR_SIZE) -> np.ndarray:
    """Warp, shade and bicubic-downsample an evenly lit (3, H, W) face."""
    warped = grid_sample(Tensor(ui_hr[None]), Tensor(transform.theta(ui_hr.shape[-1])[None])).data[0]
    shaded = shade_render(warped, field)
    return bicubic_resize(Tensor(shaded[None]), lr_size, lr_size).data[0]


def make_pair(ui_hr: np.ndarray, landmarks: np.ndarray, guide: np.ndarray, seed: int,
              transform: Transform | None = None, field: IlluminationField | None = None) -> FacePair:
    if ui_hr.shape != (3, SIZE, SIZE):
        raise ValueError(f"ui_hr must be (3, {SIZE}, {SIZE}), got {ui_hr.shape}")
    rng = np.random.default_rng(seed)
    transform = transform if transform is not None else random_transform(rng)
    field = field if field is not None else random_field(rng, SIZE, SIZE)
    ni_lr = np.clip(degrade(ui_hr, transform, field), 0.0, 1.0)
    return FacePair(ni_lr, ui_hr, guide, np.asarray(landmarks, dtype=np.float64), seed)


@dataclass
class Dataset:
    train: list[FacePair]
    test: list[FacePair]


def build_dataset(n: int, seed: int, train_fraction: float = 0.8) -> Dataset:
    """Faces, degraded inputs and guides; guides come from other training identities."""
    faces = synth_faces(n, seed)
    n_train = max(1, int(round(n * train_fraction)))
    if n_train < 2:
        raise ValueError("need at least two training faces so every guide differs from its target")
    pairs = []
    for i, (img, lm) in enumerate(faces):
        rng = np.random.default_rng([seed, i, 1])
        if i < n_train:
            j = int(rng.integers(n_train - 1))
            j += j >= i
        else:
            j = int(rng.integers(n_train))
        pair_seed = int(rng.integers(2**63))
        pair = make_pair(img, lm, faces[j][0], pair_seed)
        pair.identity, pair.guide_identity = i, j
        pairs.append(pair)
    return Dataset(pairs[:n_train], pairs[n_train:])


def stack(pairs: list[FacePair]) -> dict[str, np.ndarray]:
    return {
        "ni_lr": np.stack([p.ni_lr for p in pairs]),
        "ui_hr": np.stack([p.ui_hr for p in pairs]),
        "guide": np.stack([p.guide for p in pairs]),
        "landmarks": np.stack([p.landmarks for p in pairs]),
    }


# -------------------------------------------------------------------------- disk


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as 8-bit RGB."""
    Image.fromarray(to_uint8(img).transpose(1, 2, 0), mode="RGB").save(path)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


def write_pairs(pairs: list[FacePair], out_dir, split: str, manifest: list[dict]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for p in pairs:
        stem = f"{p.identity:05d}"
        for kind in ("ni_lr", "ui_hr", "guide"):
            save_png(out / f"{stem}_{kind}.png", getattr(p, kind))
        manifest.append({
            "id": stem,
            "split": split,
            "seed": p.seed,
            "identity": p.identity,
            "guide_identity": p.guide_identity,
            "landmarks": p.landmarks.tolist(),
        })


def save_dataset(ds: Dataset, out_dir, meta: dict | None = None) -> Path:
    manifest: list[dict] = []
    write_pairs(ds.train, out_dir, "train", manifest)
    write_pairs(ds.test, out_dir, "test", manifest)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps({"meta": meta or {}, "pairs": manifest}, indent=1))
    return path


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    doc = json.loads((root / "manifest.json").read_text())
    train, test = [], []
    for rec in doc["pairs"]:
        imgs = {k: load_png(root / f"{rec['id']}_{k}.png") for k in ("ni_lr", "ui_hr", "guide")}
        pair = FacePair(imgs["ni_lr"], imgs["ui_hr"], imgs["guide"], np.array(rec["landmarks"]),
                        int(rec["seed"]), int(rec["identity"]), int(rec["guide_identity"]))
        (train if rec["split"] == "train" else test).append(pair)
    return Dataset(train, test)
