"""Deterministic synthetic handwritten-digit corpus in MNIST file layout.

Stand-in for environments without the real MNIST files: 28x28 grayscale
digits rendered from several vector fonts with random affine jitter, stroke
width, and pixel noise, then written as big-endian IDX files so they flow
through the exact ingestion path real MNIST would. Same seed, same bytes.
"""

from __future__ import annotations

import os

import cv2
import numpy as np

from .data import save_idx
from .nncore import make_rng

_FONTS = (
    cv2.FONT_HERSHEY_SIMPLEX,
    cv2.FONT_HERSHEY_DUPLEX,
    cv2.FONT_HERSHEY_COMPLEX,
    cv2.FONT_HERSHEY_TRIPLEX,
    cv2.FONT_HERSHEY_COMPLEX_SMALL,
    cv2.FONT_HERSHEY_SCRIPT_SIMPLEX,
    cv2.FONT_HERSHEY_SCRIPT_COMPLEX,
    cv2.FONT_HERSHEY_PLAIN,
)

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One 28x28 uint8 digit image, white strokes on black."""
    canvas = np.zeros((64, 64), dtype=np.uint8)
    font = _FONTS[rng.integers(len(_FONTS))]
    scale = rng.uniform(1.6, 2.4)
    thickness = int(rng.integers(2, 6))
    text = str(int(digit) % 10)
    (w, h), _ = cv2.getTextSize(text, font, scale, thickness)
    org = (int(32 - w / 2 + rng.uniform(-4, 4)), int(32 + h / 2 + rng.uniform(-4, 4)))
    cv2.putText(canvas, text, org, font, scale, 255, thickness, cv2.LINE_AA)
    mat = cv2.getRotationMatrix2D((32, 32), rng.uniform(-14, 14), rng.uniform(0.85, 1.1))
    mat[0, 2] += rng.uniform(-3, 3)
    mat[1, 2] += rng.uniform(-3, 3)
    canvas = cv2.warpAffine(canvas, mat, (64, 64), flags=cv2.INTER_LINEAR)
    img = cv2.resize(canvas, (28, 28), interpolation=cv2.INTER_AREA).astype(np.float64)
    img += rng.normal(0.0, 8.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def make_digits(n: int, rng: np.random.Generator):
    """n images with labels cycling 0..9 then shuffled (balanced classes)."""
    labels = np.arange(n) % 10
    images = np.stack([render_digit(d, rng) for d in labels])
    order = rng.permutation(n)
    return images[order], labels[order].astype(np.uint8)


def write_digits_corpus(out_dir: str, n_train: int = 12000, n_test: int = 2000,
                        seed: int = 0) -> dict[str, str]:
    """Write a train/test IDX quartet under out_dir; returns the path map."""
    os.makedirs(out_dir, exist_ok=True)
    rng = make_rng(seed)
    paths = {
        "train_images": os.path.join(out_dir, TRAIN_IMAGES),
        "train_labels": os.path.join(out_dir, TRAIN_LABELS),
        "test_images": os.path.join(out_dir, TEST_IMAGES),
        "test_labels": os.path.join(out_dir, TEST_LABELS),
    }
    images, labels = make_digits(n_train, rng)
    save_idx(images, labels, paths["train_images"], paths["train_labels"])
    images, labels = make_digits(n_test, rng)
    save_idx(images, labels, paths["test_images"], paths["test_labels"])
    return paths


def find_idx_quartet(root: str) -> dict[str, str] | None:
    """Locate an MNIST-layout file quartet under root (plain or .gz)."""
    names = {
        "train_images": TRAIN_IMAGES,
        "train_labels": TRAIN_LABELS,
        "test_images": TEST_IMAGES,
        "test_labels": TEST_LABELS,
    }
    found = {}
    for key, base in names.items():
        for cand in (os.path.join(root, base), os.path.join(root, base + ".gz")):
            if os.path.isfile(cand):
                found[key] = cand
                break
        else:
            return None
    return found
