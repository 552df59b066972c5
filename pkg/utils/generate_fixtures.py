"""
Generates the bundled desk-scale corpus: seven-segment style 28x28 digit
images in IDX format and the small `lenet_toy` network trained on them.

    python -m utils.generate_fixtures [--data-dir DIR]
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from config.settings import DATA_DIR, DATASETS, NETWORKS
from modules.inference import LayerDef, LayerKind, NetworkDef, final_scores
from modules.numeric import BASELINE
from utils.data_loader import save_network, write_idx

logger = logging.getLogger(__name__)

IMAGE_SIZE = 28
CLASSES = 10

# ============================================================
# 1. DIGIT IMAGES
# ============================================================

# a top, b top-right, c bottom-right, d bottom, e bottom-left, f top-left, g middle
DIGIT_SEGMENTS = {
    0: 'abcdef', 1: 'bc', 2: 'abdeg', 3: 'abcdg', 4: 'bcfg',
    5: 'acdfg', 6: 'acdefg', 7: 'abc', 8: 'abcdefg', 9: 'abcdfg',
}
BOX_HEIGHT = 20
BOX_WIDTH = 12


def _segment_slices(segment, top, left, thickness):
    mid = top + BOX_HEIGHT // 2
    bottom, right = top + BOX_HEIGHT, left + BOX_WIDTH
    return {
        'a': (slice(top, top + thickness), slice(left, right)),
        'g': (slice(mid - thickness // 2, mid - thickness // 2 + thickness), slice(left, right)),
        'd': (slice(bottom - thickness, bottom), slice(left, right)),
        'f': (slice(top, mid), slice(left, left + thickness)),
        'b': (slice(top, mid), slice(right - thickness, right)),
        'e': (slice(mid, bottom), slice(left, left + thickness)),
        'c': (slice(mid, bottom), slice(right - thickness, right)),
    }[segment]


def draw_digit(digit, rng):
    """One uint8 image: jittered position, stroke width and intensity, plus noise."""
    canvas = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    top = 4 + rng.integers(-2, 3)
    left = 8 + rng.integers(-2, 3)
    thickness = rng.integers(2, 4)
    intensity = rng.uniform(180, 255)
    for segment in DIGIT_SEGMENTS[digit]:
        canvas[_segment_slices(segment, top, left, thickness)] = intensity
    canvas += rng.normal(0, 20, canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def generate_digits(count, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, CLASSES, size=count)
    images = np.zeros((count, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    for i, label in enumerate(labels):
        images[i] = draw_digit(int(label), rng)
    return images, labels.astype(np.uint8)


# ============================================================
# 2. LENET_TOY
# ============================================================

def feature_filters():
    """Four fixed 5x5 detectors: horizontal bar, vertical bar, blur, center-surround."""
    horizontal = np.full((5, 5), -0.5)
    horizontal[1:4, :] = 0.5
    vertical = horizontal.T.copy()
    blur = np.full((5, 5), 0.04)
    surround = np.full((5, 5), -0.15)
    surround[1:4, 1:4] = 0.25
    return np.stack([horizontal, vertical, blur, surround])[:, None].astype(np.float32)


def _feature_layers():
    return [
        LayerDef('conv1', LayerKind.CONV2D, weight='conv1.w', stride=2, out_channels=4, kernel=(5, 5)),
        LayerDef('relu1', LayerKind.RELU),
        LayerDef('pool1', LayerKind.MAX_POOL, window=2),
        LayerDef('flatten', LayerKind.FLATTEN),
    ]


def fit_classifier(features, labels, ridge=1.0):
    """Closed-form ridge regression onto one-hot targets: weight [10, K] and bias [10]."""
    x = np.hstack([features, np.ones((len(features), 1))])
    y = np.eye(CLASSES)[labels]
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    solution = np.linalg.solve(gram, x.T @ y)
    return solution[:-1].T.astype(np.float32), solution[-1].astype(np.float32)


def build_lenet_toy(train_images, train_labels):
    """6 layers on [1, 28, 28]: conv 5x5/2 -> relu -> max pool -> flatten -> fc -> softmax."""
    filters = feature_filters()
    extractor = NetworkDef('lenet_toy_features', (1, IMAGE_SIZE, IMAGE_SIZE), _feature_layers(), {'conv1.w': filters})
    features = final_scores(extractor, train_images, BASELINE)
    weight, bias = fit_classifier(features, np.asarray(train_labels, dtype=np.int64))
    layers = _feature_layers() + [
        LayerDef('fc1', LayerKind.FULLY_CONNECTED, weight='fc1.w', bias='fc1.b', units=CLASSES),
        LayerDef('prob', LayerKind.SOFTMAX),
    ]
    weights = {'conv1.w': filters, 'fc1.w': weight, 'fc1.b': bias}
    return NetworkDef('lenet_toy', (1, IMAGE_SIZE, IMAGE_SIZE), layers, weights)


# ============================================================
# 3. BUNDLE
# ============================================================

def generate_bundle(data_dir=DATA_DIR, test_count=500, train_count=1500, seed=0):
    """Write the digits-toy test set and the lenet_toy network under `data_dir`."""
    data_dir = Path(data_dir)
    test_images, test_labels = generate_digits(test_count, seed)
    train_images, train_labels = generate_digits(train_count, seed + 1)

    entry = DATASETS['digits-toy']
    write_idx(data_dir / entry['images'], data_dir / entry['labels'], test_images, test_labels)

    scaled = (train_images.astype(np.float32) / np.float32(255.0))[:, None]
    net = build_lenet_toy(scaled, train_labels)
    manifest = data_dir / NETWORKS['lenet_toy']
    save_network(net, manifest)
    logger.info("wrote %d test digits and network '%s' under %s", test_count, net.name, data_dir)
    return {'data_dir': data_dir, 'manifest': manifest, 'images': data_dir / entry['images'],
            'labels': data_dir / entry['labels']}


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Generate the bundled digits-toy dataset and lenet_toy network")
    parser.add_argument("--data-dir", type=Path, default=DATA_DIR)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO)
    paths = generate_bundle(args.data_dir, seed=args.seed)
    print(f"Bundle written to {paths['data_dir']}")
