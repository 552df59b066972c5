"""
Data Loader Utility
Bit-exact loading of networks, weights and benchmark datasets
"""

from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np

from config.settings import DATA_DIR, DATASETS, NETWORKS
from modules.inference import LayerDef, LayerKind, NetworkDef
from utils.errors import FormatError, ManifestError

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"PRECISW1"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_CLASSES = 10


class Dataset(NamedTuple):
    images: np.ndarray
    labels: np.ndarray

    def head(self, limit):
        if limit is None:
            return self
        return Dataset(self.images[:limit], self.labels[:limit])


def _read_bytes(path, kind):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{kind} file not found", source=path)


# ============================================================
# WEIGHT CONTAINER
# ============================================================

class _Reader:
    """Little-endian cursor that reports the offset where data ran out."""

    def __init__(self, data, source):
        self.data = data
        self.source = source
        self.pos = 0

    def take(self, size, what):
        if size < 0 or self.pos + size > len(self.data):
            raise FormatError(f"truncated {what}: need {size} bytes, {len(self.data) - self.pos} left",
                              offset=self.pos, source=self.source)
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_weights(path):
    """Tensors of a PRECISW1 container, in file order."""
    reader = _Reader(_read_bytes(path, "weight container"), path)
    if reader.take(len(WEIGHTS_MAGIC), "magic") != WEIGHTS_MAGIC:
        raise FormatError("bad weight container magic", offset=0, source=path)
    (count,) = reader.unpack('<I', "entry count")
    tensors = {}
    for _ in range(count):
        start = reader.pos
        (name_len,) = reader.unpack('<H', "name length")
        try:
            name = reader.take(name_len, "tensor name").decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", offset=start + 2, source=path)
        if name in tensors:
            raise FormatError(f"duplicate tensor '{name}'", offset=start, source=path)
        (rank,) = reader.unpack('<B', "rank")
        dims = reader.unpack(f'<{rank}I', f"dims of '{name}'") if rank else ()
        size = math.prod(dims)
        payload = reader.take(4 * size, f"payload of '{name}'")
        tensors[name] = np.frombuffer(payload, dtype='<f4').astype(np.float32).reshape(dims)
    if reader.pos != len(reader.data):
        raise FormatError("trailing bytes after last tensor", offset=reader.pos, source=path)
    logger.debug("read %d tensors from %s", len(tensors), path)
    return tensors


def write_weights(path, tensors):
    chunks = [WEIGHTS_MAGIC, struct.pack('<I', len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype='<f4')
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f'<B{arr.ndim}I', arr.ndim, *arr.shape))
        chunks.append(arr.tobytes(order='C'))
    Path(path).write_bytes(b''.join(chunks))


# ============================================================
# NETWORK MANIFEST
# ============================================================

_LAYER_KEYS = {'name', 'kind', 'weight', 'bias', 'stride', 'padding', 'window', 'out_channels', 'kernel', 'units'}
# Smallest value each integer field accepts
_LAYER_INTS = {'stride': 1, 'padding': 0, 'window': 1, 'out_channels': 1, 'units': 1}


def _is_count(value, low):
    return isinstance(value, int) and not isinstance(value, bool) and value >= low


def _check_layer_fields(entry, name, source):
    for key, low in _LAYER_INTS.items():
        value = entry.get(key)
        if key in entry and not _is_count(value, low):
            raise ManifestError(f"layer '{name}': {key} must be an integer >= {low}, got {value!r}", source=source)
    kernel = entry.get('kernel')
    if kernel is not None and not (
            isinstance(kernel, list) and len(kernel) == 2 and all(_is_count(k, 1) for k in kernel)):
        raise ManifestError(f"layer '{name}': kernel must be two positive integers, got {kernel!r}", source=source)
    for key in ('weight', 'bias'):
        if entry.get(key) is not None and not isinstance(entry[key], str):
            raise ManifestError(f"layer '{name}': {key} must be a tensor name, got {entry[key]!r}", source=source)


def _layer_from_manifest(entry, index, source):
    if not isinstance(entry, dict):
        raise ManifestError(f"layer {index} is not an object", source=source)
    name = entry.get('name', f'layer{index}')
    if not isinstance(name, str):
        raise ManifestError(f"layer {index}: name must be a string, got {name!r}", source=source)
    unknown = set(entry) - _LAYER_KEYS
    if unknown:
        raise ManifestError(f"layer '{name}': unknown keys {sorted(unknown)}", source=source)
    _check_layer_fields(entry, name, source)
    try:
        kind = LayerKind(entry.get('kind'))
    except ValueError:
        raise ManifestError(f"layer '{name}': unknown layer kind '{entry.get('kind')}'", source=source)
    if kind in (LayerKind.CONV2D, LayerKind.FULLY_CONNECTED) and not entry.get('weight'):
        raise ManifestError(f"layer '{name}': {kind.value} needs a weight tensor", source=source)
    return LayerDef(**{**entry, 'name': name, 'kind': kind})


def load_network(manifest_path):
    """NetworkDef from a JSON manifest; every layer is shape-checked at load time."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ManifestError("manifest not found", source=manifest_path)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON: {exc.msg}", offset=exc.pos, source=manifest_path)

    if not isinstance(manifest, dict):
        raise ManifestError("manifest is not a JSON object", source=manifest_path)
    for key in ('input_shape', 'layers', 'weights'):
        if key not in manifest:
            raise ManifestError(f"manifest lacks '{key}'", source=manifest_path)
    shape = manifest['input_shape']
    if not (isinstance(shape, list) and shape and all(_is_count(d, 1) for d in shape)):
        raise ManifestError(f"input_shape must be a list of positive integers, got {shape!r}", source=manifest_path)
    if not isinstance(manifest['layers'], list):
        raise ManifestError("layers must be a list", source=manifest_path)
    if not isinstance(manifest['weights'], str):
        raise ManifestError("weights must be a file name", source=manifest_path)
    mean = manifest.get('input_mean')
    if mean is not None and not (
            isinstance(mean, list) and all(isinstance(m, (int, float)) and not isinstance(m, bool) for m in mean)):
        raise ManifestError(f"input_mean must be a list of numbers, got {mean!r}", source=manifest_path)
    layers = [_layer_from_manifest(entry, i, manifest_path) for i, entry in enumerate(manifest['layers'])]
    names = [layer.name for layer in layers]
    if len(set(names)) != len(names):
        raise ManifestError("layer names must be unique", source=manifest_path)

    weights = read_weights(manifest_path.parent / manifest['weights'])
    net = NetworkDef(
        name=manifest.get('name', manifest_path.parent.name),
        input_shape=manifest['input_shape'],
        layers=layers,
        weights=weights,
        input_mean=manifest.get('input_mean'),
    )
    logger.info("loaded network '%s' with %d layers", net.name, len(net.layers))
    return net


def save_network(net, manifest_path, weights_file='weights.bin'):
    """Write a NetworkDef as manifest + weight container side by side."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    layers = []
    for layer in net.layers:
        entry = {'name': layer.name, 'kind': layer.kind.value}
        for key in ('weight', 'bias', 'stride', 'window', 'out_channels', 'units'):
            if getattr(layer, key) is not None:
                entry[key] = getattr(layer, key)
        if layer.padding:
            entry['padding'] = layer.padding
        if layer.kernel is not None:
            entry['kernel'] = list(layer.kernel)
        layers.append(entry)
    manifest = {
        'name': net.name,
        'input_shape': list(net.input_shape),
        'weights': weights_file,
        'layers': layers,
    }
    if net.input_mean is not None:
        manifest['input_mean'] = list(net.input_mean)
    write_weights(manifest_path.parent / weights_file, dict(net.weights))
    manifest_path.write_text(json.dumps(manifest, indent=2) + '\n')


# ============================================================
# MNIST IDX
# ============================================================

def _idx_header(reader, magic, dims, path):
    (found,) = reader.unpack('>I', "magic")
    if found != magic:
        raise FormatError(f"bad IDX magic 0x{found:08x}, expected 0x{magic:08x}", offset=0, source=path)
    return reader.unpack(f'>{dims}I', "dimensions")


def load_mnist(images_path, labels_path):
    """Images [N, 1, H, W] scaled to [0, 1] in single precision, and labels."""
    reader = _Reader(_read_bytes(images_path, "IDX images"), images_path)
    count, rows, cols = _idx_header(reader, IDX_IMAGES_MAGIC, 3, images_path)
    pixels = np.frombuffer(reader.take(count * rows * cols, "pixel data"), dtype=np.uint8)
    images = (pixels.astype(np.float32) / np.float32(255.0)).reshape(count, 1, rows, cols)

    reader = _Reader(_read_bytes(labels_path, "IDX labels"), labels_path)
    (label_count,) = _idx_header(reader, IDX_LABELS_MAGIC, 1, labels_path)
    labels = np.frombuffer(reader.take(label_count, "label data"), dtype=np.uint8).astype(np.int64)
    if label_count != count:
        raise FormatError(f"{count} images but {label_count} labels", offset=4, source=labels_path)
    logger.debug("loaded %d IDX images of %dx%d", count, rows, cols)
    return Dataset(images, labels)


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.reshape(len(images), images.shape[-2], images.shape[-1]).shape
    Path(images_path).parent.mkdir(parents=True, exist_ok=True)
    Path(images_path).write_bytes(struct.pack('>4I', IDX_IMAGES_MAGIC, count, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack('>2I', IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# ============================================================
# CIFAR-10 BINARY
# ============================================================

def load_cifar10(batch_path):
    """Images [N, 3, 32, 32] scaled to [0, 1] in single precision, and labels."""
    data = _read_bytes(batch_path, "CIFAR-10 batch")
    if len(data) % CIFAR_RECORD:
        raise FormatError(f"size {len(data)} is not a multiple of {CIFAR_RECORD}",
                          offset=len(data) - len(data) % CIFAR_RECORD, source=batch_path)
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} out of range 0-{CIFAR_CLASSES - 1}",
                          offset=int(bad[0]) * CIFAR_RECORD, source=batch_path)
    images = (records[:, 1:].astype(np.float32) / np.float32(255.0)).reshape(-1, 3, 32, 32)
    return Dataset(images, labels)


def write_cifar10(batch_path, images, labels):
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    records = np.concatenate([np.asarray(labels, dtype=np.uint8).reshape(-1, 1), images], axis=1)
    Path(batch_path).parent.mkdir(parents=True, exist_ok=True)
    Path(batch_path).write_bytes(records.tobytes())


# ============================================================
# BUNDLED NAMES
# ============================================================

class DataLoader:
    """Resolves bundled network and dataset names under the data directory; anything else is a path."""

    def __init__(self, data_dir=None):
        self.data_dir = Path(data_dir) if data_dir is not None else DATA_DIR

    def network_path(self, name):
        if name in NETWORKS:
            return self.data_dir / NETWORKS[name]
        return Path(name)

    def load_network(self, name):
        return load_network(self.network_path(name))

    def load_dataset(self, name, limit=None):
        if name in DATASETS:
            entry = DATASETS[name]
            if entry['kind'] == 'cifar10':
                dataset = load_cifar10(self.data_dir / entry['batch'])
            else:
                dataset = load_mnist(self.data_dir / entry['images'], self.data_dir / entry['labels'])
            return dataset.head(limit)

        path = Path(name)
        if path.is_dir():
            images = sorted(path.glob('*images-idx3-ubyte'))
            labels = sorted(path.glob('*labels-idx1-ubyte'))
            if not images or not labels:
                raise FormatError("directory holds no IDX image/label pair", source=path)
            return load_mnist(images[0], labels[0]).head(limit)
        if path.suffix.lower() == '.bin':
            return load_cifar10(path).head(limit)
        raise FormatError(f"unknown dataset '{name}' (bundled: {', '.join(DATASETS)})")
