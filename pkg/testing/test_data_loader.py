import json
import struct

import numpy as np
import pytest

from modules.inference import LayerKind
from utils.data_loader import (
    CIFAR_RECORD, DataLoader, load_cifar10, load_mnist, load_network, read_weights, save_network,
    write_cifar10, write_idx, write_weights,
)
from utils.errors import FormatError, ManifestError, MissingTensorError, ShapeMismatchError


def _write_manifest(directory, layers, tensors, input_shape=(1, 4, 4), **extra):
    directory.mkdir(parents=True, exist_ok=True)
    write_weights(directory / 'weights.bin', tensors)
    manifest = {'input_shape': list(input_shape), 'weights': 'weights.bin', 'layers': layers, **extra}
    path = directory / 'manifest.json'
    path.write_text(json.dumps(manifest))
    return path


CONV_LAYERS = [
    {'name': 'conv1', 'kind': 'conv2d', 'weight': 'conv1.w'},
    {'name': 'flatten', 'kind': 'flatten'},
]


# ============================================================
# WEIGHT CONTAINER
# ============================================================

def test_weight_container_round_trip(tmp_path):
    tensors = {
        'conv1.w': np.arange(18, dtype=np.float32).reshape(2, 1, 3, 3) - 8.5,
        'fc.b': np.array([0.1, -0.2, np.float32(1e-30)], dtype=np.float32),
        'scalar': np.array(3.25, dtype=np.float32),
    }
    write_weights(tmp_path / 'w.bin', tensors)
    loaded = read_weights(tmp_path / 'w.bin')
    assert list(loaded) == list(tensors)
    for name, arr in tensors.items():
        assert loaded[name].dtype == np.float32
        assert loaded[name].shape == arr.shape
        assert np.array_equal(loaded[name], arr)


def test_weight_container_layout(tmp_path):
    write_weights(tmp_path / 'w.bin', {'ab': np.array([1.0], dtype=np.float32)})
    data = (tmp_path / 'w.bin').read_bytes()
    assert data == b'PRECISW1' + struct.pack('<IH', 1, 2) + b'ab' + struct.pack('<BI', 1, 1) + struct.pack('<f', 1.0)


def test_weight_container_bad_magic(tmp_path):
    (tmp_path / 'w.bin').write_bytes(b'NOTMAGIC' + struct.pack('<I', 0))
    with pytest.raises(FormatError) as info:
        read_weights(tmp_path / 'w.bin')
    assert info.value.offset == 0


def test_weight_container_truncated_payload(tmp_path):
    write_weights(tmp_path / 'w.bin', {'w': np.ones((4,), dtype=np.float32)})
    data = (tmp_path / 'w.bin').read_bytes()
    (tmp_path / 'w.bin').write_bytes(data[:-3])
    with pytest.raises(FormatError, match='truncated') as info:
        read_weights(tmp_path / 'w.bin')
    # magic + count + name length + name + rank + one dim
    assert info.value.offset == 8 + 4 + 2 + 1 + 1 + 4


def test_weight_container_trailing_bytes(tmp_path):
    write_weights(tmp_path / 'w.bin', {'w': np.ones((2,), dtype=np.float32)})
    with open(tmp_path / 'w.bin', 'ab') as handle:
        handle.write(b'\x00')
    with pytest.raises(FormatError, match='trailing'):
        read_weights(tmp_path / 'w.bin')


def test_weight_container_duplicate_names(tmp_path):
    entry = struct.pack('<H', 1) + b'w' + struct.pack('<BI', 1, 1) + struct.pack('<f', 2.0)
    (tmp_path / 'w.bin').write_bytes(b'PRECISW1' + struct.pack('<I', 2) + entry + entry)
    with pytest.raises(FormatError, match='duplicate'):
        read_weights(tmp_path / 'w.bin')


def test_weight_container_missing_file(tmp_path):
    with pytest.raises(FormatError, match='not found'):
        read_weights(tmp_path / 'absent.bin')


# ============================================================
# NETWORK MANIFEST
# ============================================================

def test_bundled_network_loads(loader):
    net = loader.load_network('lenet_toy')
    assert net.name == 'lenet_toy'
    assert len(net.layers) == 6
    assert net.input_shape == (1, 28, 28)
    assert [layer.kind for layer in net.layers][-1] is LayerKind.SOFTMAX
    assert net.weights['fc1.w'].shape == (10, 144)


def test_network_round_trip(tmp_path, lenet_toy):
    save_network(lenet_toy, tmp_path / 'copy' / 'manifest.json')
    copy = load_network(tmp_path / 'copy' / 'manifest.json')
    assert copy.layers == lenet_toy.layers
    assert copy.output_shapes == lenet_toy.output_shapes
    assert all(np.array_equal(copy.weights[name], lenet_toy.weights[name]) for name in lenet_toy.weights)


def test_manifest_missing_tensor(tmp_path):
    layers = [{'name': 'conv1', 'kind': 'conv2d', 'weight': 'conv9.w'}, {'name': 'flatten', 'kind': 'flatten'}]
    path = _write_manifest(tmp_path, layers, {'conv1.w': np.ones((1, 1, 3, 3), dtype=np.float32)})
    with pytest.raises(MissingTensorError) as info:
        load_network(path)
    assert info.value.name == 'conv9.w'


def test_manifest_conv_weight_rank(tmp_path):
    path = _write_manifest(tmp_path, CONV_LAYERS, {'conv1.w': np.ones((1, 3, 3), dtype=np.float32)})
    with pytest.raises(ShapeMismatchError) as info:
        load_network(path)
    assert info.value.layer == 'conv1'


def test_manifest_unknown_kind(tmp_path):
    layers = [{'name': 'odd', 'kind': 'lstm'}]
    path = _write_manifest(tmp_path, layers, {})
    with pytest.raises(ManifestError, match='lstm'):
        load_network(path)


def test_manifest_unknown_key(tmp_path):
    layers = [{'name': 'conv1', 'kind': 'conv2d', 'weight': 'conv1.w', 'dilation': 2}]
    path = _write_manifest(tmp_path, layers, {'conv1.w': np.ones((1, 1, 3, 3), dtype=np.float32)})
    with pytest.raises(ManifestError, match='dilation'):
        load_network(path)


def test_manifest_duplicate_layer_names(tmp_path):
    layers = CONV_LAYERS + [{'name': 'flatten', 'kind': 'flatten'}]
    path = _write_manifest(tmp_path, layers, {'conv1.w': np.ones((1, 1, 3, 3), dtype=np.float32)})
    with pytest.raises(ManifestError, match='unique'):
        load_network(path)


@pytest.mark.parametrize('fields', [
    {'stride': 0}, {'stride': 'two'}, {'padding': 'x'}, {'padding': -1}, {'stride': True},
    {'kernel': [3]}, {'out_channels': 0}, {'weight': 7},
])
def test_manifest_bad_conv_fields(tmp_path, fields):
    layers = [{**CONV_LAYERS[0], **fields}, CONV_LAYERS[1]]
    path = _write_manifest(tmp_path, layers, {'conv1.w': np.ones((1, 1, 3, 3), dtype=np.float32)})
    with pytest.raises(ManifestError, match="conv1"):
        load_network(path)


@pytest.mark.parametrize('fields', [{'window': 0}, {'window': 2.5}, {'stride': None}])
def test_manifest_bad_pool_fields(tmp_path, fields):
    layers = [{'name': 'pool1', 'kind': 'max_pool', **fields}, {'name': 'flatten', 'kind': 'flatten'}]
    path = _write_manifest(tmp_path, layers, {})
    with pytest.raises(ManifestError, match="pool1"):
        load_network(path)


@pytest.mark.parametrize('manifest', [
    [],
    {'input_shape': 'big', 'weights': 'weights.bin', 'layers': []},
    {'input_shape': [1, 0, 4], 'weights': 'weights.bin', 'layers': []},
    {'input_shape': [1, 4, 4], 'weights': 'weights.bin', 'layers': {}},
    {'input_shape': [1, 4, 4], 'weights': 3, 'layers': []},
    {'input_shape': [1, 4, 4], 'weights': 'weights.bin', 'layers': [], 'input_mean': 0.5},
    {'input_shape': [1, 4, 4], 'weights': 'weights.bin', 'layers': [{'name': ['a'], 'kind': 'relu'}]},
])
def test_manifest_bad_top_level(tmp_path, manifest):
    (tmp_path / 'manifest.json').write_text(json.dumps(manifest))
    with pytest.raises(ManifestError):
        load_network(tmp_path / 'manifest.json')


def test_manifest_invalid_json(tmp_path):
    (tmp_path / 'manifest.json').write_text('{"layers": [')
    with pytest.raises(ManifestError, match='invalid JSON'):
        load_network(tmp_path / 'manifest.json')


def test_manifest_missing_key(tmp_path):
    (tmp_path / 'manifest.json').write_text(json.dumps({'layers': []}))
    with pytest.raises(ManifestError, match='input_shape'):
        load_network(tmp_path / 'manifest.json')


def test_manifest_input_mean(tmp_path):
    path = _write_manifest(tmp_path, CONV_LAYERS, {'conv1.w': np.ones((1, 1, 3, 3), dtype=np.float32)},
                           input_mean=[0.5])
    assert load_network(path).input_mean == (0.5,)


# ============================================================
# DATASETS
# ============================================================

def test_bundled_digits(digits):
    assert digits.images.dtype == np.float32
    assert digits.images.shape == (500, 1, 28, 28)
    assert digits.labels.dtype == np.int64
    assert set(np.unique(digits.labels)) <= set(range(10))
    assert digits.images.min() >= 0.0 and digits.images.max() <= 1.0


def test_idx_all_zero_image(tmp_path):
    write_idx(tmp_path / 'images', tmp_path / 'labels', np.zeros((1, 28, 28)), [7])
    dataset = load_mnist(tmp_path / 'images', tmp_path / 'labels')
    assert np.array_equal(dataset.images, np.zeros((1, 1, 28, 28), dtype=np.float32))
    assert dataset.labels.tolist() == [7]


def test_idx_pixel_scaling(tmp_path):
    images = np.array([[[0, 255], [51, 102]]], dtype=np.uint8)
    write_idx(tmp_path / 'images', tmp_path / 'labels', images, [3])
    dataset = load_mnist(tmp_path / 'images', tmp_path / 'labels')
    assert dataset.images[0, 0].tolist() == [[0.0, 1.0], [np.float32(0.2), np.float32(0.4)]]


def test_idx_bad_magic(tmp_path):
    (tmp_path / 'images').write_bytes(struct.pack('>4I', 0, 1, 2, 2) + bytes(4))
    (tmp_path / 'labels').write_bytes(struct.pack('>2I', 0x801, 1) + bytes(1))
    with pytest.raises(FormatError, match='magic') as info:
        load_mnist(tmp_path / 'images', tmp_path / 'labels')
    assert info.value.offset == 0


def test_idx_truncated_pixels(tmp_path):
    (tmp_path / 'images').write_bytes(struct.pack('>4I', 0x803, 2, 2, 2) + bytes(5))
    (tmp_path / 'labels').write_bytes(struct.pack('>2I', 0x801, 2) + bytes(2))
    with pytest.raises(FormatError, match='truncated') as info:
        load_mnist(tmp_path / 'images', tmp_path / 'labels')
    assert info.value.offset == 16


def test_idx_count_mismatch(tmp_path):
    (tmp_path / 'images').write_bytes(struct.pack('>4I', 0x803, 1, 1, 1) + bytes(1))
    (tmp_path / 'labels').write_bytes(struct.pack('>2I', 0x801, 2) + bytes(2))
    with pytest.raises(FormatError, match='labels'):
        load_mnist(tmp_path / 'images', tmp_path / 'labels')


def test_cifar_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    images = rng.integers(0, 256, (3, 3, 32, 32), dtype=np.uint8)
    write_cifar10(tmp_path / 'batch.bin', images, [0, 9, 4])
    dataset = load_cifar10(tmp_path / 'batch.bin')
    assert dataset.images.shape == (3, 3, 32, 32)
    assert dataset.labels.tolist() == [0, 9, 4]
    assert np.array_equal(dataset.images, images.astype(np.float32) / np.float32(255.0))


def test_cifar_label_out_of_range(tmp_path):
    record = bytes([0]) + bytes(CIFAR_RECORD - 1)
    bad = bytes([255]) + bytes(CIFAR_RECORD - 1)
    (tmp_path / 'batch.bin').write_bytes(record + bad)
    with pytest.raises(FormatError, match='255') as info:
        load_cifar10(tmp_path / 'batch.bin')
    assert info.value.offset == CIFAR_RECORD


def test_cifar_empty_file(tmp_path):
    (tmp_path / 'batch.bin').write_bytes(b'')
    dataset = load_cifar10(tmp_path / 'batch.bin')
    assert dataset.images.shape == (0, 3, 32, 32)
    assert dataset.labels.shape == (0,)


def test_cifar_partial_record(tmp_path):
    (tmp_path / 'batch.bin').write_bytes(bytes(CIFAR_RECORD + 10))
    with pytest.raises(FormatError, match='multiple'):
        load_cifar10(tmp_path / 'batch.bin')


# ============================================================
# NAME RESOLUTION
# ============================================================

def test_loader_resolves_paths(tmp_path, bundle):
    loader = DataLoader(tmp_path)
    dataset = loader.load_dataset(str(bundle['images'].parent), limit=20)
    assert len(dataset.images) == 20
    assert loader.load_network(str(bundle['manifest'])).name == 'lenet_toy'


def test_loader_limit(loader):
    assert len(loader.load_dataset('digits-toy', limit=7).labels) == 7


def test_loader_unknown_dataset(loader):
    with pytest.raises(FormatError, match='unknown dataset'):
        loader.load_dataset('imagenet')


def test_loader_missing_bundled_file(tmp_path):
    with pytest.raises(FormatError, match='not found'):
        DataLoader(tmp_path).load_dataset('mnist-test')
