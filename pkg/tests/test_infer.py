"""Test the forward-pass kernels, network evaluation and file formats."""

import json
import logging
import random
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from infer import (  # noqa: E402
    DataFileError,
    Dataset,
    ShapeMismatchError,
    Tensor,
    add,
    avgpool,
    blob_path,
    check_weights,
    classify,
    conv_forward,
    fc_forward,
    load_dataset,
    load_weights,
    maxpool,
    network_forward,
    relu,
    run_layers,
    save_dataset,
    save_weights,
)
from net_ir import NetworkSpec, infer_shapes, validate  # noqa: E402


def naive_conv(x, w, stride, pad):
    """Seven nested loops, float32 accumulation in c, r, s order."""
    h, wd, c = x.shape
    m, _, r, s = w.shape
    e = (h + 2 * pad - r) // stride + 1
    f = (wd + 2 * pad - s) // stride + 1
    out = np.zeros((e, f, m), dtype=np.float32)
    for mi in range(m):
        for ei in range(e):
            for fi in range(f):
                acc = np.float32(0)
                for ci in range(c):
                    for ri in range(r):
                        for si in range(s):
                            y = ei * stride + ri - pad
                            z = fi * stride + si - pad
                            if 0 <= y < h and 0 <= z < wd:
                                acc = acc + x[y, z, ci] * w[mi, ci, ri, si]
                out[ei, fi, mi] = acc
    return out


class TestTensor:
    """Test tensor construction rules."""

    def test_copy_is_read_only(self):
        src = np.ones((2, 2, 1))
        t = Tensor(src)
        src[0, 0, 0] = 5
        assert t.data[0, 0, 0] == 1
        assert t.data.dtype == np.float32
        with pytest.raises(ValueError):
            t.data[0, 0, 0] = 3

    @pytest.mark.parametrize("bad", [np.ones((2, 2)), np.array([1.0, np.nan])])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(ShapeMismatchError):
            Tensor(bad)

    def test_flat_tensor_maps_to_channels(self):
        assert Tensor(np.arange(3)).as_map().shape == (1, 1, 3)


class TestKernels:
    """Test each layer kernel on small hand-checked cases."""

    def test_conv_all_ones(self):
        x = Tensor(np.ones((3, 3, 1)))
        w = np.ones((1, 1, 2, 2), dtype=np.float32)
        out = conv_forward(x, w)
        assert out.dims == (2, 2, 1)
        assert np.all(out.data == 4)

    def test_conv_padding_shrinks_corner_sums(self):
        x = Tensor(np.ones((2, 2, 1)))
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = conv_forward(x, w, stride=1, pad=1)
        assert np.all(out.data[:, :, 0] == 4)

    def test_conv_matches_naive_loops_exactly(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            h, wd = rng.integers(1, 7, size=2)
            c, m = rng.integers(1, 4, size=2)
            pad = int(rng.integers(0, 2))
            r = int(rng.integers(1, min(h, wd) + 2 * pad + 1))
            s = int(rng.integers(1, min(h, wd) + 2 * pad + 1))
            stride = int(rng.integers(1, 3))
            x = rng.standard_normal((h, wd, c)).astype(np.float32)
            w = rng.standard_normal((m, c, r, s)).astype(np.float32)
            got = conv_forward(Tensor(x), w, stride, pad).data
            np.testing.assert_array_equal(got, naive_conv(x, w, stride, pad))

    def test_conv_channel_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            conv_forward(Tensor(np.ones((3, 3, 2))), np.ones((1, 3, 1, 1)))

    def test_fc_requires_full_cover(self):
        x = Tensor(np.ones((2, 2, 1)))
        with pytest.raises(ShapeMismatchError):
            fc_forward(x, np.ones((1, 1, 1, 1)))
        out = fc_forward(x, np.full((3, 1, 2, 2), 0.5))
        assert out.dims == (1, 1, 3)
        assert np.all(out.data == 2)

    def test_relu(self):
        out = relu(Tensor(np.array([-1.0, 0.0, 2.5])))
        np.testing.assert_array_equal(out.data, [0, 0, 2.5])

    def test_maxpool_padding_never_wins(self):
        x = Tensor(-np.ones((2, 2, 1)))
        out = maxpool(x, 2, 2, stride=1, pad=1)
        assert out.dims == (3, 3, 1)
        assert np.all(out.data == -1)

    def test_avgpool_divides_by_window(self):
        x = Tensor(np.ones((2, 2, 1)))
        out = avgpool(x, 2, 2, stride=2, pad=1)
        assert out.dims == (2, 2, 1)
        assert np.all(out.data == 0.25)
        assert np.all(avgpool(x, 2, 2).data == 1)

    def test_add(self):
        a, b = Tensor(np.ones((1, 2, 1))), Tensor(np.full((1, 2, 1), 2))
        assert np.all(add(a, b).data == 3)
        with pytest.raises(ShapeMismatchError):
            add(a, Tensor(np.ones((2, 1, 1))))

    @pytest.mark.parametrize(
        "logits, expected",
        [
            ([0.3], 1),
            ([-0.3], 0),
            ([0.0], 0),
            ([0.1, 0.7, 0.2], 1),
            ([0.5, 0.5, 0.1], 0),
            ([0.0, 0.0], 0),
        ],
    )
    def test_classify(self, logits, expected):
        assert classify(Tensor(np.array(logits))) == expected


def residual_net():
    return NetworkSpec.model_validate(
        {
            "name": "res",
            "input": {"h": 4, "w": 4, "c": 2},
            "layers": [
                {"id": "a", "kind": "conv", "r": 3, "s": 3, "m": 2, "pad": 1},
                {"id": "ra", "kind": "relu", "inputs": ["a"]},
                {"id": "b", "kind": "conv", "r": 1, "s": 1, "m": 2, "inputs": ["ra"]},
                {"id": "sum", "kind": "add", "inputs": ["ra", "b"]},
                {"id": "p", "kind": "avgpool", "r": 4, "s": 4, "inputs": ["sum"]},
                {"id": "fc", "kind": "fc", "r": 1, "s": 1, "m": 3, "inputs": ["p"]},
            ],
        }
    )


def residual_weights(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "a": rng.standard_normal((2, 2, 3, 3)).astype(np.float32),
        "b": rng.standard_normal((2, 2, 1, 1)).astype(np.float32),
        "fc": rng.standard_normal((3, 2, 1, 1)).astype(np.float32),
    }


class TestNetwork:
    """Test whole-network evaluation."""

    def test_forward_matches_manual_composition(self):
        net, weights = residual_net(), residual_weights()
        x = Tensor(np.random.default_rng(1).standard_normal((4, 4, 2)))
        ra = relu(conv_forward(x, weights["a"], 1, 1))
        total = add(ra, conv_forward(ra, weights["b"]))
        expected = fc_forward(avgpool(total, 4, 4), weights["fc"])
        got = network_forward(net, weights, x)
        assert got.dims == (1, 1, 3)
        np.testing.assert_array_equal(got.data, expected.data)

    def test_forward_is_deterministic(self):
        net, weights = residual_net(), residual_weights()
        x = Tensor(np.random.default_rng(2).standard_normal((4, 4, 2)))
        first = network_forward(net, weights, x).data
        assert np.array_equal(first, network_forward(net, weights, x).data)

    def test_missing_weights(self):
        weights = residual_weights()
        del weights["b"]
        with pytest.raises(ShapeMismatchError, match="'b'"):
            check_weights(residual_net(), weights)

    def test_wrong_weight_dims(self):
        weights = residual_weights()
        weights["fc"] = np.ones((3, 2, 2, 2), dtype=np.float32)
        with pytest.raises(ShapeMismatchError, match="fc"):
            check_weights(residual_net(), weights)

    def test_extra_weights_warn(self, caplog):
        weights = residual_weights()
        weights["ghost"] = np.ones((1, 1, 1, 1), dtype=np.float32)
        with caplog.at_level(logging.WARNING):
            check_weights(residual_net(), weights)
        assert "ghost" in caplog.text


def naive_pool(x, kind, r, stride, pad):
    """Window max or mean by explicit loops; avg counts padded cells as zero."""
    h, wd, c = x.shape
    e = (h + 2 * pad - r) // stride + 1
    f = (wd + 2 * pad - r) // stride + 1
    out = np.zeros((e, f, c), dtype=np.float32)
    for ci in range(c):
        for ei in range(e):
            for fi in range(f):
                cells = []
                for ri in range(r):
                    for si in range(r):
                        y = ei * stride + ri - pad
                        z = fi * stride + si - pad
                        if 0 <= y < h and 0 <= z < wd:
                            cells.append(x[y, z, ci])
                        elif kind == "avgpool":
                            cells.append(np.float32(0))
                if kind == "maxpool":
                    out[ei, fi, ci] = max(cells)
                else:
                    acc = np.float32(0)
                    for v in cells:
                        acc = acc + v
                    out[ei, fi, ci] = acc / np.float32(r * r)
    return out


def naive_forward(net, weights, x):
    """Every layer's output, computed with the loop oracles only."""
    values = {}
    for layer in net.layers:
        args = [values[src] for src in layer.inputs] if layer.inputs else [x]
        if layer.weighted:
            y = naive_conv(args[0], weights[layer.id], layer.stride, layer.pad)
        elif layer.kind == "relu":
            y = np.maximum(args[0], np.float32(0))
        elif layer.kind == "add":
            y = args[0] + args[1]
        else:
            y = naive_pool(args[0], layer.kind, layer.r, layer.stride, layer.pad)
        values[layer.id] = y
    return values


def random_net(seed):
    """Small square-map net: conv stem, random body, fc head."""
    rng = random.Random(seed)
    wrng = np.random.default_rng(seed)
    side, c = rng.randint(3, 7), rng.randint(1, 3)
    input_shape = {"h": side, "w": side, "c": c}
    layers, weights = [], {}

    def append(kind, inputs=None, **geom):
        lid = f"{kind}{len(layers)}"
        layer = {"id": lid, "kind": kind, **geom}
        if layers:
            layer["inputs"] = inputs or [layers[-1]["id"]]
        layers.append(layer)
        return lid

    def filters(m, c, r):
        return wrng.standard_normal((m, c, r, r)).astype(np.float32)

    def window():
        r = rng.randint(1, min(3, side))
        return r, rng.randint(1, 2), rng.randint(0, r // 2)

    r, stride, pad = window()
    m = rng.randint(1, 3)
    weights[append("conv", r=r, s=r, m=m, stride=stride, pad=pad)] = filters(m, c, r)
    side, c = (side + 2 * pad - r) // stride + 1, m

    for _ in range(rng.randint(1, 4)):
        choice = rng.choice(["conv", "relu", "maxpool", "avgpool", "residual"])
        if choice == "relu":
            append("relu")
        elif choice == "residual":
            src = layers[-1]["id"]
            r = 3 if side >= 3 and rng.random() < 0.5 else 1
            lid = append("conv", r=r, s=r, m=c, pad=r // 2)
            weights[lid] = filters(c, c, r)
            append("add", inputs=[src, lid])
        else:
            r, stride, pad = window()
            if choice == "conv":
                m = rng.randint(1, 3)
                lid = append("conv", r=r, s=r, m=m, stride=stride, pad=pad)
                weights[lid] = filters(m, c, r)
                c = m
            else:
                append(choice, r=r, s=r, stride=stride, pad=pad)
            side = (side + 2 * pad - r) // stride + 1

    m = rng.randint(1, 4)
    weights[append("fc", r=side, s=side, m=m)] = filters(m, c, side)
    net = NetworkSpec.model_validate(
        {"name": f"random-{seed}", "input": input_shape, "layers": layers}
    )
    return net, weights


class TestRandomNetworks:
    """Compare the engine with loop oracles on generated networks."""

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_loop_oracles(self, seed):
        net, weights = random_net(seed)
        assert validate(net) == []
        shape = net.input_shape
        x = np.random.default_rng(seed + 1000).standard_normal(
            (shape.h, shape.w, shape.c)
        )
        x = x.astype(np.float32)

        shapes = infer_shapes(net)
        expected = naive_forward(net, weights, x)
        got = run_layers(net, weights, Tensor(x))
        for layer in net.layers:
            assert got[layer.id].dims == shapes[layer.id].out_dims, layer.id
            np.testing.assert_array_equal(got[layer.id].data, expected[layer.id])
        final = network_forward(net, weights, Tensor(x))
        np.testing.assert_array_equal(final.data, expected[net.layers[-1].id])


class TestFiles:
    """Test the weights and dataset manifest formats."""

    def test_weights_round_trip(self, tmp_path):
        weights = residual_weights(3)
        path = tmp_path / "weights.json"
        save_weights(path, weights)
        manifest = json.loads(path.read_text())
        # offsets and lengths count float32 elements
        assert manifest["a"] == {"dims": [2, 2, 3, 3], "offset": 0, "length": 36}
        assert manifest["b"]["offset"] == 36
        assert blob_path(path).stat().st_size == 4 * (36 + 4 + 6)
        loaded = load_weights(path)
        for key, block in weights.items():
            np.testing.assert_array_equal(loaded[key], block)

    def test_dataset_round_trip(self, tmp_path):
        samples = np.arange(24, dtype=np.float32).reshape(3, 2, 2, 2)
        path = tmp_path / "data.json"
        save_dataset(path, Dataset(samples=samples, labels=np.array([0, 2, 1])))
        loaded = load_dataset(path)
        assert len(loaded) == 3
        assert loaded.sample(1).dims == (2, 2, 2)
        np.testing.assert_array_equal(loaded.samples, samples)
        assert list(loaded.labels) == [0, 2, 1]

    def test_weights_past_end_of_blob(self, tmp_path):
        path = tmp_path / "w.json"
        save_weights(path, {"a": np.ones((1, 1, 1, 2), dtype=np.float32)})
        path.write_text(
            json.dumps({"a": {"dims": [1, 1, 1, 2], "offset": 1, "length": 2}})
        )
        with pytest.raises(DataFileError):
            load_weights(path)

    def test_dataset_label_count_mismatch(self, tmp_path):
        path = tmp_path / "d.json"
        save_dataset(path, Dataset(samples=np.zeros((2, 1, 1, 1)), labels=np.zeros(2)))
        path.write_text(json.dumps({"n_samples": 2, "dims": [1, 1, 1], "labels": [0]}))
        with pytest.raises(DataFileError):
            load_dataset(path)

    def test_unknown_manifest_key(self, tmp_path):
        path = tmp_path / "w.json"
        save_weights(path, {"a": np.ones((1, 1, 1, 1), dtype=np.float32)})
        path.write_text(
            json.dumps({"a": {"dims": [1, 1, 1, 1], "offset": 0, "length": 1, "x": 0}})
        )
        with pytest.raises(DataFileError):
            load_weights(path)

    def test_negative_weight_dims(self, tmp_path):
        path = tmp_path / "w.json"
        save_weights(path, {"a": np.ones((1, 1, 1, 2), dtype=np.float32)})
        path.write_text(
            json.dumps({"a": {"dims": [-1, -2, 1, 1], "offset": 0, "length": 2}})
        )
        with pytest.raises(DataFileError):
            load_weights(path)

    def test_negative_dataset_dims(self, tmp_path):
        path = tmp_path / "d.json"
        save_dataset(path, Dataset(samples=np.zeros((1, 1, 1, 1)), labels=np.zeros(1)))
        manifest = {"n_samples": 1, "dims": [-1, -1, 1], "labels": [0]}
        path.write_text(json.dumps(manifest))
        with pytest.raises(DataFileError):
            load_dataset(path)
