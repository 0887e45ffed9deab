"""Test network validation, shape inference and layer counting."""

import json
import random
import sys
from pathlib import Path

import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from net_ir import (  # noqa: E402
    CountOverflowError,
    NetworkSpec,
    SpecError,
    compare_counts,
    count,
    dump_network,
    infer_shapes,
    parse_network,
    validate,
)
from setting import Settings  # noqa: E402


def make_net(layers, h=8, w=8, c=3, name="net"):
    return NetworkSpec.model_validate(
        {"name": name, "input": {"h": h, "w": w, "c": c}, "layers": layers}
    )


def conv(lid, r, m, stride=1, pad=0, inputs=None, s=None):
    layer = {"id": lid, "kind": "conv", "r": r, "s": s or r, "m": m}
    layer.update({"stride": stride, "pad": pad, "inputs": inputs or []})
    return layer


def loop_nest_counts(h, w, c, r, s, m, stride, pad):
    """Enumerate the convolution loop nest explicitly."""
    rows = [oy for oy in range(h + 2 * pad) if oy % stride == 0]
    rows = [oy for oy in rows if oy + r <= h + 2 * pad]
    cols = [ox for ox in range(w + 2 * pad) if ox % stride == 0]
    cols = [ox for ox in cols if ox + s <= w + 2 * pad]
    macs = 0
    weights = set()
    outputs = set()
    for mi in range(m):
        for oy in rows:
            for ox in cols:
                outputs.add((mi, oy, ox))
                for ci in range(c):
                    for ri in range(r):
                        for si in range(s):
                            macs += 1
                            weights.add((mi, ci, ri, si))
    return {
        "num_weights": len(weights),
        "num_macs": macs,
        "num_input_activations": h * w * c,
        "num_output_activations": len(outputs),
    }


class TestValidation:
    """Test the graph and geometry rules."""

    def test_conv_relu_fc_is_valid(self):
        net = make_net(
            [
                conv("c1", 3, 4, pad=1),
                {"id": "r1", "kind": "relu", "inputs": ["c1"]},
                {"id": "fc", "kind": "fc", "r": 8, "s": 8, "m": 10, "inputs": ["r1"]},
            ]
        )
        assert validate(net) == []

    def test_residual_add_is_valid(self):
        net = make_net(
            [
                conv("a", 3, 3, pad=1),
                conv("b", 3, 3, pad=1, inputs=["a"]),
                {"id": "sum", "kind": "add", "inputs": ["a", "b"]},
            ]
        )
        assert validate(net) == []

    def test_add_with_one_input_names_layer(self):
        net = make_net([conv("a", 3, 3), {"id": "x", "kind": "add", "inputs": ["a"]}])
        violations = validate(net)
        assert len(violations) == 1
        assert violations[0].layer_id == "x"
        assert violations[0].rule == "arity"
        assert "2 inputs" in violations[0].message

    def test_unknown_kind_names_layer(self):
        odd = {"id": "odd", "kind": "lstm", "inputs": ["a"]}
        net = make_net([conv("a", 3, 3), odd])
        violations = validate(net)
        assert [v.rule for v in violations] == ["kind"]
        assert str(violations[0]).startswith("odd:")

    def test_filter_larger_than_input(self):
        violations = validate(make_net([conv("big", 11, 4)], h=5, w=5))
        assert [v.rule for v in violations] == ["shape"]

    def test_duplicate_id(self):
        net = make_net([conv("a", 1, 3), conv("a", 1, 3, inputs=["a"])])
        assert "unique-id" in [v.rule for v in validate(net)]

    def test_forward_reference_rejected(self):
        net = make_net([conv("a", 1, 3, inputs=["b"]), conv("b", 1, 3, inputs=["a"])])
        assert "order" in [v.rule for v in validate(net)]

    def test_two_terminals_rejected(self):
        branches = [conv("b", 1, 3, inputs=["a"]), conv("c", 1, 3, inputs=["a"])]
        net = make_net([conv("a", 1, 3)] + branches)
        assert [v.rule for v in validate(net)] == ["terminal"]

    @pytest.mark.parametrize(
        "layer, rule",
        [
            (conv("a", 0, 3), "geometry"),
            (conv("a", 3, 3, stride=0), "stride"),
            (conv("a", 3, 3, pad=-1), "pad"),
            ({"id": "p", "kind": "maxpool", "r": 2, "s": 2, "m": 3}, "geometry"),
            ({"id": "q", "kind": "relu", "r": 2}, "geometry"),
            ({"id": "f", "kind": "fc", "r": 4, "s": 4, "m": 2}, "fc-shape"),
        ],
    )
    def test_geometry_rules(self, layer, rule):
        assert rule in [v.rule for v in validate(make_net([layer]))]

    def test_add_shape_mismatch(self):
        net = make_net(
            [
                conv("a", 3, 3, pad=1),
                conv("b", 3, 3, inputs=["a"]),
                {"id": "sum", "kind": "add", "inputs": ["a", "b"]},
            ]
        )
        assert [v.rule for v in validate(net)] == ["add-shape"]

    def test_infer_shapes_raises_on_invalid(self):
        with pytest.raises(SpecError):
            infer_shapes(make_net([conv("big", 11, 4)], h=5, w=5))


class TestShapes:
    """Test output dimensions."""

    def test_strided_padded_conv(self):
        shapes = infer_shapes(make_net([conv("c", 3, 16, stride=2, pad=1)], h=7, w=7))
        sh = shapes["c"]
        assert (sh.h, sh.w, sh.c) == (7, 7, 3)
        assert sh.out_dims == (4, 4, 16)

    def test_pool_keeps_channels(self):
        pool = {"id": "p", "kind": "maxpool", "r": 2, "s": 2, "stride": 2}
        net = make_net([conv("c", 1, 5), dict(pool, inputs=["c"])])
        assert infer_shapes(net)["p"].out_dims == (4, 4, 5)

    def test_fc_output_is_1x1(self):
        net = make_net([{"id": "fc", "kind": "fc", "r": 8, "s": 8, "m": 10}])
        assert infer_shapes(net)["fc"].out_dims == (1, 1, 10)


class TestCounts:
    """Test the counting formulas against the loop nest."""

    def test_random_layers_match_loop_nest(self):
        rng = random.Random(1234)
        for _ in range(200):
            h, w = rng.randint(1, 8), rng.randint(1, 8)
            c, m = rng.randint(1, 8), rng.randint(1, 8)
            pad = rng.randint(0, 2)
            r = rng.randint(1, min(h + 2 * pad, 8))
            s = rng.randint(1, min(w + 2 * pad, 8))
            stride = rng.randint(1, 3)
            net = make_net([conv("c", r, m, stride, pad, s=s)], h=h, w=w, c=c)
            assert validate(net) == []
            row = count(net).layers[0]
            expected = loop_nest_counts(h, w, c, r, s, m, stride, pad)
            for name, value in expected.items():
                assert getattr(row, name) == value, (name, h, w, c, r, s, m)

    def test_alexnet_conv1(self):
        net = make_net([conv("conv1", 11, 96, stride=4)], h=227, w=227, c=3)
        row = count(net).layers[0]
        assert row.num_weights == 34_848
        assert row.num_macs == 105_415_200
        assert row.num_output_activations == 290_400

    def test_total_is_column_sum(self):
        net = make_net(
            [
                conv("a", 3, 4, pad=1),
                {"id": "r", "kind": "relu", "inputs": ["a"]},
                conv("b", 3, 4, pad=1, inputs=["r"]),
                {"id": "sum", "kind": "add", "inputs": ["a", "b"]},
            ]
        )
        rep = count(net)
        assert rep.total.layer_id == "TOTAL"
        for name in ("num_weights", "num_macs", "num_output_activations"):
            assert getattr(rep.total, name) == sum(getattr(r, name) for r in rep.layers)
        # add reads both operands
        add_row = rep.layers[-1]
        assert add_row.num_input_activations == 2 * 8 * 8 * 4
        assert add_row.num_weights == 0 and add_row.num_macs == 0

    def test_layer_rename_does_not_change_counts(self):
        net = make_net([conv("a", 3, 4), {"id": "r", "kind": "relu", "inputs": ["a"]}])
        renamed = make_net(
            [conv("first", 3, 4), {"id": "second", "kind": "relu", "inputs": ["first"]}]
        )
        base, other = count(net), count(renamed)
        assert base.total == other.total
        for a, b in zip(base.layers, other.layers):
            skip = {"layer_id"}
            assert a.model_dump(exclude=skip) == b.model_dump(exclude=skip)

    def test_overflow_reported(self, monkeypatch):
        monkeypatch.setattr("net_ir.get_settings", lambda: Settings(MAX_COUNT=1000))
        with pytest.raises(CountOverflowError):
            count(make_net([conv("c", 3, 64)], h=32, w=32))

    def test_compare_flags_activation_inversion(self):
        few_weights = make_net([conv("c", 1, 64)], h=32, w=32, c=3, name="narrow")
        many_weights = make_net([conv("c", 3, 8)], h=4, w=4, c=64, name="wide")
        cmp = compare_counts(count(few_weights), count(many_weights))
        assert cmp.totals["num_weights"] == (192, 4608)
        assert cmp.activation_inversion


class TestSpecJson:
    """Test parsing and serializing network specs."""

    def test_unknown_key_names_layer(self):
        text = json.dumps(
            {
                "name": "n",
                "input": {"h": 4, "w": 4, "c": 1},
                "layers": [dict(conv("c1", 1, 1), dilation=2)],
            }
        )
        with pytest.raises(SpecError, match="c1"):
            parse_network(text)

    def test_invalid_json(self):
        with pytest.raises(SpecError, match="invalid JSON"):
            parse_network("{not json")

    def test_dump_parse_round_trip(self):
        net = make_net([conv("a", 3, 4, stride=2, pad=1)], name="rt")
        again = parse_network(dump_network(net))
        assert again == net
        assert count(again) == count(net)
