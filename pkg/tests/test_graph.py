import json
from pathlib import Path

import pytest

from spdconv.builders import build_resnet18, build_resnet18_spd, build_yolov5_skeleton
from spdconv.catalog import BUNDLED, GRAPH_DIR, render, resolve_graph
from spdconv.graph import (
    Graph,
    GraphError,
    Node,
    count_params,
    format_graph,
    infer_shapes,
    load_graph,
    parse_graph,
    shape_table,
    weighted_nodes,
)
from spdconv.tensor import ShapeError

ORACLE = Path(__file__).parent / "oracles" / "resnet18_spd_params.json"


def test_single_conv_description():
    g = parse_graph("c = conv(c_out=8, k=3) <- input", input_shape=(3, 16, 16))
    assert [n.op for n in g.nodes] == ["input", "conv", "output"]
    assert infer_shapes(g).shapes["output"] == (8, 16, 16)


def test_undefined_input_is_named():
    with pytest.raises(GraphError, match="'ghost'"):
        parse_graph("a = conv(c_out=8, k=3) <- ghost", input_shape=(3, 8, 8))


def test_syntax_error_has_line_number():
    with pytest.raises(GraphError, match="line 2"):
        parse_graph("x = input(c=1, h=4, w=4)\nthis is not a node\n")


def test_unknown_op():
    with pytest.raises(GraphError, match="unknown op"):
        parse_graph("x = input(c=1, h=4, w=4)\ny = dance() <- x\n")


def test_cycle_detected():
    text = "x = input(c=1, h=4, w=4)\na = add() <- x, b\nb = add() <- x, a\n"
    with pytest.raises(GraphError, match="cycle"):
        parse_graph(text)


def test_out_of_order_lines_are_sorted():
    text = "b = activation(kind=relu) <- a\na = conv(c_out=2, k=1) <- x\nx = input(c=1, h=4, w=4)\n"
    assert [n.id for n in parse_graph(text).nodes] == ["x", "a", "b", "output"]


def test_comments_and_blank_lines():
    text = "# header\n\nx = input(c=1, h=4, w=4)  # trailing\ny = activation(kind=silu) <- x\n"
    assert len(parse_graph(text).nodes) == 3


def test_bad_attributes():
    with pytest.raises(GraphError, match="requires"):
        parse_graph("c = conv(k=3) <- input", input_shape=(3, 8, 8))
    with pytest.raises(GraphError, match="unexpected"):
        parse_graph("c = conv(c_out=4, k=3, dilation=2) <- input", input_shape=(3, 8, 8))
    with pytest.raises(GraphError, match="activation"):
        parse_graph("a = activation(kind=tanh) <- input", input_shape=(3, 8, 8))


def test_exactly_one_input():
    with pytest.raises(GraphError):
        Graph((Node("a", "input", {"c": 1, "h": 2, "w": 2}), Node("b", "input", {"c": 1, "h": 2, "w": 2})))


def test_format_round_trip():
    for g in (build_resnet18(), build_yolov5_skeleton("s")):
        assert parse_graph(format_graph(g)) == g


def test_bundled_files_match_builders():
    assert {p.stem for p in GRAPH_DIR.glob("*.graph")} == set(BUNDLED)
    for name, (build, _) in BUNDLED.items():
        assert (GRAPH_DIR / f"{name}.graph").read_text() == render(name)
        assert load_graph(GRAPH_DIR / f"{name}.graph") == build()


def test_resolve_graph_by_name_or_path(tmp_path):
    assert resolve_graph("resnet18.graph") == build_resnet18()
    p = tmp_path / "mine.graph"
    p.write_text("c = conv(c_out=8, k=3) <- x\nx = input(c=3, h=8, w=8)\n")
    assert resolve_graph(str(p)).count("conv") == 1
    with pytest.raises(FileNotFoundError):
        resolve_graph("no-such-graph")


def test_bundled_resnet18_stage_structure():
    g = infer_shapes(resolve_graph("resnet18"))
    s = g.shapes
    assert s["conv2_2_relu"] == (64, 8, 8)
    assert s["conv3_2_relu"] == (128, 4, 4)
    assert s["conv4_2_relu"] == (256, 2, 2)
    assert s["conv5_2_relu"] == (512, 1, 1)
    assert s["fc"] == (10,)
    # 16 block convs + stem + three stage-entry downsampling convs + fc
    assert len(list(weighted_nodes(g))) == 21


def test_five_stride2_convs_reach_20x20():
    text = "\n".join(
        f"c{i} = conv(c_out=8, k=3, stride=2) <- {'input' if i == 0 else f'c{i - 1}'}" for i in range(5)
    )
    g = infer_shapes(parse_graph(text, input_shape=(3, 640, 640)))
    assert g.shapes["c4"] == (8, 20, 20)


def test_add_channel_mismatch():
    text = "a = conv(c_out=4, k=1) <- input\nb = conv(c_out=5, k=1) <- input\ns = add() <- a, b\n"
    with pytest.raises(ShapeError, match="add"):
        infer_shapes(parse_graph(text, input_shape=(3, 4, 4)))


def test_concat_spatial_mismatch():
    text = "a = conv(c_out=4, k=3, stride=2) <- input\ns = concat() <- a, input\n"
    with pytest.raises(ShapeError, match="concat"):
        infer_shapes(parse_graph(text, input_shape=(3, 4, 4)))


def test_strict_spd_rejects_odd_input():
    with pytest.raises(ShapeError, match="height"):
        infer_shapes(parse_graph("s = spd(scale=2) <- input", input_shape=(3, 5, 4)))
    g = infer_shapes(parse_graph("s = spd(scale=2, mode=pad) <- input", input_shape=(3, 5, 4)))
    assert g.shapes["s"] == (12, 3, 2)


def test_resnet18_spd_on_64px_input():
    # four SPD stages halve 64 four times
    g = infer_shapes(build_resnet18_spd(200), input_shape=(3, 64, 64))
    assert g.shapes["conv5_2_relu"] == (512, 4, 4)
    assert g.shapes["gap"] == (512, 1, 1)


def test_count_params_small_cases():
    g = parse_graph("c = conv(c_out=16, k=3, bias=1) <- input", input_shape=(3, 8, 8))
    assert count_params(g) == 16 * 3 * 3 * 3 + 16 == 448
    assert count_params(parse_graph("x = input(c=3, h=4, w=4)\no = output() <- x\n")) == 0


def test_count_params_matches_hand_oracle():
    oracle = json.loads(ORACLE.read_text())
    assert sum(oracle["layers"].values()) == oracle["total"]
    assert count_params(build_resnet18_spd(10, 1.0)) == oracle["total"]


def test_shape_table_rows():
    rows = shape_table(build_resnet18_spd())
    assert rows[0][:3] == ("input", "input", (3, 32, 32))
    assert sum(r[3] for r in rows) == count_params(build_resnet18_spd())


def test_graph_is_immutable():
    g = build_resnet18()
    with pytest.raises(AttributeError):
        g.nodes = ()
