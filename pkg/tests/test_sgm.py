import json

import numpy as np
import pytest

from vigraph.oracle import naive_sgm_forward
from vigraph.partition import DIRECTIONAL, LOCAL_GLOBAL, PartitionScheme, build_masks
from vigraph.sgm import Fusion, ParadigmError, Paradigm, SgmLayer, init_layer
from vigraph.tensor import ShapeError, Tape, Tensor, mul, sum_all

SCHEMES = ["full", "local-global", "directional", "full-x4"]


def layer_for(scheme, T=8, c_in=3, c_out=4, paradigm="transductive", fusion="sum", seed=0, tau=1):
    masks = build_masks(T, tau, PartitionScheme.parse(scheme))
    return init_layer(masks, c_in, c_out, paradigm, fusion, seed)


def randomize_adjacency(layer, rng):
    for a in layer.adjacency or []:
        a.data[...] = rng.uniform(-1, 1, size=a.shape)


# -- initialization -------------------------------------------------------------


def test_full_init_uniform():
    layer = layer_for("full", T=4)
    np.testing.assert_array_equal(layer.adjacency[0].data, 0.25)
    dump = layer.export_adjacency()
    assert np.array(dump["matrices"]).size == 16
    assert np.all(np.array(dump["matrices"]) == 0.25)


def test_empty_neighbor_rows_are_zero():
    layer = layer_for("directional", T=4)
    gb = layer.adjacency[0].data
    np.testing.assert_array_equal(gb[2:], 0.0)  # no j > i + 1 for the last rows
    np.testing.assert_allclose(gb[0, 2:], 0.5)


def test_equal_seeds_bitwise_equal():
    a = layer_for("directional", paradigm="inductive", fusion="concat", seed=3)
    b = layer_for("directional", paradigm="inductive", fusion="concat", seed=3)
    for (na, pa), (nb, pb) in zip(a.parameters(), b.parameters()):
        assert na == nb
        assert pa.data.tobytes() == pb.data.tobytes()


def test_transductive_adjacency_keeps_only_mask():
    layer = layer_for("directional", T=3)
    layer.adjacency[1].data[...] = 1.0
    got = layer.transductive_adjacency(1).data
    expected = np.zeros((3, 3))
    for i, j in [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]:
        expected[i, j] = 1.0
    np.testing.assert_array_equal(got, expected)


def test_transductive_adjacency_all_false_mask():
    layer = layer_for("local-global", T=2)
    layer.adjacency[1].data[...] = 3.0
    np.testing.assert_array_equal(layer.transductive_adjacency(1).data, 0.0)


def test_paradigm_errors():
    with pytest.raises(ParadigmError):
        layer_for("full", paradigm="inductive").transductive_adjacency(0)
    with pytest.raises(ParadigmError):
        layer_for("full").inductive_adjacency(Tensor(np.zeros((8, 3))), 0)
    with pytest.raises(ParadigmError):
        layer_for("full", paradigm="inductive").export_adjacency()


# -- inductive attention --------------------------------------------------------


def test_identical_frames_give_uniform_attention(rng):
    layer = layer_for("full", T=5, paradigm="inductive")
    x = np.tile(rng.normal(size=3), (5, 1))
    att = layer.inductive_adjacency(Tensor(x), 0).data
    np.testing.assert_allclose(att, 0.2, rtol=1e-14)


def test_single_neighbour_attention_is_one(rng):
    layer = layer_for("directional", T=4, paradigm="inductive")
    att = layer.inductive_adjacency(Tensor(rng.normal(size=(4, 3))), 0).data
    # global-backward at T=4, tau=1: rows 0 and 1 have neighbours {2,3} and {3}
    assert att[1, 3] == 1.0
    np.testing.assert_array_equal(att[2:], 0.0)


# -- forward --------------------------------------------------------------------


def test_identity_adjacency_and_weights_pass_through(rng):
    layer = layer_for("full", T=4, c_in=3, c_out=3)
    layer.adjacency[0].data[...] = np.eye(4)
    layer.weights[0].data[...] = np.eye(3)
    x = rng.uniform(0, 2, size=(4, 3))
    np.testing.assert_array_equal(layer(Tensor(x)).data, x)


def test_zero_adjacency_row_gives_zero_output(rng):
    layer = layer_for("full", T=4)
    layer.adjacency[0].data[2] = 0.0
    out = layer(Tensor(rng.normal(size=(2, 4, 3)))).data
    np.testing.assert_array_equal(out[:, 2], 0.0)


def test_single_subgraph_sum_is_subgraph_reason(rng):
    layer = layer_for("full")
    x = Tensor(rng.normal(size=(2, 8, 3)))
    assert layer(x).data.tobytes() == layer.subgraph_reason(x, 0).data.tobytes()


def test_negated_copy_cancels(rng):
    layer = layer_for("full-x4", c_in=3, c_out=3)
    x = Tensor(rng.normal(size=(8, 3)))
    W = rng.normal(size=(3, 3))
    for k, w in enumerate(layer.weights):
        w.data[...] = W if k < 2 else -W
    # relu(A h) + relu(-A h) = |A h| for the pair, so each pair gives |A x W|.
    h = layer.adjacency[0].data @ x.data @ W
    np.testing.assert_allclose(layer(x).data, 2 * np.abs(h), rtol=1e-14)


def test_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        layer_for("full")(Tensor(rng.normal(size=(8, 5))))


def test_frame_mismatch(rng):
    with pytest.raises(ShapeError):
        layer_for("full")(Tensor(rng.normal(size=(7, 3))))


def test_small_instance_matches_oracle(rng):
    layer = layer_for("directional", T=3, c_in=2, c_out=2)
    randomize_adjacency(layer, rng)
    x = rng.normal(size=(3, 2))
    assert np.abs(layer(Tensor(x)).data - naive_sgm_forward(layer, x)).max() <= 1e-12


@pytest.mark.parametrize("paradigm", ["transductive", "inductive"])
@pytest.mark.parametrize("fusion", ["sum", "concat"])
@pytest.mark.parametrize("scheme", SCHEMES)
def test_forward_matches_oracle(paradigm, fusion, scheme):
    rng = np.random.default_rng([SCHEMES.index(scheme), len(paradigm), len(fusion)])
    for T in (2, 3, 4, 8):
        for _ in range(5):
            c_in, c_out = (int(c) for c in rng.integers(1, 5, size=2))
            masks = build_masks(T, int(rng.integers(1, T)), PartitionScheme.parse(scheme))
            layer = SgmLayer(masks, c_in, c_out, paradigm, fusion, rng)
            randomize_adjacency(layer, rng)
            x = rng.uniform(-2, 2, size=(2, T, c_in))
            assert np.abs(layer(Tensor(x)).data - naive_sgm_forward(layer, x)).max() <= 1e-12


# -- fusion identity ------------------------------------------------------------


@pytest.mark.parametrize("paradigm", ["transductive", "inductive"])
@pytest.mark.parametrize("scheme", SCHEMES)
def test_concat_with_stacked_identity_equals_sum(paradigm, scheme, rng):
    s = layer_for(scheme, c_in=3, c_out=5, paradigm=paradigm, fusion="sum", seed=4)
    c = layer_for(scheme, c_in=3, c_out=5, paradigm=paradigm, fusion="concat", seed=4)
    for (_, ps), (_, pc) in zip(s.parameters(), c.parameters()):
        pc.data[...] = ps.data
    c.concat_proj.data[...] = np.vstack([np.eye(5)] * c.n_subgraphs)
    x = Tensor(rng.normal(size=(3, 8, 3)))
    assert c(x).data.tobytes() == s(x).data.tobytes()


def test_sum_has_fewer_parameters():
    s = layer_for("directional", fusion="sum")
    c = layer_for("directional", fusion="concat")
    assert s.parameter_count() < c.parameter_count()


# -- masks and gradients --------------------------------------------------------


@pytest.mark.parametrize("scheme", ["local-global", "directional"])
def test_mask_respect(scheme, rng):
    layer = layer_for(scheme, T=6)
    randomize_adjacency(layer, rng)
    x = Tensor(rng.normal(size=(2, 6, 3)))
    base = layer(x).data.copy()
    with Tape() as tape:
        loss = sum_all(mul(layer(x), layer(x)))
    tape.backward(loss)
    for k, a in enumerate(layer.adjacency):
        off = ~layer.masks.masks[k]
        assert np.all(a.grad[off] == 0.0)
        assert not np.signbit(a.grad[off]).any()
    for _ in range(100):
        k = int(rng.integers(layer.n_subgraphs))
        off = ~layer.masks.masks[k]
        if not off.any():
            continue
        saved = layer.adjacency[k].data.copy()
        layer.adjacency[k].data[off] += rng.normal(scale=10, size=off.sum())
        assert layer(x).data.tobytes() == base.tobytes()
        layer.adjacency[k].data[...] = saved


def test_decomposition_sums_to_full(rng):
    """Summed masked adjacencies of a decomposing scheme form one full adjacency."""
    for scheme in (LOCAL_GLOBAL, DIRECTIONAL):
        layer = init_layer(build_masks(8, 2, scheme), 3, 3, seed=1)
        randomize_adjacency(layer, rng)
        total = sum(layer.transductive_adjacency(k).data for k in range(layer.n_subgraphs))
        raw = np.zeros((8, 8))
        for k, m in enumerate(layer.masks.masks):
            raw[m] = layer.adjacency[k].data[m]
        np.testing.assert_array_equal(total, raw)


def test_full_layer_reversal_equivariant_at_init(rng):
    layer = layer_for("full", c_in=3, c_out=3)
    x = rng.normal(size=(8, 3))
    np.testing.assert_allclose(layer(Tensor(x[::-1])).data, layer(Tensor(x)).data[::-1], atol=1e-14)


def test_directional_layer_sees_reversal(rng):
    layer = layer_for("directional", c_in=3, c_out=3)
    x = rng.normal(size=(8, 3))
    assert np.abs(layer(Tensor(x[::-1])).data - layer(Tensor(x)).data[::-1]).max() > 1e-6


# -- serialization --------------------------------------------------------------


def test_export_import_round_trip(rng):
    layer = layer_for("directional")
    randomize_adjacency(layer, rng)
    dump = json.loads(json.dumps(layer.export_adjacency()))
    other = layer_for("directional", seed=9)
    other.import_adjacency(dump)
    for k in range(4):
        np.testing.assert_array_equal(other.transductive_adjacency(k).data,
                                      layer.transductive_adjacency(k).data)
    assert dump["names"] == list(layer.masks.names) and dump["tau"] == 1


def test_state_dict_round_trip(rng):
    a = layer_for("local-global", paradigm="inductive", fusion="concat", seed=1)
    b = layer_for("local-global", paradigm="inductive", fusion="concat", seed=2)
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.normal(size=(8, 3)))
    assert a(x).data.tobytes() == b(x).data.tobytes()


def test_enums_accept_strings():
    layer = layer_for("full", paradigm="inductive", fusion="concat")
    assert layer.paradigm is Paradigm.INDUCTIVE and layer.fusion is Fusion.CONCAT
