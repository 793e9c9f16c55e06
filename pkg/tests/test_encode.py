import numpy as np
import pytest

from streamwork.corpus import BuiltinBackend
from streamwork.encode import (
    EncodingError, encode, encode_all, grid_from_text, grid_to_text,
)
from streamwork.minicp import IntArray, load_problem
from streamwork.outcome import Solution
from streamwork.problems import builtin_problem


def sol(iid, **arrays):
    return Solution(iid, {k: IntArray.from_nested(k, v) for k, v in arrays.items()})


def perm_problem(n=3):
    return load_problem({
        "name": "perm", "shape": "permutation", "params": {"n": n},
        "variables": [{"name": "x", "index": ["1..n"], "domain": "1..n"}],
        "constraints": ["alldifferent(x)"], "encoding": {"variable": "x"},
        "instances": {"p": {}}, "train": ["p"], "test": [],
    })


def test_permutation_matrix():
    t = encode(perm_problem(), sol("p", x=[2, 1, 3]))
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = expected[2, 2] = 1
    assert np.array_equal(t.data[0], expected)
    assert t.dims == (3, 3)


def test_matrix_grayscale_uses_declared_max():
    prob = load_problem({
        "name": "m", "shape": "matrix", "params": {"n": 2},
        "variables": [{"name": "a", "index": ["1..n", "1..n"], "domain": "1..n"}],
        "encoding": {"variable": "a"}, "instances": {"m": {}}, "train": ["m"], "test": [],
    })
    t = encode(prob, sol("m", a=[[1, 2], [2, 1]]))
    assert np.allclose(t.data[0], [[0.5, 1.0], [1.0, 0.5]])


def vl_solution(left, bottom, rotated, iid="vl_4x4"):
    return sol(iid, Left=left, Bottom=bottom, rotated=rotated)


def test_packing_class_cells():
    vl = builtin_problem("vessel_loading")
    # container 4 is class 2, 2x2; place container 3 (class 2, 1x2) at origin
    s = vl_solution([2, 2, 0, 0], [0, 1, 0, 2], [0, 0, 0, 0])
    grid = encode(vl, s).data[0]
    assert grid[0, 0] == grid[1, 0] == 1.0   # class 2 / max class 2
    assert grid[0, 2] == grid[0, 3] == 0.5   # container 1, width 2 along x
    # cell count per value equals total class area
    assert np.sum(grid == 1.0) == 2 + 4
    assert np.sum(grid == 0.5) == 2 + 2


def test_packing_example_width_along_columns():
    prob = load_problem({
        "name": "vl1", "shape": "packing_coords",
        "params": {"deck_width": 4, "deck_length": 4, "Containers": "1..1",
                   "width": [2], "length": [1], "class": [2]},
        "variables": [{"name": "Left", "index": ["Containers"], "domain": "0..3"},
                      {"name": "Bottom", "index": ["Containers"], "domain": "0..3"},
                      {"name": "rotated", "index": ["Containers"], "domain": "bool"}],
        "encoding": {"left": "Left", "bottom": "Bottom", "rotated": "rotated", "width": "width",
                     "length": "length", "class": "class", "deck_width": "deck_width",
                     "deck_length": "deck_length"},
        "instances": {"one": {}}, "train": ["one"], "test": [],
    })
    grid = encode(prob, sol("one", Left=[0], Bottom=[0], rotated=[0])).data[0]
    assert set(zip(*np.nonzero(grid))) == {(0, 0), (0, 1)}
    assert grid[0, 0] == 1.0
    rotated = encode(prob, sol("one", Left=[0], Bottom=[0], rotated=[1])).data[0]
    assert set(zip(*np.nonzero(rotated))) == {(0, 0), (1, 0)}


def test_packing_overlap_is_error():
    vl = builtin_problem("vessel_loading")
    with pytest.raises(EncodingError, match="overlap"):
        encode(vl, vl_solution([0, 0, 2, 2], [0, 0, 0, 2], [0, 0, 0, 0]))


def test_assignment_one_hot():
    sg = builtin_problem("social_golfers")
    out = BuiltinBackend().solve(sg, "sg_3_2_3", budget=10)
    t = encode(sg, out.solution)
    assert t.data.shape == (3, 6, 3)
    assert np.all(t.data.sum(axis=0) == 1)


def test_injective_on_corpora():
    q = builtin_problem("nqueens")
    out = BuiltinBackend().solve(q, "q6", mode="enumerate", budget=10)
    tensors = encode_all(q, out.solutions)
    assert len({t.data.tobytes() for t in tensors}) == len(out.solutions) == 4
    for t in tensors:
        assert np.all(t.data[0].sum(axis=0) == 1) and np.all(t.data[0].sum(axis=1) == 1)
    ls = builtin_problem("latin_square")
    out = BuiltinBackend().solve(ls, "ls4", mode="enumerate", limit=200, budget=10)
    assert len({t.data.tobytes() for t in encode_all(ls, out.solutions)}) == 200


def test_grid_text_round_trip():
    data = np.random.default_rng(0).random((2, 3, 4))
    kind, back = grid_from_text(grid_to_text(data, "assignment"))
    assert kind == "assignment" and np.array_equal(back, data)
    with pytest.raises(EncodingError):
        grid_from_text("nonsense")
