import numpy as np
import pytest
import torch

from gaitprivacy.attackers import LAYERS, AttackerConfig, build_attacker, predict
from gaitprivacy.checkpoint import load_checkpoint, save_checkpoint
from gaitprivacy.evaluation import auc_score
from gaitprivacy.verifier import BuildError, ShapeError

# "Input Size (H x W x F)" column of the inference-network table for m = 6.
# Pool_2 and the dense rows list the layer's output rather than its input.
TABLE = {
    "Conv1_1": ((6, 100, 1), "in"),
    "Conv1_2": ((6, 98, 16), "in"),
    "Batch_1": ((6, 96, 16), "in"),
    "Pool_1": ((6, 96, 16), "in"),
    "Drop_1": ((6, 48, 16), "in"),
    "Conv2_1": ((6, 48, 16), "in"),
    "Batch_2": ((6, 44, 32), "in"),
    "Pool_2": ((6, 22, 32), "out"),
    "Drop_2": ((6, 22, 32), "in"),
    "Dense_1": ((100,), "out"),
    "Batch_3": ((100,), "in"),
    "Drop_3": ((100,), "in"),
}


@pytest.mark.parametrize("n_classes", [2, 4])
def test_shape_trace_reproduces_table(n_classes):
    trace = build_attacker(AttackerConfig(n_classes)).shape_trace()
    assert tuple(trace) == LAYERS
    for layer, (cell, side) in TABLE.items():
        got = trace[layer][0 if side == "in" else 1]
        assert got == cell, layer
    assert trace["Dense_2"][1] == (n_classes,)
    assert trace["Conv1_1"][1] == (6, 98, 16)
    assert trace["Conv2_1"][1] == (6, 44, 32)


def test_predict_ranges(rng):
    x = rng.standard_normal((16, 6, 100)).astype(np.float32)
    g = predict(build_attacker(AttackerConfig(2), seed=0), x)
    assert g.shape == (16,) and ((g >= 0) & (g <= 1)).all()
    a = predict(build_attacker(AttackerConfig(4), seed=0), x)
    assert a.shape == (16, 4)
    np.testing.assert_allclose(a.sum(dim=1).numpy(), 1.0, atol=1e-6)
    assert predict(build_attacker(AttackerConfig(2), seed=0), x[0]).shape == ()


def test_untrained_attacker_is_chance(rng):
    x = rng.standard_normal((2000, 6, 100)).astype(np.float32)
    y = rng.permutation(np.repeat([0, 1], 1000))
    p = predict(build_attacker(AttackerConfig(2), seed=3), x).numpy()
    assert 0.45 <= auc_score(p, y) <= 0.55


def test_config_errors(rng):
    with pytest.raises(BuildError):
        AttackerConfig(n_classes=1)
    with pytest.raises(BuildError, match="Pool_2"):
        build_attacker(AttackerConfig(input_shape=(6, 10)))
    with pytest.raises(ShapeError):
        predict(build_attacker(), np.zeros((6, 90)))


def test_checkpoint_round_trip(tmp_path, rng):
    m = build_attacker(AttackerConfig(4), seed=1).eval()
    save_checkpoint(tmp_path / "a.ckpt", m, "attacker:activity:raw", 1)
    back, payload = load_checkpoint(tmp_path / "a.ckpt", expect="attacker")
    x = torch.as_tensor(rng.standard_normal((4, 6, 100)), dtype=torch.float32)
    assert torch.equal(predict(m, x), predict(back, x))
    assert payload["stage"] == "attacker:activity:raw"
