"""Smoke tests for the python bindings: shape, gradients, a short flow run."""

import json
import os
import subprocess

import numpy as np
import pytest

dlnlab = pytest.importorskip("dlnlab")


def test_product_map_matches_numpy():
    shape = dlnlab.NetShape.rect(3, 4, 2, 3)
    theta = dlnlab.init_gaussian(shape, 0.5, 7)
    layers = theta.layers()
    expected = layers[2] @ layers[1] @ layers[0]
    assert np.allclose(dlnlab.product_map(theta), expected, atol=1e-14)


def test_loss_gradient_matches_finite_differences():
    shape = dlnlab.NetShape.rect(2, 3, 2, 2)
    theta = dlnlab.init_gaussian(shape, 0.4, 3)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5))
    y = rng.standard_normal((2, 5))
    cost = dlnlab.mse_cost(x, y)

    grad = dlnlab.loss_gradient(theta, cost)
    layers = [l.copy() for l in theta.layers()]
    h = 1e-6
    for li, layer in enumerate(layers):
        it = np.nditer(layer, flags=["multi_index"])
        for _ in it:
            i, j = it.multi_index
            up = [l.copy() for l in layers]
            dn = [l.copy() for l in layers]
            up[li][i, j] += h
            dn[li][i, j] -= h
            fd = (
                dlnlab.loss_value(dlnlab.Params(shape, up), cost)
                - dlnlab.loss_value(dlnlab.Params(shape, dn), cost)
            ) / (2 * h)
            assert abs(fd - grad.layers()[li][i, j]) < 1e-6


def test_rank_and_escape_profile():
    a = np.diag([5.0, 0.05])
    assert dlnlab.rank_of(a, 0.1) == 1
    g = np.diag([2.0, 1.0])
    prof = dlnlab.escape_profile(dlnlab.trace_cost(g), 2)
    assert prof.s1 == pytest.approx(2.0)
    assert prof.s_star == pytest.approx(2.0)


def test_short_flow_run_decreases_loss():
    shape = dlnlab.NetShape.rect(2, 3, 2, 2)
    theta0 = dlnlab.init_gaussian(shape, 0.3, 11)
    rng = np.random.default_rng(1)
    cost = dlnlab.mse_cost(np.eye(2), rng.standard_normal((2, 2)))
    cfg = dlnlab.FlowConfig(eta=1e-2, max_steps=2000, snapshot_every=100)
    traj = dlnlab.integrate(theta0, cost, cfg)
    snaps = traj.snapshots
    assert snaps[-1]["loss_train"] < snaps[0]["loss_train"]
    assert dlnlab.visited_ranks(traj)


def test_cli_presets_and_run(tmp_path):
    bin_path = os.environ.get("DLN_LAB_BIN")
    if not bin_path:
        pytest.skip("DLN_LAB_BIN not set")
    listing = subprocess.run([bin_path, "presets"], capture_output=True, text=True, check=True)
    assert "figure1" in listing.stdout
    assert "figure3" in listing.stdout

    config = {
        "kind": "run",
        "seed": 1,
        "shape": {"depth": 2, "width": 3, "in": 2, "out": 2},
        "sigma": 0.3,
        "cost": {"type": "trace", "g": [[1.0, 0.0], [0.0, 0.5]]},
        "flow": {"eta": 1e-3, "max_steps": 100, "snapshot_every": 10},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    out_dir = tmp_path / "out"
    env = dict(os.environ, DLN_LAB_JOBS="2")
    subprocess.run([bin_path, "run", str(cfg_path), "--out", str(out_dir)], check=True, env=env)
    assert (out_dir / "trajectory.csv").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert "trajectory.csv" in manifest["outputs"]
