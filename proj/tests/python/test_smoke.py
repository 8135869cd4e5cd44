# SPDX-License-Identifier: Apache-2.0
import json
import math

import pytest

import seqfuse

SMALL = dict(train_identities=24, test_identities=10, cameras=4, dim=6, seed=5)


@pytest.fixture(scope="module")
def world():
    data = seqfuse.generate_synthetic(**SMALL)
    model, log = seqfuse.train(data, iterations=20, hidden=8, seed=3)
    return data, model, log


def test_lambda_r_weights_sum_to_one():
    for T in range(1, 7):
        assert math.isclose(sum(seqfuse.lambda_r(t, T) for t in range(1, T + 1)), 1.0)
    assert seqfuse.lambda_r(2, 3) == pytest.approx(2 / 6)


def test_schedule_endpoints():
    assert seqfuse.scheduled_value(0, 1e-3, 10, 20) == pytest.approx(1e-3)
    assert seqfuse.scheduled_value(20, 1e-3, 10, 20) == pytest.approx(1e-6)
    assert seqfuse.scheduled_value(15, 1e-3, 10, 20) == pytest.approx(1e-3 * 0.001**0.5)


def test_generation_is_deterministic():
    a = seqfuse.generate_synthetic(**SMALL)
    b = seqfuse.generate_synthetic(**SMALL)
    assert a.format_manifest() == b.format_manifest()
    first = seqfuse.record(a, 0)
    assert len(first["feat"]) == 6 and a.find(first["id"]) == 0
    assert a.camera_count == 4


def test_manifest_round_trip(tmp_path):
    data = seqfuse.generate_synthetic(**SMALL)
    path = tmp_path / "m.jsonl"
    data.save(str(path))
    again = seqfuse.load_manifest(str(path))
    assert again.format_manifest() == data.format_manifest()
    with pytest.raises(seqfuse.DataError):
        seqfuse.parse_manifest('{"id": "x"}\n')


def test_training_log_and_checkpoint(world, tmp_path):
    data, model, log = world
    assert len(log) == 20
    assert model.input_dim == 6 and model.hidden == 8
    path = tmp_path / "m.ckpt"
    model.save(str(path))
    # Weights are stored as float32, so a reload is stable under a second save.
    loaded = seqfuse.load_checkpoint(str(path))
    loaded.save(str(tmp_path / "again.ckpt"))
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    seq = [[0.5] * 6, [-0.25] * 6]
    for a, b in zip(loaded.fuse(seq), model.fuse(seq)):
        assert a == pytest.approx(b, rel=1e-5, abs=1e-6)
    assert seqfuse.train(data, iterations=0, hidden=8, seed=3)[0] == seqfuse.init_params(3, 6, 8)


def test_fuse_length_matches_sequence(world):
    _, model, _ = world
    seq = [[0.1 * i + j for j in range(6)] for i in range(3)]
    fused = model.fuse(seq)
    assert len(fused) == 3 and all(len(f) == 8 for f in fused)


def test_protocols(world):
    data, model, _ = world
    vsp = seqfuse.evaluate(data, model, "vsp", "gru")
    assert vsp["plans"] and all(0.0 <= p["map"] <= 1.0 or p["map"] is None for p in vsp["plans"])
    mean = seqfuse.evaluate(data, None, "fsp", "mean", gallery=[1])
    assert mean["plans"]
    with pytest.raises(seqfuse.ArgumentError):
        seqfuse.evaluate(data, model, "vsp", "gru", gallery=[1])


def test_service_session_flow(world):
    data, model, _ = world
    svc = seqfuse.Service(data, model, mode="study", top=5)
    query = next(
        r for r in (seqfuse.record(data, i) for i in range(len(data))) if r["split"] == "query"
    )
    view = svc.create(query["id"])
    assert view["id"] == "s1" and view["k"] == 1
    cam = view["remaining"][0]
    top = view["lists"][0]["entries"][0]
    after = svc.confirm("s1", cam, top["record"], 2.5)
    assert after["k"] == 2 and cam not in after["remaining"]
    with pytest.raises(seqfuse.ConflictError):
        svc.confirm("s1", cam, top["record"])
    logs = svc.logs("s1")
    assert len(logs["sessions"][0]["entries"]) == 1
    assert svc.restart("s1")["k"] == 1
    with pytest.raises(seqfuse.NotFoundError):
        svc.state("s9")


def test_http_router(world):
    data, model, _ = world
    svc = seqfuse.Service(data, model)
    status, body = svc.request("GET", "/v1/healthz")
    assert status == 200 and body["status"] == "ok"
    status, _ = svc.request("GET", "/v1/sessions/s7")
    assert status == 404
    status, _ = svc.request("POST", "/v1/sessions", body={"query_record": "nope"})
    assert status == 404


def test_cli_in_process(tmp_path):
    code, out, _ = seqfuse.run_cli(["gen", "--out", str(tmp_path / "d"), "--train-ids", "8", "--test-ids", "4",
                                    "--cameras", "3", "--dim", "4"])
    assert code == 0 and "identities" in out
    assert json.loads((tmp_path / "d" / "spec.json").read_text())["cameras"] == 3
    code, _, err = seqfuse.run_cli(["bogus"])
    assert code == 1 and err
