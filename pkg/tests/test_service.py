import pytest
from fastapi.testclient import TestClient

from abm_exchange import __version__
from abm_exchange.driver import SessionConfig, run_session
from abm_exchange.schemas import SessionModel
from abm_exchange.service import app, handle_simulate
from abm_exchange.taq import dumps

client = TestClient(app)


def test_health():
    reply = client.get("/health")
    assert reply.status_code == 200
    assert reply.json() == {"status": "ok", "version": __version__}


def test_simulate_matches_in_process():
    body = {"seed": 4, "horizon": 120}
    reply = client.post("/simulate", json=body)
    assert reply.status_code == 200
    data = reply.json()
    local = run_session(SessionConfig(seed=4, horizon=120))
    assert data["taq"] == dumps(local.records)
    assert data["summary"]["trades"] == local.summary["trades"]
    assert data["snapshots"].count("\n") == len(local.snapshots) + 1


def test_session_model_round_trip():
    model = SessionModel(seed=3, horizon=60)
    assert model.to_config() == SessionConfig(seed=3, horizon=60)
    assert handle_simulate(model).taq == handle_simulate(model).taq


@pytest.mark.parametrize("body", [{"horizon": -5}, {"theta": {"N": 0.5}}, {"theta": {"nu": 1}}])
def test_simulate_validation(body):
    assert client.post("/simulate", json=body).status_code == 422


def test_moments_from_taq():
    taq = client.post("/simulate", json={"seed": 1, "horizon": 1800}).json()["taq"]
    reply = client.post("/moments", json={"taq": taq})
    assert reply.status_code == 200
    data = reply.json()
    assert data["count"] > 100
    assert list(data["moments"]) == ["mean", "stdev", "kurtosis", "ks", "hurst", "gph", "adf",
                                     "garch_sum", "hill"]
    assert data["moments"]["ks"] == 0


def test_moments_needs_exactly_one_input():
    assert client.post("/moments", json={}).status_code == 422
    assert client.post("/moments", json={"returns": [0.1, 0.2], "taq": "x"}).status_code == 422


def test_moments_short_series_gives_nulls():
    data = client.post("/moments", json={"returns": [0.01, -0.02, 0.0, 0.03, 0.01]}).json()
    assert data["moments"]["hurst"] is None and data["moments"]["mean"] is not None


def test_analyse():
    taq = client.post("/simulate", json={"seed": 1}).json()["taq"]
    reply = client.post("/analyse", json={"taq": taq})
    assert reply.status_code == 200
    (fact,) = reply.json()["facts"]
    assert fact["dataset"] == "simulated" and fact["kurtosis"] > 3


def test_bad_taq_is_422():
    assert client.post("/analyse", json={"taq": "not,a,taq\n"}).status_code == 422


def test_calibrate_small():
    emp = client.post("/simulate", json={"seed": 9, "horizon": 1800}).json()["taq"]
    body = {"empirical": emp, "level1": False, "base": {"horizon": 300}, "iters": 2,
            "replications": 1, "bootstrap": 20}
    reply = client.post("/calibrate", json=body)
    assert reply.status_code == 200, reply.text
    data = reply.json()
    assert [t["name"] for t in data["theta"]] == ["N", "delta", "kappa", "nu", "sigma"]
    assert len(data["moments"]) == 9 and len(data["trace"]) == 2
