import json

import httpx
import pytest

from app.main import app
from app.services.dataset_io import dumps_dataset

QUADRATURE = {"method": "quadrature", "tol": 1e-10, "max_iters": 3000, "mc_samples": 20000}


@pytest.fixture
async def client():
    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url="http://test") as c:
        yield c


async def test_health(client):
    response = await client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


async def test_ridgeless(client):
    response = await client.post("/api/v1/closed-form/ridgeless", json={"beta": 0.5, "sigma_d2": 0.1})
    assert response.status_code == 200
    assert response.json()["values"]["e_ts"] == pytest.approx(0.2)


async def test_ridgeless_at_unit_beta_returns_both_sides(client):
    response = await client.post("/api/v1/closed-form/ridgeless", json={"beta": 1.0, "sigma_d2": 0.1})
    assert response.status_code == 200
    assert set(response.json()["values"]) == {"beta_below", "beta_above"}


async def test_ridge(client):
    response = await client.post("/api/v1/closed-form/ridge", json={"beta": 2.0, "lam": 0.1, "sigma_d2": 0.1})
    assert response.status_code == 200
    body = response.json()
    assert len(body["e_ts"]) == 1
    assert body["constants"][0]["gamma0_plus"] == pytest.approx(0.05)


async def test_ridge_rejects_zero_lambda(client):
    response = await client.post("/api/v1/closed-form/ridge", json={"beta": 2.0, "lam": 0.0})
    assert response.status_code == 422


async def test_mismatch(client):
    response = await client.post(
        "/api/v1/closed-form/mismatch",
        json={"beta": 0.5, "lam": 0.1, "sigma_d2": 0.1, "epsilons": [0.0, 1.0]},
    )
    assert response.status_code == 200
    values = response.json()["values"]
    assert values["1"] == pytest.approx(0.5 + 0.1)


async def test_mismatch_rejects_epsilon_outside_unit_interval(client):
    response = await client.post(
        "/api/v1/closed-form/mismatch", json={"beta": 0.5, "lam": 0.1, "epsilons": [1.5]}
    )
    assert response.status_code == 422


async def test_state_evolution(client):
    problem = {
        "channel": {"kind": "linear", "sigma_d2": 0.1},
        "f_in": {"name": "l2", "lam": 0.1, "beta": 0.5},
        "beta": 0.5,
        "metric": "squared_db",
        "se": QUADRATURE,
        "mc": 20000,
    }
    response = await client.post("/api/v1/se", json=problem)
    assert response.status_code == 200
    body = response.json()
    assert body["fixed_point"]["converged"]
    assert body["fixed_point"]["gamma_bar_plus"][0] == pytest.approx(0.2)
    assert body["e_ts_db"] < 0


async def test_state_evolution_needs_beta(client):
    response = await client.post("/api/v1/se", json={"se": QUADRATURE})
    assert response.status_code == 422


async def test_fit_upload(client, ridge_dataset):
    problem = {"channel": {"kind": "linear", "sigma_d2": 0.1}, "f_in": {"name": "l2", "lam": 1.0}}
    response = await client.post(
        "/api/v1/datasets/fit",
        files={"file": ("train.glmds", dumps_dataset(ridge_dataset), "application/octet-stream")},
        data={"problem": json.dumps(problem)},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["N"] == 200 and body["p"] == 100
    assert len(body["w_hat"]) == 100


async def test_fit_upload_rejects_garbage(client):
    response = await client.post(
        "/api/v1/datasets/fit",
        files={"file": ("bad.glmds", b"not a dataset", "application/octet-stream")},
    )
    assert response.status_code == 422
