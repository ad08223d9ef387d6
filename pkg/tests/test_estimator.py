import numpy as np
import pytest
from sklearn.base import clone

from nursesched.domain import ValidationError, generate_roster, roster_to_dict, save_roster
from nursesched.env import NULL, Assign, enumerate_actions, reset, step
from nursesched.estimator import HeuristicScheduler, PPOScheduler
from nursesched.validation import NotFittedError


@pytest.fixture(scope="module")
def roster():
    return generate_roster(0, 40)


@pytest.fixture(scope="module")
def fitted(roster):
    return PPOScheduler(hidden_dim=16, n_heads=2, n_layers=1, epochs=2, random_state=3).fit(roster)


def states(roster, n=5):
    s = reset(1, roster)
    out = []
    for _ in range(n):
        s = step(s, NULL).next_state
        out.append(s)
    return out


def test_params_and_clone():
    est = PPOScheduler(hidden_dim=32, lr=1e-3)
    p = est.get_params()
    assert p["hidden_dim"] == 32 and p["lr"] == 1e-3 and p["epochs"] == 5000
    c = clone(est)
    assert c.get_params() == p and c is not est
    assert est.set_params(epochs=7).epochs == 7


def test_unfitted_estimator_refuses_to_predict(roster):
    with pytest.raises(NotFittedError):
        PPOScheduler().predict(states(roster, 1))


def test_fit_predict_score(fitted, roster):
    assert len(fitted.metrics_) == 2
    xs = states(roster)
    actions = fitted.predict(xs)
    assert len(actions) == 5
    for s, a in zip(xs, actions):
        assert a in enumerate_actions(s)
    probs = fitted.predict_proba(xs)
    assert all(abs(p.sum() - 1) < 1e-12 for p in probs)
    assert fitted.sample(xs, seed=1) == fitted.sample(xs, seed=1)
    assert fitted.score(roster, episodes=2) == fitted.score(roster, episodes=2)


def test_save_load(fitted, roster, tmp_path):
    fitted.save(tmp_path / "m.bin")
    again = PPOScheduler.load(tmp_path / "m.bin")
    assert again.get_params()["hidden_dim"] == 16
    assert again.evaluate(roster, episodes=2, seed=4) == fitted.evaluate(roster, episodes=2, seed=4)


def test_input_validation(roster, tmp_path):
    with pytest.raises(ValidationError):
        PPOScheduler(epochs=1).fit(generate_roster(0, 5))
    with pytest.raises(ValidationError):
        PPOScheduler(epochs=1).fit([1, 2, 3])
    with pytest.raises(ValueError):
        PPOScheduler(epochs=0).fit(roster)
    save_roster(roster, tmp_path / "n.json")
    h = HeuristicScheduler().fit(str(tmp_path / "n.json"))
    assert HeuristicScheduler().fit(roster_to_dict(roster)).strategy == "greedy_skill"
    with pytest.raises(ValidationError):
        h.predict([object()])


def test_heuristic_scheduler(roster):
    h = HeuristicScheduler("greedy_skill").fit(roster)
    acts = h.predict(states(roster))
    assert all(a is NULL or isinstance(a, Assign) for a in acts)
    r = HeuristicScheduler("random").fit(roster)
    assert h.score(roster, episodes=5) > r.score(roster, episodes=5)
    with pytest.raises(ValueError):
        HeuristicScheduler("nope").fit(roster)
    assert np.isfinite(h.evaluate(roster, episodes=2)["mean_travel_km"])
