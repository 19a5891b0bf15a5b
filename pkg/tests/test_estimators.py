import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pfrlab.env import EnvConfig, RecoveryEnv
from pfrlab.estimators import RecoveryAgent

ENV = EnvConfig(episode_length=6)


@pytest.fixture(scope="module")
def fitted():
    return RecoveryAgent(iterations=2, epochs=1, n_envs=2, eval_every=1, eval_episodes=2).fit(ENV)


def observations(n=4):
    env = RecoveryEnv(ENV)
    obs = [env.reset(0).observation]
    for _ in range(n - 1):
        obs.append(env.step([0] * env.n_vnfs).observation)
    return np.array(obs)


def test_params_roundtrip_and_clone():
    est = RecoveryAgent(kind="sac", gamma=1.0, credit="per_vnf")
    params = est.get_params()
    assert params["kind"] == "sac" and params["gamma"] == 1.0
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(iterations=3)
    assert est.iterations == 3


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        RecoveryAgent().predict(np.zeros((1, 69)))


def test_fit_sets_attributes(fitted):
    assert fitted.n_iter_ == 2 and fitted.n_features_in_ == 69
    assert fitted.schema_hash_ == ENV.schema().hash
    assert any(r["phase"] == "eval" for r in fitted.history_)


def test_predict_shapes(fitted):
    seq = observations(4)
    a = fitted.predict(seq)
    assert a.shape == (4, 9) and a.min() >= 0 and a.max() <= 3
    a_seq = fitted.predict(seq[None])
    assert a_seq.shape == (1, 4, 9)
    p = fitted.predict_proba(seq)
    assert p.shape == (4, 9, 4)
    np.testing.assert_allclose(p.sum(-1), 1.0, rtol=1e-5)
    assert np.array_equal(a, p.argmax(-1))


def test_predict_validates_input(fitted):
    with pytest.raises(ValueError, match="width"):
        fitted.predict(np.zeros((2, 10)))
    bad = observations(2)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        fitted.predict(bad)


def test_score_is_a_fraction(fitted):
    s = fitted.score(episodes=3)
    assert np.isnan(s) or 0.0 <= s <= 1.0
    assert fitted.score(episodes=3) == s or np.isnan(s)
