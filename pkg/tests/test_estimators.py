import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dexkit.assets import default_split
from dexkit.estimators import PointNetPretrainer, PPOAgent, check_point_features
from dexkit.nn.checkpoint import read_checkpoint
from dexkit.pretrain import generate_dam, to_dataset
from dexkit.sensing import SensingConfig


@pytest.fixture(scope="module")
def dam():
    m = default_split("laptop")
    m.objects = m.objects[:1]
    return to_dataset(generate_dam(m, 12, seed=0, sensing=SensingConfig(n_observed=48, n_imagined=16, width=40,
                                                                        height=40)))


def test_check_point_features():
    assert check_point_features(np.zeros((2, 5, 4))).dtype == np.float32
    for bad in (np.zeros((2, 5, 3)), np.zeros((5, 4)), np.full((1, 2, 4), np.nan)):
        with pytest.raises(ValueError):
            check_point_features(bad)


def test_pretrainer_params_and_clone():
    est = PointNetPretrainer(method="recon-dam", hidden=8, epochs=3)
    p = est.get_params()
    assert p["method"] == "recon-dam" and p["hidden"] == 8 and p["epochs"] == 3
    c = clone(est).set_params(epochs=1)
    assert c.epochs == 1 and est.epochs == 3


def test_pretrainer_seg_fit_predict(dam, tmp_path):
    est = PointNetPretrainer("seg-dam", hidden=8, out_dim=16, epochs=2, batch_size=4).fit(dam.features, dam.labels)
    assert len(est.history_) == 3
    assert est.transform(dam.features[:3]).shape == (3, 16)
    pred = est.predict(dam.features[:3])
    assert pred.shape == dam.labels[:3].shape and pred.max() < 4
    path = est.save(tmp_path / "enc.dxck")
    assert set(read_checkpoint(path)) == set(est.encoder_state())


def test_pretrainer_cls_and_guards(dam):
    y = np.arange(len(dam.features)) % 3
    est = PointNetPretrainer("cls-pmm", hidden=8, out_dim=16, epochs=1, batch_size=4).fit(dam.features, y)
    assert set(np.unique(est.predict(dam.features))) <= {0, 1, 2}
    with pytest.raises(ValueError):
        PointNetPretrainer("seg-dam").fit(dam.features)
    with pytest.raises(ValueError):
        PointNetPretrainer("cls-pmm").fit(dam.features, y[:2])
    with pytest.raises(ValueError):
        PointNetPretrainer("magic").fit(dam.features)
    with pytest.raises(NotFittedError):
        PointNetPretrainer().transform(dam.features)
    recon = PointNetPretrainer("recon-dam", hidden=8, out_dim=16, epochs=0).fit(dam.features)
    with pytest.raises(AttributeError):
        recon.predict(dam.features)


def test_ppo_agent_fit_predict_score():
    m = default_split("laptop")
    agent = PPOAgent(hidden=8, out_dim=16, n_observed=32, n_imagined=16, resolution=32, episode_horizon=4,
                     total_steps=8, n_envs=2, rollout_horizon=4, minibatch_size=8, epochs=1)
    assert agent.get_params()["total_steps"] == 8
    agent.fit(m)
    assert len(agent.log_) == 1
    obs = [e.reset() for e in agent.trainer_.venv.envs]
    act = agent.predict(obs)
    assert act.shape == (2, 22) and np.abs(act).max() <= 1
    assert 0 <= agent.score(m, n_episodes=2) <= 1
    with pytest.raises(TypeError):
        PPOAgent().fit("laptop")
    with pytest.raises(ValueError):
        PPOAgent(task="faucet").fit(m)
    with pytest.raises(NotFittedError):
        PPOAgent().predict(obs)
