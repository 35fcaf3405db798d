import numpy as np
import pytest

from wfrfm import nn
from wfrfm.infer import (
    Trajectory,
    export_trajectory,
    integrate,
    predicted_weights,
    trajectory_action,
)
from wfrfm.train import ModelPair


def constant_models(d, v=None, g=0.0):
    """Hand-built nets: velocity outputs the constant vector v, growth the
    constant g (zero weights, bias in the output layer)."""
    vel = nn.init([d + 1, 4, d], seed=0)
    gro = nn.init([d + 1, 4, 1], seed=0)
    for net in (vel, gro):
        for w in net.weights:
            w[:] = 0.0
    if v is not None:
        vel.biases[-1][:] = v
    gro.biases[-1][:] = g
    return ModelPair(velocity=vel, growth=gro, delta=1.0, times=[0.0, 1.0])


def linear_velocity_model():
    """1-D velocity v(x) = x via a single linear layer; zero growth."""
    vel = nn.Mlp(layer_dims=[2, 1], weights=[np.array([[1.0], [0.0]])],
                 biases=[np.zeros(1)])
    gro = nn.init([2, 4, 1], seed=0)
    for w in gro.weights:
        w[:] = 0.0
    return ModelPair(velocity=vel, growth=gro, delta=1.0, times=[0.0, 1.0])


def test_integrate_zero_fields():
    models = constant_models(2)
    X0 = np.array([[1.0, -1.0], [0.5, 2.0]])
    traj = integrate(models, X0, 0.0, 1.0, dt=0.1)
    assert np.allclose(traj.states[-1], X0)
    assert np.allclose(traj.masses, 1.0)
    assert traj.times[-1] == 1.0


def test_integrate_constant_growth_exact():
    c = 0.7
    models = constant_models(2, g=c)
    traj = integrate(models, np.zeros((3, 2)), 0.5, 2.5, dt=0.13)
    assert traj.times[-1] == pytest.approx(2.5)
    assert np.allclose(traj.masses[-1], np.exp(c * 2.0), rtol=1e-12)


def test_integrate_linear_ode_first_order():
    models = linear_velocity_model()
    errs = []
    for dt in (0.01, 0.005, 0.0025):
        traj = integrate(models, np.array([[1.0]]), 0.0, 1.0, dt=dt)
        errs.append(abs(traj.states[-1][0, 0] - np.e))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_integrate_default_dt():
    models = constant_models(1)
    traj = integrate(models, np.zeros((1, 1)), 0.0, 2.0)
    assert len(traj.times) == 401
    assert traj.times[-1] == 2.0


def test_integrate_validation():
    models = constant_models(1)
    with pytest.raises(ValueError):
        integrate(models, np.zeros((1, 1)), 1.0, 0.5)
    with pytest.raises(ValueError):
        integrate(models, np.zeros((1, 1)), 0.0, 1.0, dt=0.0)


def test_integrate_nonfinite_abort():
    models = constant_models(1)
    models.velocity.biases[-1][:] = np.nan
    with pytest.raises(FloatingPointError):
        integrate(models, np.zeros((1, 1)), 0.0, 1.0, dt=0.5)


def test_action_zero_fields():
    models = constant_models(2)
    traj = integrate(models, np.zeros((4, 2)), 0.0, 1.0, dt=0.05)
    assert trajectory_action(traj, models, delta=1.0) == 0.0


def test_action_constant_velocity():
    c = np.array([0.6, -0.8])
    models = constant_models(2, v=c)
    t_end = 3.0
    traj = integrate(models, np.zeros((5, 2)), 0.0, t_end, dt=0.01)
    expected = 0.5 * float(c @ c) * t_end * t_end
    assert trajectory_action(traj, models, 1.0) == pytest.approx(expected, rel=1e-9)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory(times=np.array([0.0, 0.0]),
                   states=np.zeros((2, 1, 1)), masses=np.ones((2, 1)))
    with pytest.raises(ValueError):
        Trajectory(times=np.array([0.0, 1.0]),
                   states=np.zeros((2, 1, 1)), masses=np.zeros((2, 1)))


def test_predicted_weights_trivial():
    models = constant_models(2)
    traj = integrate(models, np.zeros((4, 2)), 0.0, 1.0, dt=0.25)
    recs = predicted_weights(traj, [0.0, 0.5, 1.0])
    for rec in recs:
        assert np.allclose(rec["weights"], 0.25)
        assert rec["mass_ratio"] == pytest.approx(1.0)


def test_predicted_weights_doubling():
    models = constant_models(1, g=np.log(2.0))
    traj = integrate(models, np.zeros((3, 1)), 0.0, 1.0, dt=0.1)
    (rec,) = predicted_weights(traj, [1.0])
    assert rec["mass_ratio"] == pytest.approx(2.0, rel=1e-12)


def test_predicted_weights_out_of_range():
    models = constant_models(1)
    traj = integrate(models, np.zeros((1, 1)), 0.0, 1.0, dt=0.5)
    with pytest.raises(ValueError):
        predicted_weights(traj, [2.0])


def test_export_trajectory(tmp_path):
    models = constant_models(2, v=np.array([1.0, 0.0]))
    traj = integrate(models, np.zeros((3, 2)), 0.0, 1.0, dt=0.5)
    export_trajectory(traj, str(tmp_path), checkpoint_times=[0.0, 1.0])
    final = np.loadtxt(tmp_path / "checkpoint_1.tsv", delimiter="\t", ndmin=2)
    assert final.shape == (3, 5)
    assert np.allclose(final[:, 2], 1.0)  # x coordinate advanced by v t
    assert np.allclose(final[:, 4], 1.0)  # masses
