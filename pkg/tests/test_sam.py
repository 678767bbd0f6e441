import numpy as np
import pytest

from mejem import autodiff as ad
from mejem.autodiff import Tensor
from mejem.errors import ConfigError, DivergenceError
from mejem.losses import cross_entropy
from mejem.model import forward, init_mlp
from mejem.sam import OptimizerState, SamConfig, lr_at, sam_perturbation, sam_step


def half_square(theta):
    return lambda: ad.scale(ad.sum(ad.square(theta)), 0.5)


def plain(**kw):
    base = dict(rho=0.0, beta=0.0, base_lr=0.1, momentum=0.0, warmup_steps=0, decay_epochs=[])
    base.update(kw)
    return SamConfig(**base)


@pytest.mark.parametrize("step, epoch, expected", [
    (0, 0, 1e-4),
    (999, 0, 0.1),
    (1000, 0, 0.1),
    (5000, 35, 0.02),
    (5000, 70, 0.004),
    (9000, 100, 0.0008),
])
def test_lr_schedule(step, epoch, expected):
    assert lr_at(step, epoch, SamConfig()) == pytest.approx(expected, rel=1e-12)


def test_perturbation_hand_value():
    np.testing.assert_allclose(sam_perturbation(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], atol=1e-15)


def test_perturbation_zero_gradient_guard():
    assert np.all(sam_perturbation(np.zeros(5), 0.05) == 0)


def test_perturbation_norm_equals_rho(rng):
    for _ in range(50):
        g = rng.normal(size=rng.integers(1, 20)) * 10 ** rng.uniform(-6, 6)
        rho = rng.uniform(0.01, 1)
        assert np.linalg.norm(sam_perturbation(g, rho)) == pytest.approx(rho, rel=1e-12)


def test_sam_step_on_scalar_quadratic():
    theta = Tensor([1.0], requires_grad=True)
    # g(1.1) = 1.1, theta = 1 - 0.1 * 1.1
    loss, diag = sam_step([theta], half_square(theta), OptimizerState.for_params([theta]), plain(rho=0.1))
    assert loss == 0.5
    assert theta.data[0] == pytest.approx(0.89, abs=1e-15)
    assert diag["lr"] == 0.1


def test_weight_decay_adds_two_beta_theta():
    theta = Tensor([1.0], requires_grad=True)
    sam_step([theta], half_square(theta), OptimizerState.for_params([theta]), plain(rho=0.1, beta=0.01))
    assert theta.data[0] == pytest.approx(0.888, abs=1e-15)


def test_update_uses_gradient_at_perturbed_point(rng):
    a = np.diag(rng.uniform(0.5, 3, size=4))
    theta0 = rng.normal(size=4)
    theta = Tensor(theta0.copy(), requires_grad=True)

    def quad_diag():
        return ad.scale(ad.sum(ad.mul(ad.mul(theta, theta), Tensor(np.diag(a)))), 0.5)

    sam_step([theta], quad_diag, OptimizerState.for_params([theta]), plain(rho=0.2))
    g = a @ theta0
    e = 0.2 * g / np.linalg.norm(g)
    np.testing.assert_allclose(theta.data, theta0 - 0.1 * (a @ (theta0 + e)), atol=1e-14)


def _mlp_problem(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(16, 2))
    y = rng.integers(0, 3, size=16)
    return init_mlp([2, 6, 3], seed), x, y


def test_rho_zero_matches_reference_sgd_momentum_bitwise():
    cfg = plain(base_lr=0.05, momentum=0.9, beta=5e-4, warmup_steps=10, decay_epochs=[1])
    for enabled in (True, False):
        params, x, y = _mlp_problem()
        ref, _, _ = _mlp_problem()
        state = OptimizerState.for_params(params.parameters())
        velocity = [np.zeros_like(p.data) for p in ref.parameters()]
        cfg.enabled = enabled
        for step in range(100):
            state.epoch = step // 50
            sam_step(params.parameters(), lambda: cross_entropy(forward(params, x), y), state, cfg)

            ref.zero_grad()
            cross_entropy(forward(ref, x), y).backward()
            lr = lr_at(step, step // 50, cfg)
            for p, v in zip(ref.parameters(), velocity):
                v *= 0.9
                v += p.grad + 2.0 * 5e-4 * p.data
                p.data -= lr * v
        for p, q in zip(params.parameters(), ref.parameters()):
            assert p.data.tobytes() == q.data.tobytes()


def test_parameters_restored_after_perturbation():
    theta = Tensor([2.0, -1.0], requires_grad=True)
    seen = []

    def loss_fn():
        seen.append(theta.data.copy())
        return half_square(theta)()

    sam_step([theta], loss_fn, OptimizerState.for_params([theta]), plain(rho=0.5, base_lr=1e-300))
    assert not np.array_equal(seen[0], seen[1])
    np.testing.assert_array_equal(theta.data, [2.0, -1.0])


def test_non_finite_loss_raises_divergence():
    theta = Tensor([np.inf], requires_grad=True)
    with pytest.raises(DivergenceError):
        sam_step([theta], half_square(theta), OptimizerState.for_params([theta]), plain())


def test_loss_fn_may_return_diagnostics():
    theta = Tensor([1.0], requires_grad=True)
    _, diag = sam_step([theta], lambda: (half_square(theta)(), {"ce": 1.5}),
                       OptimizerState.for_params([theta]), plain())
    assert diag == {"ce": 1.5, "lr": 0.1}


def test_sam_reduces_loss_on_mlp():
    params, x, y = _mlp_problem(3)
    state = OptimizerState.for_params(params.parameters())
    cfg = SamConfig(warmup_steps=5, decay_epochs=[])
    losses = [sam_step(params.parameters(), lambda: cross_entropy(forward(params, x), y), state, cfg)[0]
              for _ in range(60)]
    assert losses[-1] < 0.5 * losses[0]
    assert state.step == 60


@pytest.mark.parametrize("kw", [dict(rho=-1), dict(base_lr=0), dict(momentum=1.0), dict(decay_epochs=[5, 5])])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SamConfig(**kw).validate()
