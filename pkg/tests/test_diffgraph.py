import numpy as np
import pytest

from embodiment_imitation.diffgraph import tape as ad
from embodiment_imitation.diffgraph.gradients import (central_difference, grad_distance, grad_mlp,
                                                      relative_error)
from embodiment_imitation.distance import (DISTANCE_DEPENDENT, ROTATION_ONLY, DistanceWeights,
                                           distance_between)
from embodiment_imitation.embodiment import anthropomorphic_arm, lock_joints, planar_chain
from embodiment_imitation.nn import Mlp


def check_primitive(f, *shapes, rng, positive=False, tol=1e-5):
    inputs = [rng.uniform(0.5, 2.0, s) if positive else rng.uniform(-1.5, 1.5, s) for s in shapes]
    with ad.Tape() as tape:
        xs = [tape.watch(x) for x in inputs]
        out = ad.sum(f(*xs) * np.cos(np.arange(np.size(ad.value_of(f(*inputs))))).reshape(
            np.shape(ad.value_of(f(*inputs)))))
        grads = tape.gradient(out, xs)
    weights = np.cos(np.arange(np.size(ad.value_of(f(*inputs))))).reshape(np.shape(ad.value_of(f(*inputs))))
    for k, x in enumerate(inputs):
        def scalar(v, k=k):
            args = list(inputs)
            args[k] = v
            return float(np.sum(np.asarray(f(*args)) * weights))
        ref = central_difference(scalar, x)
        assert relative_error(grads[k], ref) < tol, f"input {k}"


PRIMITIVES = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
    "mul": (lambda a, b: a * b, [(3, 4), (3, 4)]),
    "div": (lambda a, b: a / b, [(3, 4), (4,)]),
    "sin": (ad.sin, [(5,)]),
    "cos": (ad.cos, [(5,)]),
    "tanh": (ad.tanh, [(5,)]),
    "exp": (ad.exp, [(5,)]),
    "square": (ad.square, [(5,)]),
    "lrelu": (lambda a: ad.leaky_relu(a, 0.1), [(6,)]),
    "clip": (lambda a: ad.clip(a, -0.9, 0.9), [(6,)]),
    "minimum": (ad.minimum, [(6,), (6,)]),
    "maximum": (ad.maximum, [(6,), (6,)]),
    "sum_axis": (lambda a: ad.sum(a, axis=0), [(3, 4)]),
    "mean_axes": (lambda a: ad.mean(a, axis=(-2, -1)), [(2, 3, 4)]),
    "norm": (lambda a: ad.norm(a, axis=-1), [(4, 3)]),
    "matmul": (ad.matmul, [(3, 4), (4, 2)]),
    "matmul_batched": (ad.matmul, [(2, 3, 3), (2, 3, 3)]),
    "matvec": (ad.matvec, [(2, 3, 3), (2, 3)]),
    "softmax_rows": (lambda a: ad.softmax(a, axis=-1), [(3, 4)]),
    "softmax_cols": (lambda a: ad.softmax(a, axis=-2), [(3, 4)]),
    "stack": (lambda a, b: ad.stack([a, b], axis=-2), [(3,), (3,)]),
    "concat": (lambda a, b: ad.concatenate([a, b], axis=0), [(3,), (2,)]),
    "index": (lambda a: a[..., 1], [(3, 4)]),
    "expand": (lambda a: ad.expand_dims(a, -2) * np.ones((3, 1)), [(4,)]),
    "swap": (lambda a: ad.swapaxes(a, -1, -2) @ np.arange(3.0), [(3, 4)]),
    "reshape": (lambda a: ad.reshape(a, (6,)) * np.arange(6.0), [(2, 3)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name, rng):
    f, shapes = PRIMITIVES[name]
    check_primitive(f, *shapes, rng=rng)


@pytest.mark.parametrize("f", [ad.log, ad.sqrt, lambda a: ad.power(a, 2.5)],
                         ids=["log", "sqrt", "pow"])
def test_positive_domain_primitives(f, rng):
    check_primitive(f, (5,), rng=rng, positive=True)


def test_constants_pass_through_as_numpy():
    out = ad.sin(np.array([0.0, 1.0]))
    assert isinstance(out, np.ndarray)


def test_gradient_of_sum_is_sum_of_gradients(rng):
    x0 = rng.normal(size=4)
    with ad.Tape() as tape:
        x = tape.watch(x0)
        f = ad.sum(ad.sin(x) * x)
        g = ad.sum(ad.exp(x) / 3.0)
        (gf,) = tape.gradient(f, [x])
        (gg,) = tape.gradient(g, [x])
        (gs,) = tape.gradient(f + g, [x])
    assert np.max(np.abs(gs - (gf + gg))) < 1e-12


def test_backward_is_repeatable(rng):
    x0 = rng.normal(size=(3, 3))
    with ad.Tape() as tape:
        x = tape.watch(x0)
        y = ad.sum(ad.matmul(x, x) * ad.tanh(x))
        before = ad.value_of(y).copy()
        g1 = tape.gradient(y, [x])[0]
        g2 = tape.gradient(y, [x])[0]
    np.testing.assert_array_equal(g1, g2)
    np.testing.assert_array_equal(ad.value_of(y), before)
    np.testing.assert_array_equal(x.value, x0)


def test_gradient_errors():
    with ad.Tape() as tape:
        x = tape.watch(np.ones(3))
        with pytest.raises(ValueError):
            tape.gradient(x * 2.0, [x])
    other = ad.Tape()
    y = other.watch(np.ones(1))
    with pytest.raises(ValueError):
        tape.gradient(ad.sum(y), [x])


def test_norm_at_zero_flags_singular():
    with ad.Tape() as tape:
        x = tape.watch(np.zeros(3))
        (g,) = tape.gradient(ad.norm(x), [x])
    assert tape.singular
    np.testing.assert_array_equal(g, 0.0)


# distance gradients ---------------------------------------------------------

def fd_distance(expert, learner, q, q_hat, w, corr, **kw):
    return central_difference(lambda x: distance_between(expert, q, learner, x, w, corr, **kw), q_hat)


def test_grad_zero_at_identical_pose(rng):
    spec = planar_chain(3)
    q = rng.uniform(-np.pi, np.pi, 3)
    res = grad_distance(spec, spec, q, q, ROTATION_ONLY, "static")
    assert res.value < 1e-15
    assert np.max(np.abs(res.grad)) < 1e-15


@pytest.mark.parametrize("corr", ["static", "softmin", "binary"])
@pytest.mark.parametrize("w", [ROTATION_ONLY, DistanceWeights(1.5, 1.0), DISTANCE_DEPENDENT],
                         ids=["rot", "state", "dd"])
def test_grad_matches_finite_differences(rng, corr, w):
    expert, learner = planar_chain(2), planar_chain(3, lengths=[0.2, 0.5, 0.3])
    for _ in range(5):
        q, q_hat = rng.uniform(-np.pi, np.pi, 2), rng.uniform(-np.pi, np.pi, 3)
        res = grad_distance(expert, learner, q, q_hat, w, corr)
        assert relative_error(res.grad, fd_distance(expert, learner, q, q_hat, w, corr)) < 1e-5


def test_grad_batched(rng):
    expert, learner = planar_chain(3), planar_chain(2)
    q, q_hat = rng.uniform(-np.pi, np.pi, (4, 3)), rng.uniform(-np.pi, np.pi, (4, 2))
    res = grad_distance(expert, learner, q, q_hat, ROTATION_ONLY, "softmin")
    for k in range(4):
        single = grad_distance(expert, learner, q[k], q_hat[k], ROTATION_ONLY, "softmin")
        np.testing.assert_allclose(res.grad[k], single.grad, atol=1e-13)


def test_grad_spatial_chain_with_locks(rng):
    arm = anthropomorphic_arm()
    learner = lock_joints(arm, {3, 6, 7})
    q = rng.uniform(-np.pi, np.pi, 7)
    q_hat = learner.expand(rng.uniform(-np.pi, np.pi, 4))
    res = grad_distance(arm, learner, q, q_hat, DistanceWeights(1.0, 1.0), "softmin")
    assert np.all(res.grad[[2, 5, 6]] == 0.0)
    free = learner.free_joints

    def f(x):
        return distance_between(arm, q, learner, learner.expand(x), DistanceWeights(1.0, 1.0), "softmin")

    assert relative_error(res.grad[free], central_difference(f, q_hat[free])) < 1e-5


def test_grad_finite_near_aligned_axes():
    spec = planar_chain(1)
    # x-axes nearly parallel: the arccos form has an infinite slope here
    res = grad_distance(spec, spec, [0.0], [1e-9], ROTATION_ONLY, "static")
    assert np.all(np.isfinite(res.grad))
    assert abs(res.grad[0]) < 1e-8


def test_grad_flags_coincident_points():
    spec = planar_chain(2)
    res = grad_distance(spec, spec, [0.3, 0.2], [0.3, 0.2], DistanceWeights(1.0, 1.0), "static")
    assert res.singular
    assert np.max(np.abs(res.grad)) < 1e-15


# network gradients ----------------------------------------------------------

def mse(target):
    return lambda out, x: ad.mean(ad.square(out - target))


def test_grad_mlp_zero_network():
    net = Mlp([3, 4, 2], "lrelu", "linear", seed=0)
    net.params = [np.zeros_like(p) for p in net.params]
    x = np.random.default_rng(0).normal(size=(5, 3))
    target = np.array([1.0, -2.0])
    _, grads = grad_mlp(net, x, mse(target))
    # outputs are zero, so d/d b_out of mean((0 - t)^2) = -2 t / n_out
    np.testing.assert_allclose(grads[-1], -2.0 * target / 2.0)
    for g in grads[:-1]:
        np.testing.assert_array_equal(g, 0.0)


def test_grad_mlp_finite_differences(rng):
    net = Mlp([3, 8, 8, 2], "lrelu", "tanh_pi", seed=3)
    x = rng.normal(size=(7, 3))
    target = rng.normal(size=2)
    _, grads = grad_mlp(net, x, mse(target))
    picks = [(k, tuple(rng.integers(0, s) for s in net.params[k].shape))
             for k in rng.integers(0, len(net.params), 10)]
    for k, idx in picks:
        def f(v, k=k, idx=idx):
            params = [p.copy() for p in net.params]
            params[k][idx] = v[0]
            return float(ad.value_of(mse(target)(net.forward(x, params), x)))
        ref = central_difference(f, [net.params[k][idx]])[0]
        assert abs(grads[k][idx] - ref) <= 1e-4 * max(abs(ref), 1e-6)


def test_grad_mlp_duplicated_input(rng):
    net = Mlp([2, 5, 1], "tanh", "linear", seed=1)
    x = rng.normal(size=(1, 2))

    def summed(out, inputs):
        return ad.sum(ad.square(out - 0.5))

    _, single = grad_mlp(net, x, summed)
    _, double = grad_mlp(net, np.vstack([x, x]), summed)
    # exact up to the rounding of the batch summation inside matmul
    for a, b in zip(single, double):
        np.testing.assert_allclose(b, 2.0 * a, rtol=1e-14, atol=1e-15)


def test_grad_mlp_reports_nonfinite():
    net = Mlp([1, 2, 1], seed=0)
    with np.errstate(divide="ignore"), pytest.raises(FloatingPointError):
        grad_mlp(net, np.ones((1, 1)), lambda out, x: ad.sum(ad.log(out * 0.0)))
