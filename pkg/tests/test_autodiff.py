import numpy as np
import pytest

from sparsecap import autodiff as ad
from sparsecap.autodiff import Adam, AdamState, Tensor, adam_step
from sparsecap.gradcheck import check_gradients, max_rel_error


def rng_for(seed):
    return np.random.default_rng(seed)


# ----------------------------------------------------------------------
# elementwise / reduction ops
# ----------------------------------------------------------------------
@pytest.mark.parametrize("seed", range(5))
def test_elementwise_gradients(seed):
    rng = rng_for(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4)) + 3.0  # keep denominators away from 0

    def build(x, y):
        z = (x * y + x / y - y + 2.0 * x) * 0.5
        return (z * z).sum()

    assert check_gradients(build, [a, b], h=1e-4) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_unary_gradients(seed):
    rng = rng_for(seed)
    a = rng.uniform(0.5, 2.0, size=(2, 5))

    def build(x):
        z = x.exp().log() + x.sqrt() + x.tanh() + x.sigmoid() + x.relu() + x.abs()
        return (z ** 2).mean()

    assert check_gradients(build, [a], h=1e-4) < 1e-6


def test_broadcasting_gradients():
    rng = rng_for(7)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(3, 1))

    def build(x, y):
        return ((x + y) * (x * y)).sum()

    assert check_gradients(build, [a, b]) < 1e-6


def test_clip_gradient_masks_outside():
    x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    y = x.clip(0.0, 1.0).sum()
    y.backward()
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])


def test_getitem_reshape_transpose_concat():
    rng = rng_for(3)
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(2, 5))

    def build(x, y):
        top = x[:2, :]
        z = ad.concat([top, y], axis=0)
        z = z.transpose((1, 0)).reshape(5 * 4)
        return (z * z).sum()

    assert check_gradients(build, [a, b]) < 1e-6


def test_softmax_rows_sum_to_one_and_grad():
    rng = rng_for(11)
    a = rng.normal(size=(6, 3))
    s = ad.softmax(Tensor(a), axis=1)
    assert np.allclose(s.data.sum(axis=1), 1.0, atol=1e-12)

    w = rng.normal(size=(6, 3))

    def build(x):
        return (ad.softmax(x, axis=1) * w).sum()

    assert check_gradients(build, [a]) < 1e-6


def test_linmap_matches_matmul():
    rng = rng_for(5)
    A = rng.normal(size=(3, 3))
    x = rng.normal(size=(3, 7))
    out = ad.linmap(A, Tensor(x))
    assert np.allclose(out.data, A @ x)

    def build(t):
        return (ad.linmap(A, t) ** 2).sum()

    assert check_gradients(build, [x]) < 1e-6


# ----------------------------------------------------------------------
# conv2d
# ----------------------------------------------------------------------
def test_conv2d_identity_kernel():
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.full((1, 1, 1, 1), 2.0))
    out = ad.conv2d(x, w)
    assert out.shape == (1, 3, 3)
    assert np.allclose(out.data, 2.0)


def test_conv2d_output_shape():
    x = Tensor(np.zeros((1, 4, 4)))
    w = Tensor(np.zeros((2, 1, 3, 3)))
    out = ad.conv2d(x, w, stride=2, padding=1)
    assert out.shape == (2, 2, 2)


def test_conv2d_channel_mismatch_reports_dims():
    x = Tensor(np.zeros((3, 4, 4)))
    w = Tensor(np.zeros((2, 1, 3, 3)))
    with pytest.raises(ValueError, match="3 channels"):
        ad.conv2d(x, w)


@pytest.mark.parametrize("seed,stride,padding", [(0, 1, 0), (1, 2, 1), (2, 1, 1), (3, 2, 0)])
def test_conv2d_gradients(seed, stride, padding):
    rng = rng_for(seed)
    x = rng.normal(size=(2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3)) * 0.5
    b = rng.normal(size=(3,))

    def build(xt, wt, bt):
        return (ad.conv2d(xt, wt, bt, stride=stride, padding=padding) ** 2).sum()

    assert check_gradients(build, [x, w, b]) < 1e-4


def test_conv2d_batched_equals_loop():
    rng = rng_for(9)
    x = rng.normal(size=(4, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    batched = ad.conv2d(Tensor(x), Tensor(w), padding=1)
    for i in range(4):
        single = ad.conv2d(Tensor(x[i]), Tensor(w), padding=1)
        assert np.allclose(batched.data[i], single.data)


# ----------------------------------------------------------------------
# conv3d
# ----------------------------------------------------------------------
def test_conv3d_identity():
    x = Tensor(np.ones((1, 2, 2, 2)))
    w = Tensor(np.ones((1, 1, 1, 1, 1)))
    out = ad.conv3d(x, w)
    assert np.allclose(out.data, x.data)


def test_conv3d_shape():
    x = Tensor(np.zeros((1, 8, 8, 8)))
    w = Tensor(np.zeros((1, 1, 3, 3, 3)))
    out = ad.conv3d(x, w, stride=2, padding=1)
    assert out.shape == (1, 4, 4, 4)


@pytest.mark.parametrize("seed", range(3))
def test_conv3d_gradients(seed):
    rng = rng_for(seed)
    x = rng.normal(size=(2, 4, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3, 3)) * 0.3
    b = rng.normal(size=(2,))

    def build(xt, wt, bt):
        return (ad.conv3d(xt, wt, bt, stride=2, padding=1) ** 2).sum()

    assert check_gradients(build, [x, w, b], subset=40) < 1e-4


# ----------------------------------------------------------------------
# group norm
# ----------------------------------------------------------------------
def test_group_norm_constant_input_is_zero():
    x = Tensor(np.full((4, 5, 5), 3.7))
    out = ad.group_norm(x, groups=1)
    assert np.allclose(out.data, 0.0, atol=1e-3)


def test_group_norm_two_values():
    x = Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1))
    out = ad.group_norm(x, groups=1)
    assert np.allclose(out.data.reshape(-1), [-1.0, 1.0], atol=1e-4)


def test_group_norm_rejects_indivisible():
    x = Tensor(np.zeros((5, 3, 3)))
    with pytest.raises(ValueError, match="divisible"):
        ad.group_norm(x, groups=2)


@pytest.mark.parametrize("seed", range(3))
def test_group_norm_gradients(seed):
    rng = rng_for(seed)
    x = rng.normal(size=(4, 3, 3))
    w = rng.uniform(0.5, 1.5, size=(4,))
    b = rng.normal(size=(4,))

    def build(xt, wt, bt):
        y = ad.group_norm(xt, 2, wt, bt)
        return (y * rng_for(seed + 100).normal(size=y.shape)).sum()

    assert check_gradients(build, [x, w, b]) < 1e-3


def test_group_norm_batched_3d():
    rng = rng_for(4)
    x = rng.normal(size=(2, 4, 3, 2, 2))  # [B,C,D,H,W]
    w = np.ones(4)
    b = np.zeros(4)

    def build(xt, wt, bt):
        return (ad.group_norm(xt, 2, wt, bt, spatial_dims=3) ** 2).sum()

    assert check_gradients(build, [x, w, b], subset=40) < 1e-3


# ----------------------------------------------------------------------
# pooling / resampling
# ----------------------------------------------------------------------
def test_maxpool_over_set_single_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = ad.maxpool_over_set([x])
    assert np.array_equal(out.data, x.data)


def test_maxpool_over_set_permutation_invariant():
    rng = rng_for(1)
    ts = [Tensor(rng.normal(size=(3, 4))) for _ in range(5)]
    ref = ad.maxpool_over_set(ts).data
    perm = [ts[i] for i in [4, 2, 0, 3, 1]]
    assert np.array_equal(ad.maxpool_over_set(perm).data, ref)


def test_maxpool_over_set_gradient_routing():
    vals = [1.0, 5.0, 3.0]
    ts = [Tensor(np.array([v]), requires_grad=True) for v in vals]
    out = ad.maxpool_over_set(ts).sum()
    out.backward()
    assert np.allclose(out.data, 5.0)
    assert ts[0].grad[0] == 0.0 and ts[1].grad[0] == 1.0 and ts[2].grad[0] == 0.0


def test_maxpool_over_set_tie_goes_to_lowest_index():
    ts = [Tensor(np.array([2.0]), requires_grad=True) for _ in range(3)]
    ad.maxpool_over_set(ts).sum().backward()
    assert ts[0].grad[0] == 1.0 and ts[1].grad[0] == 0.0 and ts[2].grad[0] == 0.0


def test_maxpool_over_set_rejects_empty():
    with pytest.raises(ValueError):
        ad.maxpool_over_set([])


@pytest.mark.parametrize("factor", [2, 3])
def test_upsample_nearest2d(factor):
    rng = rng_for(2)
    x = rng.normal(size=(2, 3, 4))
    out = ad.upsample_nearest2d(Tensor(x), factor)
    assert out.shape == (2, 3 * factor, 4 * factor)
    assert np.allclose(out.data[:, 0, 0], x[:, 0, 0])

    def build(t):
        return (ad.upsample_nearest2d(t, factor) ** 2).sum()

    assert check_gradients(build, [x]) < 1e-6


def test_upsample_nearest3d_gradient():
    rng = rng_for(2)
    x = rng.normal(size=(1, 2, 2, 3))

    def build(t):
        return (ad.upsample_nearest3d(t, 2) ** 2).sum()

    assert check_gradients(build, [x]) < 1e-6


def test_box_filter_constant_preserved():
    x = Tensor(np.full((1, 7, 9), 4.2))
    out = ad.box_filter2d(x, radius=2)
    assert np.allclose(out.data, 4.2, atol=1e-12)


def test_box_filter_matches_bruteforce():
    rng = rng_for(8)
    x = rng.normal(size=(5, 6))
    r = 2
    out = ad.box_filter2d(Tensor(x), r).data
    brute = np.zeros_like(x)
    for i in range(5):
        for j in range(6):
            ys = slice(max(0, i - r), min(5, i + r + 1))
            xs = slice(max(0, j - r), min(6, j + r + 1))
            brute[i, j] = x[ys, xs].mean()
    assert np.allclose(out, brute, atol=1e-12)

    def build(t):
        return (ad.box_filter2d(t, r) ** 2).sum()

    assert check_gradients(build, [x]) < 1e-6


# ----------------------------------------------------------------------
# bilinear sampling
# ----------------------------------------------------------------------
def test_sample2d_exact_at_pixels():
    rng = rng_for(6)
    m = rng.normal(size=(3, 5, 7))
    coords = np.array([[2.0, 3.0], [0.0, 0.0], [6.0, 4.0]])
    out = ad.sample2d(Tensor(m), coords)
    assert out.shape == (3, 3)
    assert np.allclose(out.data[:, 0], m[:, 3, 2])
    assert np.allclose(out.data[:, 1], m[:, 0, 0])
    assert np.allclose(out.data[:, 2], m[:, 4, 6])


def test_sample2d_out_of_bounds_zero():
    m = np.ones((1, 4, 4))
    coords = np.array([[-2.0, 1.0], [1.0, 10.0]])
    out = ad.sample2d(Tensor(m), coords)
    assert np.allclose(out.data, 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_sample2d_gradients_map_and_coords(seed):
    rng = rng_for(seed)
    m = rng.normal(size=(2, 6, 6))
    # keep fractional parts away from the bilinear kinks
    coords = rng.uniform(0.8, 4.2, size=(10, 2))
    coords = np.floor(coords) + rng.uniform(0.25, 0.75, size=coords.shape)

    def build(mt, ct):
        return (ad.sample2d(mt, ct) ** 2).sum()

    assert check_gradients(build, [m, coords]) < 1e-4


# ----------------------------------------------------------------------
# composition / tape behavior
# ----------------------------------------------------------------------
def test_deep_composition_has_finite_gradients():
    rng = rng_for(12)
    x = Tensor(rng.normal(size=(2, 8, 8)), requires_grad=True)
    w1 = Tensor(rng.normal(size=(4, 2, 3, 3)) * 0.4, requires_grad=True)
    w2 = Tensor(rng.normal(size=(4, 4, 3, 3)) * 0.4, requires_grad=True)
    h = ad.conv2d(x, w1, stride=2, padding=1).relu()
    h = ad.group_norm(h, 2)
    h = ad.conv2d(h, w2, padding=1).sigmoid()
    h = ad.upsample_nearest2d(h, 2)
    loss = (h * h).mean()
    loss.backward()
    for t in (x, w1, w2):
        assert np.all(np.isfinite(t.grad))


def test_no_grad_disables_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = (Tensor(np.ones(3), requires_grad=True) * 2.0).sum()
    assert y._backward is None and not y.requires_grad
    z = (x * 2.0).sum()
    assert z.requires_grad


def test_grad_present_iff_requires_grad():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3))
    assert a.grad is not None and b.grad is None
    a.set_requires_grad(False)
    assert a.grad is None


# ----------------------------------------------------------------------
# Adam
# ----------------------------------------------------------------------
def test_adam_zero_gradient_keeps_param():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st = AdamState.for_param(p)
    adam_step(p, st)
    assert np.allclose(p.data, [1.0, -2.0])


def test_adam_first_step_matches_hand_computation():
    # m_hat = g, v_hat = g^2 on step one, so the move is ~lr regardless of g scale
    p = Tensor(np.array([1.0]), requires_grad=True)
    st = AdamState.for_param(p, lr=0.001)
    p.grad[:] = 1.0
    adam_step(p, st)
    delta = 1.0 - p.data[0]
    assert abs(delta - 0.001) < 1e-6
    assert st.step_count == 1
    assert np.allclose(p.grad, 0.0)  # cleared


def test_adam_constant_gradient_monotone_decrease():
    p = Tensor(np.array([5.0]), requires_grad=True)
    st = AdamState.for_param(p, lr=0.01)
    prev = p.data[0]
    for _ in range(100):
        p.grad[:] = 2.0
        adam_step(p, st)
        assert p.data[0] < prev
        prev = p.data[0]
    assert st.step_count == 100


def test_adam_rejects_missing_grad():
    p = Tensor(np.array([1.0]))  # no grad accumulator
    st = AdamState(m=np.zeros(1), v=np.zeros(1))
    with pytest.raises(ValueError):
        adam_step(p, st)


def test_adam_class_drives_quadratic_to_minimum():
    p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    for _ in range(300):
        loss = ((p - 1.0) ** 2).sum()
        loss.backward()
        opt.step()
    assert np.allclose(p.data, [1.0, 1.0], atol=1e-3)
