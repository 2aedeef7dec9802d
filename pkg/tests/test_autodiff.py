import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from enhasr.autodiff import (
    GradCheckReport,
    ParameterStore,
    Tensor,
    concat,
    conv1d,
    conv2d,
    conv_transpose1d,
    depthwise_conv1d,
    dropout,
    embedding,
    gather_rows,
    grad_check,
    log_softmax,
    matmul,
    pad1d,
    prelu,
    relu,
    reshape,
    scaled_dot_attention,
    sigmoid,
    slice_rows,
    softmax,
    square,
    tmean,
    transpose,
    tsum,
)


def conv1d_oracle(x, w, stride, bias=None):
    """Direct sliding-dot-product summation, no vectorization tricks."""
    ci, length = x.shape
    co, _, k = w.shape
    frames = (length - k) // stride + 1
    out = np.zeros((co, frames))
    for o in range(co):
        for f in range(frames):
            acc = 0.0
            for i in range(ci):
                for kk in range(k):
                    acc += w[o, i, kk] * x[i, f * stride + kk]
            out[o, f] = acc + (bias[o] if bias is not None else 0.0)
    return out


def attention_oracle(q, k, v):
    """Direct exp/normalize, one row at a time."""
    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = np.array([q[i] @ k[j] / np.sqrt(d) for j in range(k.shape[0])])
        e = np.exp(scores)
        out[i] = (e / e.sum()) @ v
    return out


def store_with(name, value):
    s = ParameterStore()
    s.add(name, value)
    return s


# ---------------------------------------------------------------------------
# conv1d


def test_conv1d_frame_count_paper_constants():
    x = Tensor(np.zeros((1, 400), dtype=np.float64))
    w = Tensor(np.zeros((3, 1, 40), dtype=np.float64))
    assert conv1d(x, w, stride=20).shape == (3, 19)


def test_conv1d_zero_input_no_bias_is_zero():
    rng = np.random.default_rng(0)
    x = Tensor(np.zeros((2, 50)))
    w = Tensor(rng.normal(size=(4, 2, 5)))
    assert np.all(conv1d(x, w, stride=3).data == 0.0)


def test_conv1d_matches_direct_summation_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 4))
    w = rng.normal(size=(1, 1, 2))
    got = conv1d(Tensor(x), Tensor(w, requires_grad=True), stride=1).data
    want = conv1d_oracle(x, w, stride=1)
    np.testing.assert_allclose(got, want, rtol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_conv1d_matches_oracle_random_shapes(seed):
    rng = np.random.default_rng(seed)
    ci, co, k, stride = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 3)
    length = int(k + rng.integers(0, 10))
    x = rng.normal(size=(ci, length))
    w = rng.normal(size=(co, ci, k))
    b = rng.normal(size=co)
    got = conv1d(Tensor(x), Tensor(w), int(stride), bias=Tensor(b)).data
    np.testing.assert_allclose(got, conv1d_oracle(x, w, int(stride), b), rtol=1e-5, atol=1e-7)


def test_conv1d_shape_mismatch_names_dimension():
    x = Tensor(np.zeros((2, 10)))
    w = Tensor(np.zeros((3, 4, 2)))
    with pytest.raises(ValueError, match="channels_in"):
        conv1d(x, w, stride=1)


def test_conv1d_too_short_rejected():
    with pytest.raises(ValueError, match="shorter than kernel"):
        conv1d(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 1, 5))), stride=1)


# ---------------------------------------------------------------------------
# conv_transpose1d


def test_conv_transpose_length_inverts_conv_formula():
    x = Tensor(np.zeros((3, 19)))
    w = Tensor(np.zeros((3, 1, 40)))
    assert conv_transpose1d(x, w, stride=20).shape == (1, 400)


def test_conv_transpose_single_frame_is_scaled_kernel():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 1, 6))
    x = rng.normal(size=(2, 1))
    y = conv_transpose1d(Tensor(x), Tensor(w), stride=4).data
    want = (w[0, 0] * x[0, 0] + w[1, 0] * x[1, 0])[None, :]
    np.testing.assert_allclose(y, want, rtol=1e-6)


@pytest.mark.parametrize("seed", range(8))
def test_adjoint_identity_conv_pair(seed):
    rng = np.random.default_rng(seed)
    ci, co, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    stride = int(rng.integers(1, 3))
    frames = int(rng.integers(1, 6))
    length = (frames - 1) * stride + k
    x = rng.normal(size=(ci, length))
    y = rng.normal(size=(co, frames))
    w = rng.normal(size=(co, ci, k))
    ax = conv1d(Tensor(x), Tensor(w), stride).data          # A x
    aty = conv_transpose1d(Tensor(y), Tensor(np.transpose(w, (0, 1, 2))), stride)
    # conv_transpose weight layout is [in, out, k]: the same array indexed as w[o, i, k]
    aty = conv_transpose1d(Tensor(y), Tensor(w), stride).data
    lhs = float((ax * y).sum())
    rhs = float((x * aty).sum())
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), abs(rhs))


def test_adjoint_identity_matmul():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 5))
    x = rng.normal(size=(5, 3))
    y = rng.normal(size=(4, 3))
    lhs = float(((a @ x) * y).sum())
    rhs = float((x * (a.T @ y)).sum())
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# ---------------------------------------------------------------------------
# attention


def test_attention_single_key_returns_value_row():
    rng = np.random.default_rng(2)
    q = Tensor(rng.normal(size=(3, 4)))
    k = Tensor(rng.normal(size=(1, 4)))
    v = Tensor(rng.normal(size=(1, 2)))
    out = scaled_dot_attention(q, k, v).data
    np.testing.assert_allclose(out, np.repeat(v.data, 3, axis=0), rtol=1e-6)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(4)
    q = Tensor(rng.normal(size=(2, 3)))
    k = Tensor(np.tile(rng.normal(size=(1, 3)), (5, 1)))
    v = Tensor(rng.normal(size=(5, 2)))
    out = scaled_dot_attention(q, k, v).data
    np.testing.assert_allclose(out, np.tile(v.data.mean(axis=0), (2, 1)), rtol=1e-5)


def test_attention_matches_direct_softmax_oracle():
    rng = np.random.default_rng(5)
    q = rng.normal(size=(3, 4))
    k = rng.normal(size=(3, 4))
    v = rng.normal(size=(3, 2))
    got = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(got, attention_oracle(q, k, v), rtol=1e-10, atol=1e-12)


def test_attention_rows_sum_to_one_and_masked_contribute_zero():
    rng = np.random.default_rng(6)
    scores = Tensor(rng.normal(size=(4, 6)))
    blocked = rng.random((4, 6)) < 0.4
    blocked[:, 0] = False  # keep one key per query
    y = softmax(scores, blocked=blocked).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(y[blocked] == 0.0)


def test_attention_fully_masked_row_rejected():
    q = Tensor(np.zeros((2, 3)))
    k = Tensor(np.zeros((4, 3)))
    v = Tensor(np.zeros((4, 3)))
    blocked = np.zeros((2, 4), dtype=bool)
    blocked[1, :] = True
    with pytest.raises(ValueError, match="masked"):
        scaled_dot_attention(q, k, v, blocked=blocked)


# ---------------------------------------------------------------------------
# grad_check oracle


def test_grad_check_quadratic_is_exact():
    rng = np.random.default_rng(0)
    s = store_with("asr.x", rng.normal(size=(5,)))

    def f(store):
        x = store["asr.x"]
        return tsum(x * x)

    report = grad_check(f, s, step=1e-5, tolerance=1e-9, rng=rng)
    assert report.passed, report
    assert report.max_rel_error < 1e-9


def test_grad_check_reports_nonfinite():
    s = store_with("asr.x", np.array([0.5]))

    def f(store):
        # log of a negative number once perturbed below zero
        from enhasr.autodiff import log
        x = store["asr.x"]
        return tsum(log(x - 0.5 + 1e-9))

    report = grad_check(f, s, step=1e-3, tolerance=1e-4)
    assert not report.passed
    assert any("non-finite" in msg for msg in report.failures)


OPS_FOR_GRADCHECK = [
    "add", "sub", "mul", "div", "matmul", "relu", "prelu", "sigmoid",
    "exp", "log", "sqrt", "square", "sum", "mean", "reshape", "transpose",
    "pad1d", "concat", "slice", "softmax", "log_softmax", "gather",
    "conv1d", "conv1d_bias", "conv_transpose1d", "depthwise", "conv2d",
    "embedding", "attention", "dropout",
]


def build_op_loss(op: str, rng: np.random.Generator):
    """Returns (store, f) where f reduces the op output to a scalar."""
    from enhasr import autodiff as ad

    s = ParameterStore()
    if op in ("add", "sub", "mul", "div"):
        s.add("asr.a", rng.normal(size=(3, 4)))
        s.add("asr.b", rng.normal(size=(3, 4)) + (3.0 if op == "div" else 0.0))
        fn = getattr(ad, op)
        return s, lambda st: tsum(fn(st["asr.a"], st["asr.b"]) * fn(st["asr.a"], st["asr.b"]))
    if op == "matmul":
        s.add("asr.a", rng.normal(size=(3, 4)))
        s.add("asr.b", rng.normal(size=(4, 2)))
        return s, lambda st: tsum(square(st["asr.a"] @ st["asr.b"]))
    if op == "relu":
        s.add("asr.a", rng.normal(size=(3, 4)) + 0.05)  # keep away from the kink
        return s, lambda st: tsum(square(relu(st["asr.a"])))
    if op == "prelu":
        s.add("asr.a", rng.normal(size=(3, 4)) + 0.05)
        s.add("asr.alpha", rng.uniform(0.1, 0.5, size=(3,)))
        return s, lambda st: tsum(square(prelu(st["asr.a"], st["asr.alpha"])))
    if op == "sigmoid":
        s.add("asr.a", rng.normal(size=(3, 4)))
        return s, lambda st: tsum(square(sigmoid(st["asr.a"])))
    if op == "exp":
        s.add("asr.a", rng.normal(size=(3,)))
        from enhasr.autodiff import exp as texp
        return s, lambda st: tsum(texp(st["asr.a"]))
    if op == "log":
        s.add("asr.a", rng.uniform(0.5, 2.0, size=(3,)))
        from enhasr.autodiff import log as tlog
        return s, lambda st: tsum(tlog(st["asr.a"]))
    if op == "sqrt":
        s.add("asr.a", rng.uniform(0.5, 2.0, size=(3,)))
        from enhasr.autodiff import sqrt as tsqrt
        return s, lambda st: tsum(tsqrt(st["asr.a"]))
    if op == "square":
        s.add("asr.a", rng.normal(size=(3,)))
        return s, lambda st: tsum(square(st["asr.a"]))
    if op == "sum":
        s.add("asr.a", rng.normal(size=(3, 4)))
        return s, lambda st: tsum(square(tsum(st["asr.a"], axis=1)))
    if op == "mean":
        s.add("asr.a", rng.normal(size=(3, 4)))
        return s, lambda st: tsum(square(tmean(st["asr.a"], axis=0)))
    if op == "reshape":
        s.add("asr.a", rng.normal(size=(3, 4)))
        return s, lambda st: tsum(square(reshape(st["asr.a"], (2, 6))))
    if op == "transpose":
        s.add("asr.a", rng.normal(size=(3, 4)))
        return s, lambda st: tsum(square(transpose(st["asr.a"]) @ st["asr.a"]))
    if op == "pad1d":
        s.add("asr.a", rng.normal(size=(2, 5)))
        return s, lambda st: tsum(square(pad1d(st["asr.a"], 2, 3, axis=1)))
    if op == "concat":
        s.add("asr.a", rng.normal(size=(2, 3)))
        s.add("asr.b", rng.normal(size=(2, 3)))
        return s, lambda st: tsum(square(concat([st["asr.a"], st["asr.b"]], axis=0)))
    if op == "slice":
        s.add("asr.a", rng.normal(size=(5, 3)))
        return s, lambda st: tsum(square(slice_rows(st["asr.a"], 1, 4)))
    if op == "softmax":
        s.add("asr.a", rng.normal(size=(3, 5)))
        return s, lambda st: tsum(square(softmax(st["asr.a"])))
    if op == "log_softmax":
        s.add("asr.a", rng.normal(size=(3, 5)))
        return s, lambda st: tsum(square(log_softmax(st["asr.a"])))
    if op == "gather":
        s.add("asr.a", rng.normal(size=(4, 5)))
        ids = rng.integers(0, 5, size=4)
        return s, lambda st: tsum(square(gather_rows(st["asr.a"], ids)))
    if op == "conv1d":
        s.add("asr.x", rng.normal(size=(2, 12)))
        s.add("asr.w", rng.normal(size=(3, 2, 4)))
        return s, lambda st: tsum(square(conv1d(st["asr.x"], st["asr.w"], stride=2)))
    if op == "conv1d_bias":
        s.add("asr.x", rng.normal(size=(2, 12)))
        s.add("asr.w", rng.normal(size=(3, 2, 4)))
        s.add("asr.b", rng.normal(size=(3,)))
        return s, lambda st: tsum(square(conv1d(st["asr.x"], st["asr.w"], 2, bias=st["asr.b"])))
    if op == "conv_transpose1d":
        s.add("asr.x", rng.normal(size=(3, 5)))
        s.add("asr.w", rng.normal(size=(3, 2, 4)))
        return s, lambda st: tsum(square(conv_transpose1d(st["asr.x"], st["asr.w"], stride=2)))
    if op == "depthwise":
        s.add("asr.x", rng.normal(size=(3, 10)))
        s.add("asr.w", rng.normal(size=(3, 3)))
        return s, lambda st: tsum(square(depthwise_conv1d(st["asr.x"], st["asr.w"], dilation=2, padding=2)))
    if op == "conv2d":
        s.add("asr.x", rng.normal(size=(2, 7, 6)))
        s.add("asr.w", rng.normal(size=(3, 2, 3, 3)))
        s.add("asr.b", rng.normal(size=(3,)))
        return s, lambda st: tsum(square(conv2d(st["asr.x"], st["asr.w"], (2, 2), (1, 1), bias=st["asr.b"])))
    if op == "embedding":
        s.add("asr.table", rng.normal(size=(6, 4)))
        ids = rng.integers(0, 6, size=5)
        return s, lambda st: tsum(square(embedding(st["asr.table"], ids)))
    if op == "attention":
        s.add("asr.q", rng.normal(size=(3, 4)))
        s.add("asr.k", rng.normal(size=(5, 4)))
        s.add("asr.v", rng.normal(size=(5, 2)))
        blocked = np.zeros((3, 5), dtype=bool)
        blocked[0, 3:] = True
        return s, lambda st: tsum(square(scaled_dot_attention(st["asr.q"], st["asr.k"], st["asr.v"], blocked=blocked)))
    if op == "dropout":
        s.add("asr.a", rng.normal(size=(4, 4)))
        return s, lambda st: tsum(square(dropout(st["asr.a"], 0.3, np.random.default_rng(123))))
    raise AssertionError(op)


@pytest.mark.parametrize("op", OPS_FOR_GRADCHECK)
def test_every_op_passes_grad_check(op):
    for seed in range(3):
        rng = np.random.default_rng(1000 + seed)
        store, f = build_op_loss(op, rng)
        report = grad_check(f, store, step=1e-5, tolerance=1e-4,
                            rng=np.random.default_rng(seed), max_coords=6)
        assert report.passed, f"{op} seed {seed}: {report}"


# ---------------------------------------------------------------------------
# engine behaviour


def test_gradient_accumulates_over_shared_subgraph():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1 = 5
    y.backward()
    np.testing.assert_allclose(x.grad, [5.0])


def test_eval_mode_builds_no_graph():
    a = Tensor(np.ones((2, 2)))
    b = Tensor(np.ones((2, 2)))
    c = a @ b
    assert not c.requires_grad and c._backward is None


def test_determinism_same_inputs_bitwise_equal():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 20)).astype(np.float32)
    w = rng.normal(size=(4, 3, 5)).astype(np.float32)
    y1 = conv1d(Tensor(x), Tensor(w), stride=2).data
    y2 = conv1d(Tensor(x.copy()), Tensor(w.copy()), stride=2).data
    assert y1.tobytes() == y2.tobytes()


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_adjoint_identity_property(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 4))
    frames = int(rng.integers(1, 5))
    ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = rng.normal(size=(ci, (frames - 1) * stride + k))
    y = rng.normal(size=(co, frames))
    w = rng.normal(size=(co, ci, k))
    lhs = float((conv1d(Tensor(x), Tensor(w), stride).data * y).sum())
    rhs = float((x * conv_transpose1d(Tensor(y), Tensor(w), stride).data).sum())
    scale = max(1.0, abs(lhs), abs(rhs))
    assert abs(lhs - rhs) <= 1e-10 * scale


def test_parameter_store_partitions_and_freeze():
    s = ParameterStore()
    s.add("se.enc.w", np.ones(3))
    s.add("sslr.conv0.w", np.ones(3))
    with pytest.raises(KeyError, match="unknown partition"):
        s.add("bogus.w", np.ones(3))
    with pytest.raises(KeyError, match="duplicate"):
        s.add("se.enc.w", np.ones(3))
    s.set_frozen("sslr", True)
    assert s.is_frozen("sslr.conv0.w")
    assert not s.is_frozen("se.enc.w")


def test_parameter_store_partition_bytes_detects_change():
    s = ParameterStore()
    s.add("se.w", np.ones(4))
    before = s.partition_bytes("se")
    assert before == s.partition_bytes("se")
    s["se.w"].data[0] = 2.0
    assert before != s.partition_bytes("se")
