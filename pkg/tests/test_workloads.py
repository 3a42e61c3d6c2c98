"""Workload correctness: exact quadratic algebra, transformer gradients
against central differences, and bit-determinism of the data pipeline."""

import numpy as np
import pytest

from whitenopt.workloads import (
    TINY_LM,
    VALIDATION_BATCHES,
    WorkloadSpec,
    _transition_table,
    make_workload,
    noisy_quadratic_spec,
    tiny_lm_spec,
)


def small_lm_spec(**kw):
    kw.setdefault("layers", 2)
    kw.setdefault("d_model", 16)
    kw.setdefault("heads", 2)
    kw.setdefault("vocab", 24)
    kw.setdefault("seq_len", 8)
    kw.setdefault("batch_size", 4)
    return tiny_lm_spec(**kw)


def central_difference(wl, params, batch, name, idx, h=1e-5):
    p = dict(params)
    p[name] = params[name].copy()
    p[name][idx] += h
    up = wl.loss_only(p, batch)
    p[name][idx] -= 2.0 * h
    down = wl.loss_only(p, batch)
    return (up - down) / (2.0 * h)


def check_gradients(wl, params, batch, coords_per_param=4, seed=0):
    rng = np.random.default_rng(seed)
    loss, grads = wl.loss_and_grads(params, batch)
    assert set(grads) == set(params)
    for name in sorted(params):
        g = grads[name]
        assert g.shape == params[name].shape
        flat = rng.choice(g.size, size=min(coords_per_param, g.size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, g.shape)
            est = central_difference(wl, params, batch, name, idx)
            assert abs(est - g[idx]) <= 1e-4 * max(abs(est), abs(g[idx])) + 1e-8, (
                f"{name}{idx}: analytic {g[idx]:.3e} vs fd {est:.3e}"
            )
    return loss, grads


# ---------------------------------------------------------------------------
# spec validation


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(kind="mystery")
    with pytest.raises(ValueError):
        tiny_lm_spec(warmup_steps=50, total_steps=50)
    with pytest.raises(ValueError):
        tiny_lm_spec(d_model=30, heads=4)
    with pytest.raises(ValueError):
        noisy_quadratic_spec(dim=4, curvature_spectrum=(1.0, 2.0))
    with pytest.raises(ValueError):
        noisy_quadratic_spec(dim=2, curvature_spectrum=(1.0, -2.0))
    with pytest.raises(ValueError):
        noisy_quadratic_spec(noise_scale=-0.1)


def test_default_geometry():
    s = tiny_lm_spec()
    assert (s.layers, s.d_model, s.heads, s.vocab, s.seq_len) == (2, 64, 4, 96, 64)
    assert (s.batch_size, s.total_steps, s.warmup_steps) == (32, 2000, 40)
    q = noisy_quadratic_spec()
    assert q.dim == 8
    assert q.curvature_spectrum[0] == 1.0
    assert abs(q.curvature_spectrum[-1] - 100.0) < 1e-12


# ---------------------------------------------------------------------------
# noisy quadratic


def test_quadratic_gradient_is_hessian_times_theta():
    wl = make_workload(noisy_quadratic_spec(dim=6, curvature_spectrum=(1, 2, 3, 4, 5, 6)))
    params = wl.init_params(3)
    loss, grads = wl.loss_and_grads(params, wl.next_batch(0))
    theta = params["quadratic"]
    want = wl.hessian @ theta
    assert np.array_equal(grads["quadratic"], want)
    assert abs(loss - 0.5 * np.sum(theta * want)) < 1e-12
    assert abs(loss - wl.validation_loss(params)) < 1e-15


def test_quadratic_spectrum_exact():
    spec = noisy_quadratic_spec(dim=5, curvature_spectrum=(0.5, 1.0, 4.0, 9.0, 25.0))
    wl = make_workload(spec)
    assert np.allclose(wl.hessian, wl.hessian.T, atol=1e-14)
    lam = np.linalg.eigvalsh(wl.hessian)
    assert np.allclose(lam, sorted(spec.curvature_spectrum), atol=1e-10)


def test_quadratic_noise_is_seeded_and_additive():
    clean = make_workload(noisy_quadratic_spec(dim=4, curvature_spectrum=(1, 2, 3, 4)))
    noisy = make_workload(
        noisy_quadratic_spec(dim=4, curvature_spectrum=(1, 2, 3, 4), noise_scale=0.25)
    )
    params = clean.init_params(0)
    assert clean.next_batch(7) is None
    b = noisy.next_batch(7)
    b2 = noisy.next_batch(7)
    assert np.array_equal(b, b2)
    _, g_clean = clean.loss_and_grads(params, None)
    loss_n, g_noisy = noisy.loss_and_grads(params, b)
    assert np.allclose(g_noisy["quadratic"] - g_clean["quadratic"], 0.25 * b, atol=1e-15)
    # validation ignores the noise channel entirely
    assert abs(noisy.validation_loss(params) - loss_n) < 1e-12


# ---------------------------------------------------------------------------
# transformer gradients


def test_lm_init_loss_near_uniform():
    wl = make_workload(small_lm_spec())
    loss = wl.loss_only(wl.init_params(0), wl.next_batch(0))
    assert abs(loss - np.log(wl.spec.vocab)) < 0.3


def test_lm_loss_only_matches_loss_and_grads():
    wl = make_workload(small_lm_spec())
    params = wl.init_params(1)
    batch = wl.next_batch(5)
    loss, _ = wl.loss_and_grads(params, batch)
    assert abs(loss - wl.loss_only(params, batch)) < 1e-12


def test_lm_gradients_match_finite_differences_at_init():
    wl = make_workload(small_lm_spec())
    params = wl.init_params(0)
    check_gradients(wl, params, wl.next_batch(0), seed=11)


def test_lm_gradients_match_finite_differences_after_training():
    # vocab small enough that a few thousand tokens carry real signal
    wl = make_workload(small_lm_spec(vocab=12))
    params = wl.init_params(0)

    def mean_loss(p):
        return np.mean([wl.loss_only(p, wl.next_batch(i)) for i in range(8)])

    init_loss = mean_loss(params)
    steps = 300
    for step in range(steps):
        _, grads = wl.loss_and_grads(params, wl.next_batch(step))
        lr = 0.02 * 0.5 * (1.0 + np.cos(np.pi * step / steps))
        for k, g in grads.items():
            params[k] = params[k] - lr * g / (np.sqrt(np.mean(g * g)) + 1e-8)
    trained_loss = mean_loss(params)
    assert trained_loss < init_loss - 0.01
    assert trained_loss < np.log(wl.spec.vocab)
    check_gradients(wl, params, wl.next_batch(0), seed=12)


def test_lm_gradients_touch_every_parameter():
    wl = make_workload(small_lm_spec())
    _, grads = wl.loss_and_grads(wl.init_params(0), wl.next_batch(0))
    for name, g in grads.items():
        assert np.max(np.abs(g)) > 0.0, f"dead gradient on {name}"


def test_lm_duplicate_batch_rows_leave_gradients_unchanged():
    wl = make_workload(small_lm_spec())
    params = wl.init_params(2)
    inputs, targets = wl.next_batch(0)
    single = (inputs[:1], targets[:1])
    doubled = (np.concatenate([inputs[:1]] * 2), np.concatenate([targets[:1]] * 2))
    loss1, g1 = wl.loss_and_grads(params, single)
    loss2, g2 = wl.loss_and_grads(params, doubled)
    assert abs(loss1 - loss2) < 1e-12
    for name in g1:
        assert np.allclose(g1[name], g2[name], atol=1e-12), name


# ---------------------------------------------------------------------------
# data pipeline


def test_lm_batch_determinism_across_instances():
    a = make_workload(small_lm_spec(data_seed=4))
    b = make_workload(small_lm_spec(data_seed=4))
    for step in (0, 1, 17):
        xa, ya = a.next_batch(step)
        xb, yb = b.next_batch(step)
        assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
    params = a.init_params(0)
    la, ga = a.loss_and_grads(params, a.next_batch(3))
    lb, gb = b.loss_and_grads(params, b.next_batch(3))
    assert la == lb
    for name in ga:
        assert np.array_equal(ga[name], gb[name])


def test_lm_batch_cache_returns_same_object():
    a = make_workload(small_lm_spec())
    b = make_workload(small_lm_spec())
    assert a.next_batch(0)[0] is b.next_batch(0)[0]


def test_lm_targets_are_shifted_inputs():
    wl = make_workload(small_lm_spec())
    inputs, targets = wl.next_batch(0)
    assert inputs.shape == targets.shape == (4, 8)
    assert np.array_equal(inputs[:, 1:], targets[:, :-1])
    assert inputs.min() >= 0 and targets.max() < wl.spec.vocab


def test_lm_data_seed_isolation():
    base = make_workload(small_lm_spec(data_seed=0))
    other = make_workload(small_lm_spec(data_seed=1))
    assert not np.array_equal(base.next_batch(0)[0], other.next_batch(0)[0])
    # data_seed never leaks into parameter init
    pa = base.init_params(0)
    pb = other.init_params(0)
    for name in pa:
        assert np.array_equal(pa[name], pb[name])


def test_lm_validation_batches_are_held_out():
    wl = make_workload(small_lm_spec(data_seed=9))
    val = wl.validation_batches()
    assert len(val) == VALIDATION_BATCHES
    train0 = wl.next_batch(0)[0]
    for inputs, _ in val:
        assert not np.array_equal(inputs, train0)
    again = wl.validation_batches()
    for (xa, _), (xb, _) in zip(val, again):
        assert xa is xb


def test_transition_table_is_a_second_order_cdf():
    cum = _transition_table(0, 12)
    assert cum.shape == (12, 12, 12)
    assert np.allclose(cum[:, :, -1], 1.0, atol=1e-12)
    assert np.all(np.diff(cum, axis=2) >= 0.0)
    # conditioning on the older character must matter
    assert not np.allclose(cum[0, 3], cum[1, 3], atol=1e-3)


# ---------------------------------------------------------------------------
# parameter naming


def test_param_class_covers_every_tensor():
    wl = make_workload(small_lm_spec())
    params = wl.init_params(0)
    classes = {name: wl.param_class(name) for name in params}
    matrix = [n for n, c in classes.items() if c.startswith(("attention", "mlp"))]
    assert len(matrix) == 4 * wl.spec.layers
    assert classes["embed.token"] == classes["embed.position"] == "embed"
    assert classes["output_head"] == "output_head"
    assert classes["final_ln.scale"] == "layernorm"
    assert classes["block0.ln2.shift"] == "layernorm"
    with pytest.raises(KeyError):
        wl.param_class("block0.mystery")


def test_param_shapes():
    s = small_lm_spec()
    params = make_workload(s).init_params(0)
    C, V, T = s.d_model, s.vocab, s.seq_len
    assert params["block0.attn_qkv"].shape == (C, 3 * C)
    assert params["block1.mlp_in"].shape == (C, 4 * C)
    assert params["block1.mlp_out"].shape == (4 * C, C)
    assert params["embed.token"].shape == (V, C)
    assert params["embed.position"].shape == (T, C)
    assert params["output_head"].shape == (C, V)
    for p in params.values():
        assert p.dtype == np.float64
