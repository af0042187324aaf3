import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fademl.errors import ConfigError, InputError
from fademl.filters import (FilterConfig, LAP_SIZES, LAR_RADII, adjoint_apply, apply, build_filter,
                            default_sweep, neighbor_offsets, total_variation)

SWEEP = default_sweep()
SWEEP_IDS = [c.label for c in SWEEP]


def oracle_matrix(cfg, h, w):
    """Averaging matrix built by brute force over the pixel grid."""
    if cfg.kind == "identity":
        return np.eye(h * w)
    big = 12
    pts = [(dy * dy + dx * dx, dy, dx) for dy in range(-big, big + 1) for dx in range(-big, big + 1)]
    pts.sort()
    if cfg.kind == "lar":
        offs = [(dy, dx) for d2, dy, dx in pts if d2 <= cfg.r ** 2]
    else:
        offs = [(dy, dx) for _, dy, dx in pts[:cfg.np + 1]]
    m = np.zeros((h * w, h * w))
    for i in range(h):
        for j in range(w):
            for dy, dx in offs:
                ii = min(max(i + dy, 0), h - 1)
                jj = min(max(j + dx, 0), w - 1)
                m[i * w + j, ii * w + jj] += 1.0 / len(offs)
    return m


def test_sweep_has_identity_five_lap_and_five_lar():
    assert SWEEP_IDS == ["identity"] + [f"lap_np{n}" for n in LAP_SIZES] + [f"lar_r{r}" for r in LAR_RADII]


@pytest.mark.parametrize("r,count", [(1, 5), (2, 13), (3, 29), (4, 49), (5, 81)])
def test_lar_disk_sizes(r, count):
    # lattice points with x^2 + y^2 <= r^2
    assert len(neighbor_offsets(FilterConfig("lar", r=r))) == count


@pytest.mark.parametrize("n", LAP_SIZES)
def test_lap_uses_centre_plus_np_neighbours(n):
    offs = neighbor_offsets(FilterConfig("lap", np=n))
    assert len(offs) == n + 1
    assert tuple(offs[0]) == (0, 0)
    assert len({tuple(o) for o in offs}) == n + 1


def test_lap4_is_the_four_neighbourhood():
    offs = {tuple(o) for o in neighbor_offsets(FilterConfig("lap", np=4))}
    assert offs == {(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)}


def test_lap4_centre_spike_on_3x3():
    x = np.zeros((1, 3, 3), np.float32)
    x[0, 1, 1] = 9
    y = apply(build_filter(FilterConfig("lap", np=4), (1, 3, 3)), x)
    assert y[0, 1, 1] == pytest.approx(1.8, abs=1e-6)


def test_lar1_interior_pixel_is_mean_of_five(rng):
    x = rng.uniform(size=(1, 5, 5)).astype(np.float32)
    y = apply(build_filter(FilterConfig("lar", r=1), (1, 5, 5)), x)
    want = (x[0, 2, 2] + x[0, 1, 2] + x[0, 3, 2] + x[0, 2, 1] + x[0, 2, 3]) / 5
    assert y[0, 2, 2] == pytest.approx(want, abs=1e-6)


def test_identity_is_exact_copy(rng):
    x = rng.uniform(size=(3, 8, 8)).astype(np.float32)
    f = build_filter(FilterConfig(), x.shape)
    y = apply(f, x)
    assert np.array_equal(y, x) and y is not x
    assert np.array_equal(adjoint_apply(f, x), x)


@pytest.mark.parametrize("cfg", SWEEP, ids=SWEEP_IDS)
def test_dense_oracle_on_5x5(cfg):
    f = build_filter(cfg, (2, 5, 5))
    m = oracle_matrix(cfg, 5, 5)
    np.testing.assert_allclose(f.dense_matrix(), m, atol=1e-12)
    ramp = np.arange(50, dtype=np.float64).reshape(2, 5, 5) / 49
    np.testing.assert_allclose(f.apply(ramp).reshape(2, -1), ramp.reshape(2, -1) @ m.T, atol=1e-12)
    np.testing.assert_allclose(f.adjoint_apply(ramp).reshape(2, -1), ramp.reshape(2, -1) @ m, atol=1e-12)


@pytest.mark.parametrize("cfg", SWEEP, ids=SWEEP_IDS)
@pytest.mark.parametrize("size", [8, 32])
def test_row_stochastic(cfg, size):
    f = build_filter(cfg, (1, size, size))
    np.testing.assert_allclose(f.row_sums(), 1.0, atol=1e-6)
    assert (f.dense_matrix() >= 0).all()


@pytest.mark.parametrize("cfg", SWEEP, ids=SWEEP_IDS)
def test_constant_image_is_preserved(cfg):
    f = build_filter(cfg, (3, 8, 8))
    x = np.full((3, 8, 8), 0.37, np.float32)
    np.testing.assert_allclose(f.apply(x), x, atol=1e-6)


def test_shape_mismatch_is_input_error():
    f = build_filter(FilterConfig("lar", r=2), (3, 8, 8))
    with pytest.raises(InputError):
        f.apply(np.zeros((3, 8, 9), np.float32))
    with pytest.raises(InputError):
        f.adjoint_apply(np.zeros((1, 8, 8), np.float32))


@pytest.mark.parametrize("kw", [dict(kind="lap"), dict(kind="lar"), dict(kind="lap", np=4, r=2),
                                dict(kind="identity", r=1), dict(kind="lap", np=0), dict(kind="blur"),
                                dict(kind="lar", r=1, boundary="zero")])
def test_contradictory_configs_rejected(kw):
    with pytest.raises(ConfigError):
        FilterConfig(**kw)


def test_nonstandard_parameters_are_flagged():
    assert FilterConfig("lap", np=6).nonstandard
    assert FilterConfig("lar", r=7).nonstandard
    assert not FilterConfig("lap", np=16).nonstandard


@pytest.mark.parametrize("text,label", [("identity", "identity"), ("lap:8", "lap_np8"), ("lap_np8", "lap_np8"),
                                        ("LAR:2", "lar_r2"), ("lar_r5", "lar_r5")])
def test_parse_labels(text, label):
    assert FilterConfig.parse(text).label == label


def test_filter_acts_per_channel(rng):
    f = build_filter(FilterConfig("lar", r=2), (3, 8, 8))
    x = rng.uniform(size=(3, 8, 8)).astype(np.float32)
    y = f.apply(x)
    for c in range(3):
        solo = np.zeros_like(x)
        solo[c] = x[c]
        np.testing.assert_allclose(f.apply(solo)[c], y[c], atol=1e-6)


def test_batch_matches_single(rng):
    f = build_filter(FilterConfig("lap", np=16), (3, 8, 8))
    xs = rng.uniform(size=(4, 3, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(f.apply(xs), np.stack([f.apply(x) for x in xs]), atol=1e-7)


configs = st.sampled_from(SWEEP)
sizes = st.sampled_from([8, 32])


@settings(max_examples=40, deadline=None)
@given(configs, sizes, st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(cfg, size, seed, a, b):
    rng = np.random.default_rng(seed)
    f = build_filter(cfg, (3, size, size))
    x = rng.uniform(size=(3, size, size)).astype(np.float32)
    y = rng.uniform(size=(3, size, size)).astype(np.float32)
    a, b = np.float32(a), np.float32(b)
    err = np.abs(f.apply(a * x + b * y) - a * f.apply(x) - b * f.apply(y)).max()
    assert err <= 1e-5


@settings(max_examples=40, deadline=None)
@given(configs, sizes, st.integers(0, 2**32 - 1))
def test_adjoint_identity(cfg, size, seed):
    rng = np.random.default_rng(seed)
    f = build_filter(cfg, (3, size, size))
    x = rng.uniform(size=(3, size, size)).astype(np.float32)
    y = rng.uniform(size=(3, size, size)).astype(np.float32)
    lhs = float(np.sum(f.apply(x).astype(np.float64) * y))
    rhs = float(np.sum(x.astype(np.float64) * f.adjoint_apply(y)))
    assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(configs, st.integers(0, 2**32 - 1))
def test_output_stays_within_input_range(cfg, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 3, size=(2, 8, 8)).astype(np.float32)
    y = build_filter(cfg, x.shape).apply(x)
    assert y.max() <= x.max() + 1e-6
    assert y.min() >= x.min() - 1e-6


@settings(max_examples=40, deadline=None)
@given(configs, st.integers(0, 2**32 - 1))
def test_total_variation_does_not_grow(cfg, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(3, 8, 8)).astype(np.float32)
    y = build_filter(cfg, x.shape).apply(x)
    assert total_variation(y) <= total_variation(x) + 1e-5
