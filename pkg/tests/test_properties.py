"""Randomized invariants over the numeric core (hypothesis)."""

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from sensmix.core import ClassSpace, ImageRgb, SoftLabel, crop_to_multiple, quantize8
from sensmix.metrics import plcc, srcc
from sensmix.mixing import RegionMap, assign_lambdas, mix_images
from sensmix.sensitivity import pool_mean, upsample_bilinear

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, width=64)


def region_and_dsm(draw):
    h = draw(st.integers(1, 12))
    w = draw(st.integers(1, 12))
    n = draw(st.integers(1, 3))
    owner = draw(hnp.arrays(np.int64, (h, w), elements=st.integers(0, n - 1)))
    dsm = draw(
        hnp.arrays(np.float64, (h, w), elements=st.floats(0.0, 10.0, allow_nan=False, width=64))
    )
    return dsm, RegionMap(owner, n)


@st.composite
def region_cases(draw):
    return region_and_dsm(draw)


class TestLambdaProperties:
    @given(region_cases())
    def test_simplex(self, case):
        dsm, region = case
        lam = assign_lambdas(dsm, region)
        assert lam.shape == (region.n_sources,)
        assert np.all(lam >= 0.0)
        assert abs(lam.sum() - 1.0) <= 1e-9

    @given(region_cases(), st.sampled_from([1e-6, 1e6]))
    def test_scale_invariance(self, case, s):
        dsm, region = case
        assert np.allclose(assign_lambdas(dsm * s, region), assign_lambdas(dsm, region), atol=1e-9)

    @given(region_cases())
    def test_zero_mass_falls_back_to_area(self, case):
        dsm, region = case
        lam = assign_lambdas(np.zeros_like(dsm), region)
        areas = np.bincount(region.owner.ravel(), minlength=region.n_sources) / dsm.size
        assert np.allclose(lam, areas, atol=1e-12)


class TestUpsampleProperties:
    @given(
        hnp.arrays(
            np.float64,
            st.tuples(st.integers(1, 6), st.integers(1, 6)),
            elements=st.floats(0.0, 1.0, allow_nan=False, width=64),
        ),
        st.sampled_from([2, 4, 8]),
    )
    def test_bounds_and_shape(self, grid, p):
        full = upsample_bilinear(grid, p)
        assert full.shape == (grid.shape[0] * p, grid.shape[1] * p)
        assert full.min() >= grid.min() - 1e-12
        assert full.max() <= grid.max() + 1e-12

    @given(st.floats(0.0, 1.0, allow_nan=False, width=64), st.sampled_from([2, 8]))
    def test_constant_grid(self, v, p):
        full = upsample_bilinear(np.full((3, 4), v), p)
        assert np.all(full == v)


class TestPoolingProperties:
    @given(
        st.integers(1, 4),
        st.integers(1, 4),
        st.sampled_from([2, 4]),
        st.integers(0, 2**32 - 1),
    )
    def test_mass_conservation(self, gh, gw, p, seed):
        field = np.random.default_rng(seed).uniform(0.0, 1.0, size=(gh * p, gw * p))
        pooled = pool_mean(field, p)
        assert pooled.shape == (gh, gw)
        assert abs(pooled.mean() - field.mean()) <= 1e-9


def vectors(min_n=3):
    return hnp.arrays(
        np.float64, st.integers(min_n, 40), elements=finite
    ).filter(lambda v: np.ptp(v) > 1e-9)


class TestMetricProperties:
    @given(st.tuples(vectors(), st.integers(0, 2**32 - 1)))
    def test_srcc_symmetry(self, case):
        u, seed = case
        v = np.random.default_rng(seed).permutation(u) + 1.0
        if np.ptp(v) <= 1e-9:
            return
        assert srcc(u, v) == srcc(v, u)

    @given(vectors(), st.floats(0.5, 4.0), st.floats(-5.0, 5.0))
    def test_srcc_monotone_invariance(self, u, a, b):
        # coarse grid keeps distinct values far enough apart that the
        # affine map cannot create new ties in float arithmetic
        v = np.round(np.linspace(0.0, 1.0, u.size) * u, 3)
        if np.ptp(v) <= 1e-9:
            return
        assert srcc(u, a * v + b) == srcc(u, v)

    @given(vectors(), st.floats(0.5, 4.0), st.floats(-5.0, 5.0))
    def test_plcc_affine_invariance(self, u, a, b):
        v = np.cumsum(np.abs(u)) + 1.0
        if np.ptp(v) <= 1e-9:
            return
        base = plcc(u, v)
        assert abs(plcc(u, a * v + b) - base) <= 1e-9
        assert abs(plcc(u, -a * v + b) + base) <= 1e-9

    @given(vectors())
    def test_self_correlation(self, u):
        assert srcc(u, u) == 1.0
        assert abs(plcc(u, u) - 1.0) <= 1e-12


class TestImageProperties:
    @given(
        hnp.arrays(
            np.float64,
            st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
            elements=st.floats(0.0, 1.0, allow_nan=False, width=64),
        )
    )
    def test_quantize8_idempotent(self, px):
        once = quantize8(ImageRgb(px))
        twice = quantize8(once)
        assert np.array_equal(once.pixels, twice.pixels)
        assert np.all((once.pixels * 255) == np.round(once.pixels * 255))

    @given(st.integers(1, 40), st.integers(1, 40), st.sampled_from([1, 4, 8]), st.integers(0, 99))
    def test_crop_to_multiple(self, h, w, p, seed):
        if h < p or w < p:
            return
        px = np.random.default_rng(seed).uniform(size=(h, w, 3))
        out = crop_to_multiple(ImageRgb(px), p)
        assert out.height == (h // p) * p
        assert out.width == (w // p) * p
        again = crop_to_multiple(out, p)
        assert np.array_equal(again.pixels, out.pixels)


class TestMixProperties:
    @given(st.integers(0, 2**32 - 1), st.integers(2, 3))
    @settings(max_examples=40)
    def test_every_pixel_comes_from_its_owner(self, seed, n):
        rng = np.random.default_rng(seed)
        h, w = 16, 16
        sources = [ImageRgb(rng.uniform(size=(h, w, 3))) for _ in range(n)]
        rects = []
        for _ in range(n - 1):
            rw, rh = int(rng.integers(1, w)), int(rng.integers(1, h))
            x0, y0 = int(rng.integers(0, w - rw + 1)), int(rng.integers(0, h - rh + 1))
            rects.append((x0, y0, rw, rh))
        mixed, region = mix_images(sources, rects)
        stack = np.stack([s.pixels for s in sources])
        gathered = stack[region.owner, np.arange(h)[:, None], np.arange(w)[None, :]]
        assert np.array_equal(mixed.pixels, gathered)
        assert region.owner.max() < n and region.owner.min() >= 0


class TestLabelProperties:
    @given(
        hnp.arrays(
            np.float64, st.just(41), elements=st.floats(0.0, 1.0, allow_nan=False, width=64)
        ).filter(lambda p: p.sum() > 1e-6)
    )
    def test_marginals_are_distributions(self, raw):
        space = ClassSpace(tuple(f"d{i}" for i in range(8)), 5)
        label = SoftLabel(raw / raw.sum(), space)
        type_m, level_m = label.marginals()
        assert type_m.shape == (9,) and level_m.shape == (6,)
        assert abs(type_m.sum() - 1.0) <= 1e-9
        assert abs(level_m.sum() - 1.0) <= 1e-9
        assert type_m[0] == label.probs[0] and level_m[0] == label.probs[0]

    def test_class_space_bijection(self):
        space = ClassSpace(("a", "b", "c"), 4)
        seen = set()
        for t in space.dtype_names:
            for level in range(1, space.n_levels + 1):
                idx = space.index_of(t, level)
                assert space.spec_at(idx) == (t, level)
                seen.add(idx)
        assert seen == set(range(1, space.num_classes))
        assert space.spec_at(0) is None
