import numpy as np
import pytest
from scipy import ndimage

from polyrefine import geometry as geo

CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def oracle_levels(mask):
    """Independent level oracle: literal repeated erosion / dilation."""
    fg = mask.astype(bool)
    levels = np.zeros(mask.shape, dtype=np.int64)
    cur = fg.copy()
    lvl = 0
    while cur.any():
        nxt = ndimage.binary_erosion(cur, CROSS, border_value=1)
        levels[cur & ~nxt] = lvl
        cur = nxt
        lvl += 1
    cur = fg.copy()
    lvl = 0
    while not cur.all():
        nxt = ndimage.binary_dilation(cur, CROSS, border_value=0)
        lvl += 1
        levels[nxt & ~cur] = lvl
        cur = nxt
    return levels


def random_mask(rng, h=64, w=64):
    # union of a few random rectangles and discs, with fg and bg guaranteed
    m = np.zeros((h, w), dtype=bool)
    for _ in range(rng.integers(1, 5)):
        if rng.random() < 0.5:
            r0, c0 = rng.integers(0, h - 2), rng.integers(0, w - 2)
            r1, c1 = rng.integers(r0 + 1, h), rng.integers(c0 + 1, w)
            m[r0:r1, c0:c1] = True
        else:
            cy, cx = rng.integers(2, h - 2), rng.integers(2, w - 2)
            rad = rng.integers(1, min(h, w) // 3)
            yy, xx = np.mgrid[0:h, 0:w]
            m |= (xx - cx) ** 2 + (yy - cy) ** 2 <= rad**2
    if m.all():
        m[0, 0] = False
    if not m.any():
        m[h // 2, w // 2] = True
    return m


class TestFastMarching:
    def test_worked_example_5x5(self):
        m = np.zeros((5, 5), dtype=bool)
        m[1:4, 1:4] = True
        lv = geo.level_map(m)
        expected = np.array(
            [
                [2, 1, 1, 1, 2],
                [1, 0, 0, 0, 1],
                [1, 0, 1, 0, 1],
                [1, 0, 0, 0, 1],
                [2, 1, 1, 1, 2],
            ]
        )
        np.testing.assert_array_equal(lv, expected)
        psi = geo.fast_marching_map(m)
        assert sorted(set(psi.ravel())) == [0.0, 0.5, 1.0]

    def test_boundary_pixels_have_psi_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = random_mask(rng)
            psi = geo.fast_marching_map(m)
            boundary = geo.boundary_pixels(m)
            assert (psi[boundary] == 1.0).all()
            assert (psi[~boundary] < 1.0).all()
            assert psi.min() >= 0.0 and psi.max() <= 1.0

    def test_levels_match_morphology_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            m = random_mask(rng)
            np.testing.assert_array_equal(geo.level_map(m), oracle_levels(m))

    def test_degenerate_masks_rejected(self):
        with pytest.raises(ValueError):
            geo.fast_marching_map(np.ones((4, 4), dtype=bool))
        with pytest.raises(ValueError):
            geo.fast_marching_map(np.zeros((4, 4), dtype=bool))


class TestThreshold:
    def test_high_map_all_true(self):
        assert geo.threshold(np.full((3, 3), 0.9), 0.5).all()

    def test_low_map_all_false(self):
        assert not geo.threshold(np.full((3, 3), 0.1), 0.5).any()

    def test_tie_counts_as_foreground(self):
        assert geo.threshold(np.full((2, 2), 0.5), 0.5).all()

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            geo.threshold(np.zeros((2, 2)), 0.0)


class TestMorphClose:
    def test_solid_rectangle_unchanged(self):
        m = np.zeros((10, 14), dtype=bool)
        m[2:8, 3:11] = True
        np.testing.assert_array_equal(geo.morph_close(m), m)

    def test_single_hole_filled(self):
        m = np.zeros((9, 9), dtype=bool)
        m[2:7, 2:7] = True
        holed = m.copy()
        holed[4, 4] = False
        np.testing.assert_array_equal(geo.morph_close(holed), m)

    def test_idempotent_on_random_masks(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            m = rng.random((24, 24)) < 0.45
            once = geo.morph_close(m)
            np.testing.assert_array_equal(geo.morph_close(once), once)

    def test_border_touching_mask_survives(self):
        m = np.zeros((6, 6), dtype=bool)
        m[0, 0] = True
        np.testing.assert_array_equal(geo.morph_close(m), m)


class TestComponents:
    def test_single_blob_centroid(self):
        m = np.zeros((12, 12), dtype=bool)
        m[4:7, 5:9] = True
        comps = geo.major_components(m)
        assert len(comps) == 1
        assert comps[0].centroid == (7.0, 5.5)
        assert comps[0].area == 12

    def test_small_component_dropped(self):
        m = np.zeros((60, 60), dtype=bool)
        m[5:45, 5:30] = True  # area 1000
        m[50:52, 50:55] = True  # area 10 < 0.05 * 1000
        comps = geo.major_components(m, 0.05)
        assert len(comps) == 1
        assert comps[0].area == 1000

    def test_equal_blobs_both_kept(self):
        m = np.zeros((20, 40), dtype=bool)
        m[4:8, 4:8] = True
        m[12:16, 30:34] = True
        assert len(geo.major_components(m)) == 2

    def test_empty_mask_gives_empty_list(self):
        assert geo.major_components(np.zeros((5, 5), dtype=bool)) == []


class TestConnectComponents:
    def test_single_component_unchanged(self):
        m = np.zeros((12, 12), dtype=bool)
        m[2:6, 2:6] = True
        comps = geo.major_components(m)
        np.testing.assert_array_equal(geo.connect_components(comps, 12), m)

    def test_band_thickness_h28(self):
        m = np.zeros((28, 70), dtype=bool)
        m[5:8, 5:8] = True
        m[5:8, 50:53] = True
        joined = geo.connect_components(geo.major_components(m), 28)
        # 28 / 7 = 4-pixel-thick band between the blobs
        assert joined[:, 25].sum() == 4

    def test_result_single_component(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = np.zeros((30, 50), dtype=bool)
            for _ in range(rng.integers(2, 5)):
                r, c = rng.integers(1, 26), rng.integers(1, 46)
                m[r : r + 3, c : c + 3] = True
            joined = geo.connect_components(geo.major_components(m), 30)
            joined = geo.four_connect_repair(joined)
            _, n = ndimage.label(joined, structure=CROSS)
            assert n == 1


class TestTraceContour:
    def test_single_pixel_unit_square(self):
        m = np.zeros((4, 4), dtype=bool)
        m[1, 2] = True
        poly = geo.trace_contour(m)
        np.testing.assert_array_equal(poly, [[2, 1], [3, 1], [3, 2], [2, 2]])
        assert geo.polygon_area(poly) == 1.0

    def test_rectangle_area_exact(self):
        m = np.zeros((30, 40), dtype=bool)
        m[5:25, 3:33] = True
        poly = geo.trace_contour(m)
        assert abs(geo.polygon_area(poly) - 20 * 30) <= 1.0

    def test_simple_closed_on_solid_components(self):
        rng = np.random.default_rng(4)
        yy, xx = np.mgrid[0:40, 0:40]
        for _ in range(15):
            cy, cx = rng.integers(10, 30, size=2)
            rad = rng.integers(3, 9)
            m = (xx - cx) ** 2 + (yy - cy) ** 2 <= rad**2
            poly = geo.trace_contour(m)
            assert geo.polygon_is_simple(poly)
            assert geo.polygon_area(poly) == m.sum()

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            geo.trace_contour(np.zeros((4, 4), dtype=bool))

    def test_canonical_start_and_orientation(self):
        m = np.zeros((10, 10), dtype=bool)
        m[3:7, 2:9] = True
        poly = geo.trace_contour(m)
        assert geo.polygon_area(poly) > 0
        ys = poly[:, 1]
        xs = poly[:, 0]
        top = ys == ys.min()
        assert poly[0, 1] == ys.min() and poly[0, 0] == xs[top].min()


class TestSampleUniform:
    def test_circle_spacing_uniform(self):
        yy, xx = np.mgrid[0:128, 0:128]
        m = (xx + 0.5 - 64) ** 2 + (yy + 0.5 - 64) ** 2 <= 50**2
        pts = geo.sample_uniform(geo.trace_contour(m), 200)
        d = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        assert (d.max() - d.min()) / d.mean() < 0.02

    def test_four_points_on_square(self):
        m = np.zeros((30, 30), dtype=bool)
        m[8:20, 8:20] = True
        pts = geo.sample_uniform(geo.trace_contour(m), 4)
        assert len(pts) == 4
        for x, y in pts:
            d_edge = min(abs(x - 8), abs(x - 20), abs(y - 8), abs(y - 20))
            assert d_edge <= 1.5

    def test_exact_point_count(self):
        m = np.zeros((20, 20), dtype=bool)
        m[5:15, 5:15] = True
        c = geo.trace_contour(m)
        for m_pts in (3, 4, 50, 200, 351):
            assert len(geo.sample_uniform(c, m_pts)) == m_pts

    def test_degenerate_contour_linear_fallback(self):
        tri = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 3.0]])
        pts = geo.sample_uniform(tri, 12)
        assert len(pts) == 12
        # all points on the triangle boundary (perimeter 12, so spacing 1)
        d = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        np.testing.assert_allclose(d, 1.0, atol=1e-9)


class TestContourize:
    def test_ribbon_accuracy(self):
        prob = np.full((40, 320), 0.1)
        prob[10:30, 10:310] = 0.9
        poly = geo.contourize(prob)
        assert len(poly) == 200
        for x, y in poly:
            if 10 <= x <= 310 and 10 <= y <= 30:
                d = min(abs(x - 10), abs(x - 310), abs(y - 10), abs(y - 30))
            else:
                d = np.hypot(x - np.clip(x, 10, 310), y - np.clip(y, 10, 30))
            assert d <= 1.5
        spacing = np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)
        assert spacing.std() / spacing.mean() < 0.05

    def test_empty_map_rectangle_fallback(self):
        poly = geo.contourize(np.zeros((16, 24)))
        assert len(poly) == 200
        assert abs(geo.polygon_area(poly) - 16 * 24) < 1e-9

    def test_two_blobs_single_enclosing_contour(self):
        prob = np.zeros((28, 70))
        prob[5:8, 5:8] = 1.0
        prob[5:8, 50:53] = 1.0
        poly = geo.contourize(prob)
        assert geo.polygon_is_simple(poly)
        mask = geo.rasterize_polygon(poly, 28, 70)
        assert mask[6, 6] and mask[6, 51]  # both blob centers enclosed

    def test_deterministic_and_canonical(self):
        rng = np.random.default_rng(5)
        prob = ndimage.gaussian_filter((rng.random((48, 64)) < 0.4).astype(float), 3)
        prob = prob / max(prob.max(), 1e-9)
        a = geo.contourize(prob)
        b = geo.contourize(prob.copy())
        np.testing.assert_array_equal(a, b)
        assert len(a) == 200
        assert geo.polygon_area(a) > 0


class TestRasterize:
    def test_rectangle_roundtrip(self):
        rect = np.array([[3.0, 2.0], [3.0, 9.0], [13.0, 9.0], [13.0, 2.0]])
        m = geo.rasterize_polygon(rect, 12, 16)
        expected = np.zeros((12, 16), dtype=bool)
        expected[2:9, 3:13] = True
        np.testing.assert_array_equal(m, expected)

    def test_trace_then_rasterize_identity(self):
        rng = np.random.default_rng(6)
        yy, xx = np.mgrid[0:32, 0:32]
        for _ in range(10):
            cy, cx = rng.integers(8, 24, size=2)
            rad = rng.integers(3, 7)
            m = (xx - cx) ** 2 + (yy - cy) ** 2 <= rad**2
            poly = geo.trace_contour(m)
            np.testing.assert_array_equal(geo.rasterize_polygon(poly, 32, 32), m)
