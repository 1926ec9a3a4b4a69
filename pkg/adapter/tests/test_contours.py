import numpy as np
import pytest

from cookar_adapter.contours import mask_to_rings, ring_area, rings_to_mask, trace_contours


def disc(h, w, cy, cx, r):
    ys, xs = np.mgrid[0:h, 0:w]
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r


class TestTracing:
    def test_single_pixel(self):
        mask = np.zeros((3, 3), bool)
        mask[1, 1] = True
        rings = mask_to_rings(mask)
        assert len(rings) == 1
        assert set(rings[0]) == {(1, 1), (2, 1), (2, 2), (1, 2)}

    def test_rectangle_collapses_to_four_corners(self):
        mask = np.zeros((10, 10), bool)
        mask[2:7, 3:9] = True
        rings = mask_to_rings(mask)
        assert len(rings) == 1
        assert len(rings[0]) == 4
        assert set(rings[0]) == {(3, 2), (9, 2), (9, 7), (3, 7)}

    def test_hole_preserved_as_second_ring(self):
        mask = np.zeros((12, 12), bool)
        mask[1:11, 1:11] = True
        mask[4:8, 4:8] = False
        rings = mask_to_rings(mask)
        assert len(rings) == 2
        assert abs(ring_area(rings[0])) > abs(ring_area(rings[1]))
        # opposite orientations: exterior vs hole
        assert ring_area(rings[0]) * ring_area(rings[1]) < 0

    def test_two_components(self):
        mask = np.zeros((8, 16), bool)
        mask[1:4, 1:5] = True
        mask[4:7, 9:14] = True
        assert len(trace_contours(mask)) == 2

    def test_vertices_are_integers_within_one_pixel_of_mask(self):
        mask = disc(40, 40, 20, 20, 12)
        rings = mask_to_rings(mask)
        for ring in rings:
            for x, y in ring:
                assert isinstance(x, int) and isinstance(y, int)
                # every vertex touches at least one set pixel corner
                neighbors = [
                    (yy, xx)
                    for yy in (y - 1, y)
                    for xx in (x - 1, x)
                    if 0 <= yy < 40 and 0 <= xx < 40
                ]
                assert any(mask[yy, xx] for yy, xx in neighbors)

    @pytest.mark.parametrize("seed", range(8))
    def test_roundtrip_exact_on_random_masks(self, seed):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(5, 48)), int(rng.integers(5, 48))
        mask = rng.random((h, w)) < rng.uniform(0.15, 0.85)
        rings = mask_to_rings(mask)
        assert np.array_equal(rings_to_mask(rings, w, h), mask)

    def test_checkerboard_degree_four_corners(self):
        mask = np.indices((6, 6)).sum(axis=0) % 2 == 0
        rings = mask_to_rings(mask)
        assert np.array_equal(rings_to_mask(rings, 6, 6), mask)

    def test_cross_implementation_rasterization_agrees(self):
        # a peer decoding the wire rasterizes with the same pixel-center rule
        from cookar.geometry import rasterize
        from cookar.types import Polygon

        mask = disc(30, 36, 14, 18, 9)
        mask[10:14, 14:18] = False  # carve a hole
        rings = mask_to_rings(mask)
        poly = Polygon(tuple(tuple((float(x), float(y)) for x, y in ring) for ring in rings))
        assert np.array_equal(rasterize(poly, 36, 30).arr, mask)
