import numpy as np
import pytest

from idnca import grid as G


class TestNewGrid:
    def test_zero_everywhere(self):
        g = G.new_grid(8, 8)
        assert g.shape == (8, 8, 17)
        assert not g.any()

    @pytest.mark.parametrize("w,h", [(2, 8), (8, 2), (0, 0), (1, 3)])
    def test_rejects_tiny_dimensions(self, w, h):
        with pytest.raises(ValueError):
            G.new_grid(w, h)

    def test_fresh_grid_has_no_life(self):
        g = G.new_grid(8, 8)
        assert not G.alive_mask(g).any()
        assert G.bounding_box(G.alive_mask(g)) is None


class TestPlaceSeed:
    def test_seed_cell_values(self):
        g = G.place_seed(G.new_grid(9, 9), G.SeedSpec(4, 4, 0, 1.0))
        cell = g[4, 4]
        assert np.all(cell[G.RGB] == 0.0)
        assert cell[G.ALPHA] == 1.0
        assert np.all(cell[G.HIDDEN] == 1.0)
        assert cell[G.IDENTITY] == 1.0

    def test_zero_identity_seed(self):
        g = G.place_seed(G.new_grid(9, 9), G.SeedSpec(4, 4, 0, 0.0))
        assert g[4, 4, G.IDENTITY] == 0.0
        assert g[4, 4, G.ALPHA] == 1.0

    def test_alive_block_is_three_by_three(self):
        # hand-evaluated 3x3 max-pool of a single alpha=1 cell at (4,4)
        g = G.place_seed(G.new_grid(9, 9), G.SeedSpec(4, 4))
        mask = G.alive_mask(g)
        want = np.zeros((9, 9), bool)
        want[3:6, 3:6] = True
        assert np.array_equal(mask, want)

    def test_touches_exactly_one_cell(self, rng):
        base = rng.random((7, 11, 17)).astype(np.float32)
        out = G.place_seed(base, G.SeedSpec(6, 2, 0, 0.5))
        changed = np.any(out != base, axis=-1)
        assert changed.sum() == 1
        assert changed[2, 6]
        # caller's array is untouched
        assert not np.shares_memory(out, base)

    @pytest.mark.parametrize("x,y", [(-1, 4), (4, -1), (9, 4), (4, 9)])
    def test_out_of_bounds(self, x, y):
        with pytest.raises(ValueError):
            G.place_seed(G.new_grid(9, 9), G.SeedSpec(x, y))

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            G.SeedSpec(1, 1, -1)


class TestAliveMask:
    def test_zero_grid_all_false(self):
        assert not G.alive_mask(G.new_grid(5, 5)).any()

    def test_threshold_is_strict(self):
        g = G.new_grid(9, 9)
        g[4, 4, G.ALPHA] = 0.1
        assert not G.alive_mask(g).any()
        g[4, 4, G.ALPHA] = 0.1 + 1e-6
        assert G.alive_mask(g).sum() == 9

    def test_edge_cell_uses_zero_padding(self):
        g = G.new_grid(5, 5)
        g[0, 0, G.ALPHA] = 1.0
        mask = G.alive_mask(g)
        want = np.zeros((5, 5), bool)
        want[0:2, 0:2] = True
        assert np.array_equal(mask, want)

    def test_monotone_in_alpha(self, rng):
        g = rng.random((10, 12, 17)).astype(np.float32) * 0.3
        before = G.alive_mask(g)
        for _ in range(25):
            y = rng.integers(10)
            x = rng.integers(12)
            g2 = g.copy()
            g2[y, x, G.ALPHA] += rng.random()
            after = G.alive_mask(g2)
            assert np.all(after | ~before)  # no true bit turned false


class TestBoundingBox:
    def test_empty(self):
        assert G.bounding_box(np.zeros((6, 6), bool)) is None

    def test_single_block(self):
        g = G.place_seed(G.new_grid(9, 9), G.SeedSpec(4, 4))
        assert G.bounding_box(G.alive_mask(g)) == (3, 3, 5, 5)

    def test_union_of_two_blocks(self):
        g = G.place_seed(G.new_grid(32, 9), G.SeedSpec(4, 4))
        g = G.place_seed(g, G.SeedSpec(20, 4))
        assert G.bounding_box(G.alive_mask(g)) == (3, 3, 21, 5)


class TestCompositeIdeal:
    def test_coincident_centers_saturate(self, rng):
        target = rng.random((7, 5, 4)).astype(np.float32)
        out = G.composite_ideal(target, (10, 10), (10, 10), (24, 24))
        window = out[7:14, 8:13]
        assert np.allclose(window, np.clip(2 * target, 0, 1))

    def test_disjoint_copies_exact(self, rng):
        target = rng.random((5, 5, 4)).astype(np.float32) * 0.9
        out = G.composite_ideal(target, (5, 8), (18, 8), (24, 16))
        assert np.allclose(out[6:11, 3:8], target)
        assert np.allclose(out[6:11, 16:21], target)
        assert out[:, 11:13].sum() == 0.0

    def test_overlap_is_clamped_sum(self, rng):
        target = rng.random((6, 6, 4)).astype(np.float32)
        out = G.composite_ideal(target, (8, 8), (11, 8), (24, 16))
        canvas_a = np.zeros((16, 24, 4), np.float32)
        canvas_b = np.zeros((16, 24, 4), np.float32)
        G.paste_rgba(canvas_a, target, 8, 8)
        G.paste_rgba(canvas_b, target, 11, 8)
        assert np.allclose(out, np.clip(canvas_a + canvas_b, 0, 1))

    def test_symmetric_in_placements(self, rng):
        target = rng.random((6, 7, 4)).astype(np.float32)
        a = G.composite_ideal(target, (6, 5), (13, 9), (24, 16))
        b = G.composite_ideal(target, (13, 9), (6, 5), (24, 16))
        assert np.array_equal(a, b)

    def test_partial_clipping_allowed(self, rng):
        target = np.ones((6, 6, 4), np.float32)
        out = G.composite_ideal(target, (0, 0), (12, 8), (24, 16))
        assert out[0, 0, 3] == 1.0

    def test_fully_outside_rejected(self):
        target = np.ones((4, 4, 4), np.float32)
        with pytest.raises(ValueError):
            G.composite_ideal(target, (-10, -10), (8, 8), (16, 16))

    def test_single_copy_bbox_dilated_by_pool(self, rng):
        # alpha support of a pasted copy, seen through the alive mask,
        # is the support dilated by one cell (from the 3x3 max-pool)
        target = np.zeros((5, 5, 4), np.float32)
        target[1:4, 1:4, 3] = 1.0
        canvas = np.zeros((20, 20, 4), np.float32)
        G.paste_rgba(canvas, target, 9, 9)
        carrier = G.new_grid(20, 20)
        carrier[..., G.ALPHA] = canvas[..., 3]
        box = G.bounding_box(G.alive_mask(carrier))
        support = G.bounding_box(canvas[..., 3] > 0)
        assert box == (support[0] - 1, support[1] - 1,
                       support[2] + 1, support[3] + 1)
