import numpy as np
import pytest

from clickseg import core, engines
from clickseg._kernels import bk_maxflow, build_arc_graph
from clickseg.engines import graphcut, randomwalker
from clickseg.engines._grid import grid_edges
from clickseg.engines.geodesic_engine import geodesic_segment
from oracles import geodesic_reference, maxflow_reference, random_walker_reference


def two_tone_image(h=8, w=8, left=0, right=255):
    img = np.full((h, w), right, np.uint8)
    img[:, : w // 2] = left
    return core.RasterImage.from_array(img)


def clicks(*specs):
    cs = core.ClickSet()
    for x, y, pol in specs:
        cs.add(x, y, pol)
    return cs


class TestRasterizeClicks:
    def test_empty(self):
        pos, neg = engines.rasterize_clicks([], 10, 10, 3)
        assert not pos.any() and not neg.any()

    def test_disk_pixel_count(self):
        cs = clicks((10, 10, core.POSITIVE))
        pos, neg = engines.rasterize_clicks(cs, 21, 21, 3)
        # brute-force count of pixels with squared distance <= 9
        expect = sum(
            1
            for dy in range(-3, 4)
            for dx in range(-3, 4)
            if dy * dy + dx * dx <= 9
        )
        assert expect == 29
        assert pos.sum() == expect
        assert not neg.any()

    def test_later_ordinal_wins(self):
        cs = clicks((5, 5, core.POSITIVE), (5, 5, core.NEGATIVE))
        pos, neg = engines.rasterize_clicks(cs, 11, 11, 2)
        assert not pos[5, 5]
        assert neg[5, 5]

    def test_clipping_at_border(self):
        cs = clicks((0, 0, core.POSITIVE))
        pos, _ = engines.rasterize_clicks(cs, 8, 8, 3)
        assert pos[0, 0]
        assert pos.sum() < 29

    def test_out_of_bounds_rejected(self):
        cs = clicks((12, 0, core.POSITIVE))
        with pytest.raises(ValueError):
            engines.rasterize_clicks(cs, 10, 10, 3)


class TestEdgeFromMask:
    def test_empty(self):
        assert engines.edge_from_mask(np.zeros((5, 5), bool)).sum() == 0

    def test_single_pixel(self):
        m = np.zeros((5, 5), bool)
        m[2, 3] = True
        e = engines.edge_from_mask(m)
        assert e[2, 3] == 1.0 and e.sum() == 1.0

    def test_filled_block_boundary(self):
        m = np.zeros((8, 8), bool)
        m[2:6, 2:6] = True
        e = engines.edge_from_mask(m)
        # brute-force 4-neighbor check
        expect = np.zeros((8, 8))
        for y in range(8):
            for x in range(8):
                if not m[y, x]:
                    continue
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < 8 and 0 <= nx < 8) or not m[ny, nx]:
                        expect[y, x] = 1.0
        assert expect.sum() == 12
        assert np.array_equal(e, expect)

    def test_border_touching_mask_is_edge(self):
        m = np.ones((3, 3), bool)
        e = engines.edge_from_mask(m)
        assert e[0, 0] == 1.0 and e[1, 1] == 0.0


class TestGraphCut:
    def test_two_tone_left_half(self):
        img = two_tone_image()
        cs = clicks((1, 4, core.POSITIVE), (6, 4, core.NEGATIVE))
        out = engines.segment(engines.EngineParams("graphcut", seed_radius=1), img, cs)
        expect = np.zeros((8, 8), bool)
        expect[:, :4] = True
        assert np.array_equal(out.mask, expect)

    def test_cut_value_matches_oracle_on_image_graph(self):
        img = two_tone_image()
        cs = clicks((1, 4, core.POSITIVE), (6, 4, core.NEGATIVE))
        pos, neg = engines.rasterize_clicks(cs, 8, 8, 1)
        scaled = img.scaled()
        prior = np.zeros((8, 8))
        params = engines.EngineParams("graphcut", seed_radius=1)
        tails, heads, caps, tcap = graphcut.build_instance(
            scaled, pos, neg, prior, params.lam, params.edge_prior_weight
        )
        _, _, cut = graphcut.graphcut_segment(scaled, pos, neg, prior, params)
        ref = maxflow_reference(64, tails, heads, caps, tcap)
        assert cut == pytest.approx(ref, rel=1e-9)

    def test_checkerboard_colors(self):
        # single-pixel seeds keep the color models pure; a small lam lets the
        # unaries dominate the (everywhere-high-contrast) pairwise term
        img = np.zeros((8, 8), np.uint8)
        img[::2, ::2] = 255
        img[1::2, 1::2] = 255
        cs = clicks((0, 0, core.POSITIVE), (1, 0, core.NEGATIVE))
        params = engines.EngineParams("graphcut", seed_radius=0.5, lam=0.1)
        out = engines.segment(params, img, cs)
        assert np.array_equal(out.mask, img == 255)
        pos, neg = engines.rasterize_clicks(cs, 8, 8, 0.5)
        scaled = core.RasterImage.from_array(img).scaled()
        prior = np.zeros((8, 8))
        _, _, cut = graphcut.graphcut_segment(scaled, pos, neg, prior, params)
        tails, heads, caps, tcap = graphcut.build_instance(
            scaled, pos, neg, prior, params.lam, params.edge_prior_weight
        )
        assert cut == pytest.approx(maxflow_reference(64, tails, heads, caps, tcap), rel=1e-9)

    def test_uniform_image_against_oracle(self):
        img = np.full((8, 8), 77, np.uint8)
        cs = clicks((2, 2, core.POSITIVE), (6, 6, core.NEGATIVE))
        pos, neg = engines.rasterize_clicks(cs, 8, 8, 1)
        scaled = core.RasterImage.from_array(img).scaled()
        prior = np.zeros((8, 8))
        params = engines.EngineParams("graphcut", seed_radius=1)
        mask, _, cut = graphcut.graphcut_segment(scaled, pos, neg, prior, params)
        tails, heads, caps, tcap = graphcut.build_instance(
            scaled, pos, neg, prior, params.lam, params.edge_prior_weight
        )
        ref = maxflow_reference(64, tails, heads, caps, tcap)
        assert cut == pytest.approx(ref, rel=1e-9)
        assert mask[2, 2] and not mask[6, 6]

    def test_border_background_model_blob(self):
        # no negative clicks: background model comes from the border ring.
        # 16x16 keeps the boundary cheap relative to the area unaries, so the
        # blob is recovered from a single positive click.
        img = np.full((16, 16), 20, np.uint8)
        img[5:11, 5:11] = 230
        cs = clicks((7, 7, core.POSITIVE))
        out = engines.segment(engines.EngineParams("graphcut", seed_radius=1), img, cs)
        assert np.array_equal(out.mask, img == 230)

    def test_border_background_model_oracle_8x8(self):
        # at 8x8 the boundary-to-area ratio is degenerate; the binding check
        # is exact agreement with the independent max-flow value
        img = np.full((8, 8), 20, np.uint8)
        img[2:6, 2:6] = 230
        cs = clicks((3, 3, core.POSITIVE))
        pos, neg = engines.rasterize_clicks(cs, 8, 8, 1)
        scaled = core.RasterImage.from_array(img).scaled()
        prior = np.zeros((8, 8))
        params = engines.EngineParams("graphcut", seed_radius=1)
        _, _, cut = graphcut.graphcut_segment(scaled, pos, neg, prior, params)
        tails, heads, caps, tcap = graphcut.build_instance(
            scaled, pos, neg, prior, params.lam, params.edge_prior_weight
        )
        assert cut == pytest.approx(maxflow_reference(64, tails, heads, caps, tcap), rel=1e-9)

    def test_random_graphs_exact(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            n = int(rng.integers(2, 60))
            m = int(rng.integers(0, min(3 * n, n * (n - 1) // 2) + 1))
            pairs = set()
            while len(pairs) < m:
                u, v = rng.integers(0, n, 2)
                if u != v:
                    pairs.add((min(u, v), max(u, v)))
            pairs = sorted(pairs)
            tails = np.array([p[0] for p in pairs], np.int64)
            heads = np.array([p[1] for p in pairs], np.int64)
            caps = rng.integers(0, 12, len(pairs)).astype(np.float64)
            tcap = rng.integers(-9, 10, n).astype(np.float64)
            ptr, head, rev, rescap = build_arc_graph(tails, heads, caps, n)
            flow, _ = bk_maxflow(ptr, head, rev, rescap, tcap.copy())
            assert flow == maxflow_reference(n, tails, heads, caps, tcap)


class TestRandomWalker:
    def test_three_pixel_path_middle_positive(self):
        # uniform 1x3 image, ends seeded: middle potential is 0.5 -> foreground
        img = np.full((1, 3), 100, np.uint8)
        cs = clicks((0, 0, core.POSITIVE), (2, 0, core.NEGATIVE))
        params = engines.EngineParams("randomwalker", seed_radius=0.5)
        out = engines.segment(params, img, cs)
        assert out.confidence[0, 1] == pytest.approx(0.5, abs=1e-6)
        assert out.mask[0, 1]

    def test_five_pixel_path_potentials(self):
        img = np.full((1, 5), 100, np.uint8)
        cs = clicks((0, 0, core.POSITIVE), (4, 0, core.NEGATIVE))
        params = engines.EngineParams("randomwalker", seed_radius=0.5)
        out = engines.segment(params, img, cs)
        assert np.allclose(out.confidence[0], [1.0, 0.75, 0.5, 0.25, 0.0], atol=1e-6)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(3)
        params = engines.EngineParams("randomwalker", seed_radius=1)
        for _ in range(5):
            h, w = int(rng.integers(4, 16)), int(rng.integers(4, 16))
            img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
            image = core.RasterImage.from_array(img)
            scaled = image.scaled()
            pos = np.zeros((h, w), bool)
            neg = np.zeros((h, w), bool)
            pos[rng.integers(0, h), rng.integers(0, w)] = True
            while True:
                y, x = rng.integers(0, h), rng.integers(0, w)
                if not pos[y, x]:
                    neg[y, x] = True
                    break
            _, pot = randomwalker.random_walker_segment(
                scaled, pos, neg, np.zeros((h, w)), params
            )
            wh = np.exp(-params.beta * ((scaled[:, :-1] - scaled[:, 1:]) ** 2).sum(2)) + 1e-6
            wv = np.exp(-params.beta * ((scaled[:-1] - scaled[1:]) ** 2).sum(2)) + 1e-6
            ref = random_walker_reference(wh, wv, pos, neg)
            assert np.allclose(pot, ref, atol=1e-4)
            assert pot.min() >= 0.0 and pot.max() <= 1.0

    def test_two_region_contrast(self):
        img = two_tone_image(8, 8, 10, 240)
        cs = clicks((1, 4, core.POSITIVE), (6, 4, core.NEGATIVE))
        out = engines.segment(engines.EngineParams("randomwalker", seed_radius=1), img, cs)
        expect = np.zeros((8, 8), bool)
        expect[:, :4] = True
        assert np.array_equal(out.mask, expect)

    def test_nonconvergence_reports_residual(self):
        img = np.random.default_rng(0).integers(0, 256, (12, 12), dtype=np.uint8)
        cs = clicks((1, 1, core.POSITIVE), (10, 10, core.NEGATIVE))
        params = engines.EngineParams(
            "randomwalker", seed_radius=1, solver_tolerance=1e-12,
            solver_max_iterations=2,
        )
        with pytest.raises(engines.SolverNonconvergence) as exc:
            engines.segment(params, img, cs)
        assert exc.value.residual > 0


class TestGeodesic:
    def test_uniform_halves(self):
        img = np.full((9, 9), 128, np.uint8)
        cs = clicks((0, 4, core.POSITIVE), (8, 4, core.NEGATIVE))
        out = engines.segment(engines.EngineParams("geodesic", seed_radius=0.5), img, cs)
        # boundary column ties to positive by the >= rule
        assert out.mask[4, 4]
        assert out.mask[:, :4].all()
        assert not out.mask[:, 5:].any()

    def test_no_negative_seeds_all_foreground(self):
        img = np.full((6, 6), 128, np.uint8)
        cs = clicks((3, 3, core.POSITIVE))
        out = engines.segment(engines.EngineParams("geodesic"), img, cs)
        assert out.mask.all()

    def test_distances_match_bellman_ford(self):
        rng = np.random.default_rng(11)
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        scaled = core.RasterImage.from_array(img).scaled()
        seeds = np.zeros((16, 16), bool)
        seeds[3, 5] = seeds[12, 9] = True
        params = engines.EngineParams("geodesic")
        _, _, d_pos, _ = geodesic_segment(scaled, seeds, np.zeros((16, 16), bool), params)
        ref = geodesic_reference(scaled, seeds, params.geodesic_gamma)
        assert np.allclose(d_pos, ref, atol=1e-9)

    def test_relaxation_fixpoint(self):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 256, (10, 10), dtype=np.uint8)
        scaled = core.RasterImage.from_array(img).scaled()
        seeds = np.zeros((10, 10), bool)
        seeds[0, 0] = True
        params = engines.EngineParams("geodesic")
        _, _, d, _ = geodesic_segment(scaled, seeds, np.zeros((10, 10), bool), params)
        for y in range(10):
            for x in range(10):
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        if (dy, dx) == (0, 0):
                            continue
                        ny, nx = y + dy, x + dx
                        if not (0 <= ny < 10 and 0 <= nx < 10):
                            continue
                        diff = np.sqrt(((scaled[y, x] - scaled[ny, nx]) ** 2).sum())
                        step = np.sqrt(2.0) if dy and dx else 1.0
                        cost = step * (1.0 + params.geodesic_gamma * diff)
                        assert d[ny, nx] <= d[y, x] + cost + 1e-12


class TestSegmentContract:
    @pytest.mark.parametrize("engine_id", engines.ENGINE_IDS)
    def test_no_positive_click_rejected(self, engine_id):
        img = two_tone_image()
        cs = clicks((6, 4, core.NEGATIVE))
        with pytest.raises(engines.NoPositiveClick):
            engines.segment(engines.EngineParams(engine_id), img, cs)

    @pytest.mark.parametrize("engine_id", engines.ENGINE_IDS)
    def test_determinism(self, engine_id):
        img = two_tone_image()
        cs = clicks((1, 4, core.POSITIVE), (6, 4, core.NEGATIVE))
        params = engines.EngineParams(engine_id, seed_radius=1)
        a = engines.segment(params, img, cs)
        b = engines.segment(params, img, cs)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.confidence, b.confidence)
        assert np.array_equal(a.edge, b.edge)

    @pytest.mark.parametrize("engine_id", engines.ENGINE_IDS)
    def test_click_consistency_and_mask_rule(self, engine_id):
        rng = np.random.default_rng(9)
        img = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
        cs = clicks((5, 5, core.POSITIVE), (18, 18, core.NEGATIVE), (18, 5, core.NEGATIVE))
        params = engines.EngineParams(engine_id, seed_radius=2)
        out = engines.segment(params, img, cs)
        pos, neg = engines.rasterize_clicks(cs, 24, 24, 2)
        assert out.mask[pos].all()
        assert not out.mask[neg].any()
        assert np.array_equal(out.mask, out.confidence >= 0.5)

    @pytest.mark.parametrize("engine_id", engines.ENGINE_IDS)
    def test_edge_feedback_round(self, engine_id):
        img = two_tone_image()
        cs = clicks((1, 4, core.POSITIVE), (6, 4, core.NEGATIVE))
        params = engines.EngineParams(engine_id, seed_radius=1)
        first = engines.segment(params, img, cs)
        second = engines.segment(params, img, cs, prior=first.edge)
        pos, neg = engines.rasterize_clicks(cs, 8, 8, 1)
        assert second.mask[pos].all()
        assert not second.mask[neg].any()

    def test_prior_shape_mismatch(self):
        img = two_tone_image()
        cs = clicks((1, 4, core.POSITIVE))
        with pytest.raises(core.DimensionMismatch):
            engines.segment(engines.EngineParams(), img, cs, prior=np.zeros((4, 4)))
