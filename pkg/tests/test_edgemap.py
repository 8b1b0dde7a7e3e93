import math

import numpy as np
import pytest

from pednav.edgemap import (
    EdgeParams,
    chain,
    edge_map,
    extract_edgels,
    gradient,
)
from pednav.frames import Frame, read_pgm, read_seq, seq_info, write_pgm, write_seq


def frame_from(arr):
    return Frame(np.asarray(arr, dtype=np.uint8))


def step_frame(width=32, height=24, split=16, left=0, right=200):
    px = np.full((height, width), left, dtype=np.uint8)
    px[:, split:] = right
    return Frame(px)


def disk_frame(size=128, radius=50, bg=230, fg=25):
    ys, xs = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    d = np.hypot(xs - c, ys - c) - radius
    cov = np.clip(0.5 - d / 1.5, 0.0, 1.0)
    return Frame(np.rint(bg + cov * (fg - bg)).astype(np.uint8))


class TestGradient:
    def test_uniform_zero(self):
        fld = gradient(frame_from(np.full((20, 20), 128)))
        assert np.all(fld.mag == 0)

    def test_step_edge_sobel_response(self):
        # Hand-convolving the 3x3 kernel over a 0|200 step gives 4*200 at the
        # two columns flanking the step and zero elsewhere.
        fld = gradient(step_frame(split=16))
        row = fld.gx[10]
        assert row[15] == 800 and row[16] == 800
        assert np.all(row[:15] == 0) and np.all(row[17:] == 0)
        assert np.all(fld.gy[2:-2, 2:-2] == 0)
        assert fld.mag[10, 15] == 800

    def test_ramp_closed_form(self):
        # f(x, y) = 3x + 4y: the unit-spacing derivative readout (Sobel / 8)
        # gives gradient magnitude 5 at every interior pixel.
        h, w = 16, 16
        px = np.fromfunction(lambda y, x: 3 * x + 4 * y, (h, w))
        fld = gradient(frame_from(px))
        interior = (slice(1, -1), slice(1, -1))
        assert np.max(np.abs(fld.mag[interior] / 8.0 - 5.0)) < 1e-6
        assert np.max(np.abs(fld.gx[interior] / 8.0 - 3.0)) < 1e-6
        assert np.max(np.abs(fld.gy[interior] / 8.0 - 4.0)) < 1e-6

    def test_magnitude_identity(self):
        rng = np.random.default_rng(0)
        fld = gradient(Frame(rng.integers(0, 256, (48, 64), dtype=np.uint8)))
        assert np.array_equal(fld.mag, np.sqrt(fld.gx**2 + fld.gy**2))


class TestExtractEdgels:
    def test_step_one_edgel_per_row_subpixel(self):
        split = 16
        fr = step_frame(width=32, height=24, split=split)
        fld = gradient(fr)
        edgels = extract_edgels(fld, low=100, high=400)
        rows = {}
        for e in edgels:
            rows.setdefault(round(e.position[1]), []).append(e)
        # one edgel per interior row, at the true edge line x = split - 0.5
        for y in range(2, 22):
            assert len(rows[y]) == 1
            assert rows[y][0].position[0] == pytest.approx(split - 0.5, abs=0.1)

    def test_uniform_empty(self):
        fld = gradient(frame_from(np.full((20, 20), 128)))
        assert extract_edgels(fld, 10, 20) == []

    def test_disk_directions_radial(self):
        fr = disk_frame()
        fld = gradient(fr)
        low, high = EdgeParams().thresholds(float(fld.mag.max()))
        edgels = extract_edgels(fld, low, high)
        assert len(edgels) > 200
        c = (fr.width - 1) / 2.0
        good = 0
        for e in edgels:
            radial = e.position - c
            radial = radial / np.linalg.norm(radial)
            d = np.array((math.cos(e.direction), math.sin(e.direction)))
            # dark disk on light background: gradient points outward
            if float(radial @ d) > 0.9:
                good += 1
        assert good / len(edgels) >= 0.95

    def test_monotone_thresholds(self):
        fr = disk_frame()
        fld = gradient(fr)
        base = extract_edgels(fld, 50, 200)
        higher = extract_edgels(fld, 50, 400)
        keys = lambda es: {tuple(np.round(e.position, 6)) for e in es}
        assert keys(higher) <= keys(base)

    def test_intensity_scaling_invariance(self):
        fr = disk_frame(bg=120, fg=20)
        half = Frame((fr.pixels.astype(np.uint16) * 2).clip(0, 255).astype(np.uint8))
        e1 = extract_edgels(gradient(fr), 40, 80)
        e2 = extract_edgels(gradient(half), 80, 160)
        assert len(e1) == len(e2)
        p1 = np.array(sorted(map(tuple, (e.position for e in e1))))
        p2 = np.array(sorted(map(tuple, (e.position for e in e2))))
        assert np.abs(p1 - p2).max() < 1e-6
        m1 = np.array(sorted(e.magnitude for e in e1))
        m2 = np.array(sorted(e.magnitude for e in e2))
        assert np.allclose(m2, 2 * m1)

    def test_bad_thresholds(self):
        fld = gradient(disk_frame())
        with pytest.raises(ValueError):
            extract_edgels(fld, 100, 50)


def square_frame(size=160, side=100, bg=230, fg=25):
    px = np.full((size, size), bg, dtype=np.uint8)
    lo = (size - side) // 2
    px[lo : lo + side, lo : lo + side] = fg
    return Frame(px)


class TestChain:
    def test_square_outline(self):
        fr = square_frame()
        emap = edge_map(fr)
        assert 1 <= len(emap.chains) <= 4
        total = sum(c.length for c in emap.chains)
        assert total == pytest.approx(400.0, rel=0.05)

    def test_empty(self):
        assert chain([]) == []

    def test_two_disjoint_disks(self):
        size = 200
        ys, xs = np.mgrid[0:size, 0:size]
        cov = np.zeros((size, size))
        centers = [(50.0, 60.0), (150.0, 130.0)]
        for cx, cy in centers:
            d = np.hypot(xs - cx, ys - cy) - 30.0
            cov = np.maximum(cov, np.clip(0.5 - d / 1.5, 0, 1))
        fr = Frame(np.rint(230 + cov * (25 - 230)).astype(np.uint8))
        emap = edge_map(fr)
        assert len(emap.chains) == 2
        for c in emap.chains:
            pos = c.positions()
            dists = [np.hypot(pos[:, 0] - cx, pos[:, 1] - cy).mean() for cx, cy in centers]
            # all edgels of one chain belong to one disk
            near = int(np.argmin(dists))
            assert np.abs(np.hypot(pos[:, 0] - centers[near][0], pos[:, 1] - centers[near][1]) - 30).max() < 2.0

    def test_chain_invariants(self):
        emap = edge_map(disk_frame())
        params = emap.params
        max_link = math.sqrt(2) + params.chain_slack_px
        for c in emap.chains:
            assert c.length >= params.min_chain_px
            pos = c.positions()
            gaps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
            assert gaps.max() <= max_link + 1e-9
            dirs = np.array([e.direction for e in c.edgels])
            dd = np.abs((np.diff(dirs) + math.pi) % (2 * math.pi) - math.pi)
            assert np.degrees(dd).max() < params.max_turn_deg

    def test_each_edgel_in_one_chain(self):
        emap = edge_map(disk_frame())
        seen = set()
        for c in emap.chains:
            for e in c.edgels:
                key = tuple(np.round(e.position, 9))
                assert key not in seen
                seen.add(key)

    def test_min_chain_length_drops_short(self):
        # a 3-px speck yields a closed micro-chain below the default cutoff
        px = np.full((24, 24), 230, dtype=np.uint8)
        px[12, 11:13] = 20
        emap = edge_map(Frame(px))
        for c in emap.chains:
            assert c.length >= emap.params.min_chain_px


class TestEdgeMapComposition:
    def test_pipeline_matches_stages(self):
        fr = disk_frame()
        params = EdgeParams()
        emap = edge_map(fr, params)
        fld = gradient(fr)
        low, high = params.thresholds(float(fld.mag.max()))
        edgels = extract_edgels(fld, low, high)
        chains = chain(edgels, params)
        assert np.array_equal(emap.field.mag, fld.mag)
        assert len(emap.edgels) == len(edgels)
        assert len(emap.chains) == len(chains)
        assert emap.total_length() == pytest.approx(sum(c.length for c in chains))

    def test_rotation_equivariance_90(self):
        fr = disk_frame(size=128, radius=40)
        # shift center content asymmetrically so the test is not trivial
        px = fr.pixels.copy()
        px[30:40, 60:100] = 25
        fr = Frame(px)
        emap = edge_map(fr)
        rot = Frame(np.rot90(fr.pixels, k=-1).copy())  # 90 deg clockwise
        emap_r = edge_map(rot)
        n = fr.height - 1
        # (x, y) -> (n - y, x) under this rotation
        p = emap.chain_positions()
        mapped = np.column_stack((n - p[:, 1], p[:, 0]))
        q = emap_r.chain_positions()
        assert len(q) == len(mapped)
        from scipy.spatial import cKDTree

        d, _ = cKDTree(q).query(mapped)
        assert d.max() < 0.2

    def test_weights_sum_to_chain_lengths(self):
        emap = edge_map(disk_frame())
        assert emap.chain_weights().sum() == pytest.approx(emap.total_length())


class TestFrameFormats:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        fr = Frame(rng.integers(0, 256, (48, 64), dtype=np.uint8))
        path = tmp_path / "f.pgm"
        write_pgm(fr, path)
        back = read_pgm(path)
        assert np.array_equal(back.pixels, fr.pixels)

    def test_pgm_with_comment(self, tmp_path):
        fr = Frame(np.full((16, 16), 7, dtype=np.uint8))
        path = tmp_path / "c.pgm"
        data = b"P5\n# a comment\n16 16\n255\n" + fr.pixels.tobytes()
        path.write_bytes(data)
        assert np.array_equal(read_pgm(path).pixels, fr.pixels)

    def test_seq_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        frames = [Frame(rng.integers(0, 256, (32, 40), dtype=np.uint8)) for _ in range(5)]
        path = tmp_path / "clip.seq"
        write_seq(frames, path)
        assert seq_info(path) == (40, 32, 5)
        back = read_seq(path)
        assert len(back) == 5
        for a, b in zip(frames, back):
            assert np.array_equal(a.pixels, b.pixels)

    def test_seq_header(self, tmp_path):
        frames = [Frame(np.zeros((16, 16), dtype=np.uint8))]
        path = tmp_path / "one.seq"
        write_seq(frames, path)
        raw = path.read_bytes()
        assert raw[:4] == b"PNSQ"
        assert int.from_bytes(raw[4:8], "little") == 16
        assert int.from_bytes(raw[12:16], "little") == 1

    def test_frame_too_small(self):
        with pytest.raises(ValueError):
            Frame(np.zeros((8, 8), dtype=np.uint8))
