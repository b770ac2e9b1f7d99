"""Tests for src/geometry.py — lemniscate, arc table, beam occlusion."""

import numpy as np
import pytest
from scipy.integrate import quad

from src import config
from src.errors import ConfigError, DataError
from src.geometry import (
    LEMNISCATE_LENGTH,
    arc_polylines,
    beam_block_fraction,
    block_fractions,
    build_arclength_table,
    centre_fraction,
    default_arc_table,
    lemniscate_point,
    object_polyline,
)
from src.scenario import BlockageObject


def _ray_oracle(bs, device, beamwidth, poly, n_rays=100_000, seed=0):
    """Fraction of beam-parallel rays (stratified offsets) that hit the polyline between BS and device."""
    rng = np.random.default_rng(seed)
    bs = np.asarray(bs, dtype=np.float64)
    axis = np.asarray(device, dtype=np.float64) - bs
    dist = np.linalg.norm(axis)
    d = axis / dist
    n = np.array([-d[1], d[0]])
    rel = np.asarray(poly) - bs
    along = rel @ d
    across = rel @ n

    offsets = (np.arange(n_rays) + rng.random(n_rays)) / n_rays * beamwidth - beamwidth / 2
    hit = np.zeros(n_rays, dtype=bool)
    for i in range(len(poly) - 1):
        c0, c1 = across[i], across[i + 1]
        a0, a1 = along[i], along[i + 1]
        if c0 == c1:
            continue
        u = (offsets - c0) / (c1 - c0)
        a = a0 + u * (a1 - a0)
        hit |= (u >= 0) & (u <= 1) & (a >= 0) & (a <= dist)
    return hit.mean()


class TestLemniscate:
    def test_apex_and_origin(self):
        np.testing.assert_allclose(lemniscate_point(0.0), [1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(lemniscate_point(np.pi / 2), [0.0, 0.0], atol=1e-15)

    def test_implicit_equation(self):
        u = np.random.default_rng(1).uniform(-20, 20, size=10_000)
        u = np.append(u, 0.7)
        x, y = lemniscate_point(u).T
        residual = (x * x + y * y) ** 2 - (x * x - y * y)
        assert np.max(np.abs(residual)) < 1e-12

    def test_total_length(self):
        assert LEMNISCATE_LENGTH == pytest.approx(5.2441151, abs=1e-6)
        # independent quadrature of the parametrized speed
        numeric, _ = quad(lambda u: 1.0 / np.sqrt(1.0 + np.sin(u) ** 2), 0.0, 2 * np.pi, limit=200)
        assert LEMNISCATE_LENGTH == pytest.approx(numeric, rel=1e-12)


class TestArcTable:
    def test_rejects_small_resolution(self):
        with pytest.raises(ConfigError):
            build_arclength_table(config.ARC_TABLE_MIN_RESOLUTION - 1)

    def test_origin_maps_to_zero(self):
        table = build_arclength_table(64)
        assert table.fraction_to_param(0.0) == pytest.approx(0.0, abs=1e-14)

    def test_half_loop_is_on_second_lobe(self):
        table = default_arc_table()
        x, _ = table.point_at(0.5)
        assert x < 0

    def test_round_trip_accuracy(self):
        table = build_arclength_table(64)
        s = np.linspace(0.0, 0.999, 2001)
        back = table.param_to_fraction(table.fraction_to_param(s))
        # error in curve-length units relative to the total length
        assert np.max(np.abs(back - s)) < 1e-6

    def test_points_evenly_spaced_by_arc_length(self):
        table = default_arc_table()
        pts = table.point_at(np.linspace(0.0, 1.0, 20001))
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        np.testing.assert_allclose(chords, LEMNISCATE_LENGTH / 20000, rtol=1e-4)


class TestObjectPolyline:
    def test_centre_advances_per_slot(self):
        c0 = centre_fraction(0.1, 0.005, 0, 0.05)
        c1 = centre_fraction(0.1, 0.005, 1, 0.05)
        assert c1 - c0 == pytest.approx(0.00025, abs=1e-15)

    def test_chord_sum_within_arc_length(self):
        table = default_arc_table()
        obj = BlockageObject(arc_length=0.05, speed=0.005, initial_phase=0.3, attenuation_db=-20.0)
        poly = object_polyline(obj, 17, table, 0.05)
        total = np.linalg.norm(np.diff(poly, axis=0), axis=1).sum()
        assert 0.0499 <= total <= 0.05

    def test_points_on_curve(self):
        table = default_arc_table()
        poly = arc_polylines(np.array([0.0, 0.2, 0.7]), 0.3, table)
        x, y = poly[..., 0], poly[..., 1]
        assert np.max(np.abs((x * x + y * y) ** 2 - (x * x - y * y))) < 1e-12

    def test_full_loop_periodicity(self):
        table = default_arc_table()
        obj = BlockageObject(arc_length=0.05, speed=0.005, initial_phase=0.42, attenuation_db=-15.0)
        period = round(1.0 / (obj.speed * 0.05))
        np.testing.assert_allclose(
            object_polyline(obj, 3, table, 0.05), object_polyline(obj, 3 + period, table, 0.05), atol=1e-9
        )


class TestBeamBlockFraction:
    bs = (-1.3, 0.0)
    device = (0.7, 0.0)
    w = 0.025

    def test_outside_strip(self):
        poly = np.array([[0.0, 0.5], [0.1, 0.5]])
        assert beam_block_fraction(self.bs, self.device, self.w, poly) == 0.0

    def test_full_perpendicular_crossing(self):
        poly = np.array([[0.0, -0.1], [0.0, 0.1]])
        assert beam_block_fraction(self.bs, self.device, self.w, poly) == pytest.approx(1.0)

    def test_half_width(self):
        poly = np.array([[0.0, 0.0], [0.0, 0.1]])
        p = beam_block_fraction(self.bs, self.device, self.w, poly)
        assert p == pytest.approx(0.5, abs=1e-3)
        assert _ray_oracle(self.bs, self.device, self.w, poly) == pytest.approx(0.5, abs=1e-3)

    def test_behind_device_does_not_block(self):
        poly = np.array([[0.9, -0.1], [0.9, 0.1]])
        assert beam_block_fraction(self.bs, self.device, self.w, poly) == 0.0

    def test_behind_bs_does_not_block(self):
        poly = np.array([[-1.5, -0.1], [-1.5, 0.1]])
        assert beam_block_fraction(self.bs, self.device, self.w, poly) == 0.0

    def test_invalid_inputs(self):
        poly = np.array([[0.0, -0.1], [0.0, 0.1]])
        with pytest.raises(ConfigError):
            beam_block_fraction(self.bs, self.device, 0.0, poly)
        with pytest.raises(DataError):
            beam_block_fraction(self.bs, self.bs, self.w, poly)

    def test_monotone_in_segments(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            poly = rng.uniform([-0.2, -0.05], [0.2, 0.05], size=(6, 2))
            base = beam_block_fraction(self.bs, self.device, self.w, poly)
            extended = np.vstack([poly, rng.uniform([-0.2, -0.05], [0.2, 0.05], size=(2, 2))])
            assert beam_block_fraction(self.bs, self.device, self.w, extended) >= base - 1e-15

    def test_agrees_with_ray_oracle(self):
        rng = np.random.default_rng(11)
        table = default_arc_table()
        (x_lo, x_hi), (y_lo, y_hi) = config.DEVICE_AREA
        nonzero = 0
        for i in range(100):
            device = (rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi))
            w = rng.uniform(0.01, 0.2)
            poly = arc_polylines(rng.random(), rng.uniform(0.05, 1.0), table)
            p = beam_block_fraction(self.bs, device, w, poly)
            assert p == pytest.approx(_ray_oracle(self.bs, device, w, poly, seed=i), abs=2e-3)
            nonzero += p > 0
        assert nonzero > 5

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        table = default_arc_table()
        devices = rng.uniform([-1, -0.5], [1, 0.5], size=(4, 2))
        polys = arc_polylines(rng.random(3), 0.4, table)  # (3, P, 2)
        batch = block_fractions(self.bs, devices, self.w, polys)
        assert batch.shape == (3, 4)
        for i in range(3):
            for k in range(4):
                assert batch[i, k] == pytest.approx(beam_block_fraction(self.bs, devices[k], self.w, polys[i]))
