import math
from dataclasses import replace

import numpy as np
import pytest

from locbo import rrm


@pytest.fixture(scope="module")
def layout():
    return rrm.make_layout()


class TestUnits:
    def test_dbm_watt(self):
        assert rrm.dbm_to_watt(30.0) == pytest.approx(1.0)
        assert rrm.dbm_to_watt(0.0) == pytest.approx(1e-3)
        assert rrm.watt_to_dbm(rrm.dbm_to_watt(17.3)) == pytest.approx(17.3)

    def test_db(self):
        assert rrm.db_to_linear(10.0) == pytest.approx(10.0)


class TestLayout:
    def test_counts(self, layout):
        assert len(layout.bs_xy) == rrm.N_BS
        assert layout.is_uav.sum() == 28
        assert (~layout.is_uav).sum() == 36
        assert layout.bs_height == 25.0

    def test_sites(self, layout):
        sites = np.unique(layout.bs_xy, axis=0)
        assert len(sites) == 3
        d = [np.linalg.norm(sites[i] - sites[j]) for i in range(3) for j in range(i + 1, 3)]
        np.testing.assert_allclose(d, 200.0)

    def test_association_is_strongest(self, layout):
        g = rrm.gain_matrix(layout, np.full(rrm.N_BS, 12.0))
        np.testing.assert_array_equal(layout.association, np.argmax(g, axis=1))

    def test_json_round_trip(self, layout):
        again = rrm.NetworkLayout.from_json(layout.to_json())
        np.testing.assert_array_equal(again.shadow_db, layout.shadow_db)
        np.testing.assert_array_equal(again.association, layout.association)

    def test_deterministic(self, layout):
        np.testing.assert_array_equal(rrm.make_layout().users, layout.users)


class TestGain:
    def test_pathloss_doubling(self):
        ch = rrm.ChannelParams()
        for uav, n in ((False, ch.exponent_gu), (True, ch.exponent_uav)):
            diff = rrm.pathloss_db(200.0, uav, ch) - rrm.pathloss_db(100.0, uav, ch)
            assert diff == pytest.approx(10 * n * math.log10(2))
            assert diff == pytest.approx(3 * n, rel=0.01)

    def test_zero_distance(self):
        with pytest.raises(ValueError):
            rrm.pathloss_db(0.0, False, rrm.ChannelParams())

    def test_peak_at_tilt(self):
        ch = rrm.ChannelParams()
        el = np.linspace(-30, 60, 901)
        g = rrm.antenna_gain_db(0.0, el, 15.0, ch)
        assert el[np.argmax(g)] == pytest.approx(15.0)

    def test_azimuth_monotone(self):
        ch = rrm.ChannelParams()
        g = rrm.antenna_gain_db(np.linspace(0, 60, 61), 10.0, 10.0, ch)
        assert np.all(np.diff(g) <= 0)

    def test_large_scale_gain_positive(self, layout):
        assert rrm.large_scale_gain(layout, 0, 0, 10.0) > 0


class TestRates:
    def test_unit_sinr(self):
        r = rrm.rates_from_gains(np.array([[1.0]]), np.array([1e-9]), np.array([0]),
                                 np.array([[1.0]]), 1e-9)
        assert r[0] == pytest.approx(1.0)

    def test_zero_power(self):
        r = rrm.rates_from_gains(np.array([[1.0, 1.0]]), np.array([0.0, 1.0]), np.array([0]),
                                 np.ones((1, 2)), 1e-3)
        assert r[0] == 0.0

    def test_interferer_lowers_rate(self):
        g = np.array([[1.0, 0.3]])
        alone = rrm.rates_from_gains(g, np.array([1.0, 0.0]), np.array([0]), np.ones((1, 2)), 0.1)
        both = rrm.rates_from_gains(g, np.array([1.0, 0.5]), np.array([0]), np.ones((1, 2)), 0.1)
        assert both[0] < alone[0]

    def test_user_rate_finite(self, layout, rng):
        cfg = rrm.RadioConfig.uniform()
        h = (rng.standard_normal(9) + 1j * rng.standard_normal(9)) / math.sqrt(2)
        for k in range(layout.n_users):
            r = rrm.user_rate(layout, cfg, k, h)
            assert np.isfinite(r) and r >= 0


class TestObjective:
    def test_lambda_weighting(self, layout):
        rates = np.arange(layout.n_users, dtype=float)
        only_uav = rrm.weighted_capacity(rates, layout.is_uav, 1.0)
        assert only_uav == pytest.approx(rates[layout.is_uav].mean())

    def test_scale_invariance(self, layout):
        cfg = rrm.RadioConfig(np.linspace(10, 40, 9), np.linspace(-20, 30, 9))
        base = rrm.capacity_objective(layout, cfg, 2000)
        scaled_cfg = rrm.RadioConfig(cfg.powers_dbm + 3.0, cfg.tilts_deg)
        ch = replace(layout.channel, noise_dbm=layout.channel.noise_dbm + 3.0)
        scaled = rrm.capacity_objective(replace(layout, channel=ch), scaled_cfg, 2000)
        assert scaled == pytest.approx(base, rel=1e-12)

    def test_mc_convergence(self, layout):
        cfg = rrm.RadioConfig.uniform(40.0, 8.0)
        m4, s4 = rrm.capacity_objective(layout, cfg, 10_000, seed=1, return_stderr=True)
        m5, s5 = rrm.capacity_objective(layout, cfg, 100_000, seed=2, return_stderr=True)
        assert abs(m4 - m5) < 3 * math.hypot(s4, s5)

    def test_deterministic(self, layout):
        cfg = rrm.RadioConfig.uniform()
        assert rrm.capacity_objective(layout, cfg, 1000) == rrm.capacity_objective(layout, cfg, 1000)

    def test_noisy_observe(self, layout, rng):
        cfg = rrm.RadioConfig.uniform()
        v1 = np.var([rrm.noisy_observe(layout, cfg, 1, rng) for _ in range(2000)])
        v4 = np.var([rrm.noisy_observe(layout, cfg, 4, rng) for _ in range(2000)])
        assert v4 == pytest.approx(v1 / 4, rel=0.2)
        y = rrm.noisy_observe(layout, cfg, 1, rng)
        assert np.isfinite(y) and y >= 0

    def test_noisy_converges(self, layout, rng):
        cfg = rrm.RadioConfig.uniform(30.0, 0.0)
        truth, se = rrm.capacity_objective(layout, cfg, 100_000, return_stderr=True)
        est = rrm.noisy_observe(layout, cfg, 100_000, rng)
        assert abs(est - truth) < 3 * math.sqrt(2) * se

    def test_rotation_symmetry(self):
        base = rrm.make_layout(seed=3)
        # a layout with no shadowing and users placed 3-fold symmetrically
        users = base.users[:12].copy()
        sym = []
        for k in range(3):
            c, s = math.cos(2 * math.pi * k / 3), math.sin(2 * math.pi * k / 3)
            u = users.copy()
            u[:, :2] = users[:, :2] @ np.array([[c, -s], [s, c]]).T
            sym.append(u)
        users = np.vstack(sym)
        lay = replace(base, users=users, is_uav=np.zeros(len(users), dtype=bool),
                      shadow_db=np.zeros((len(users), rrm.N_BS)), association=np.zeros(len(users), dtype=int))
        lay = replace(lay, association=np.argmax(rrm.gain_matrix(lay, np.full(9, 12.0)), axis=1))
        cfg = rrm.RadioConfig.uniform(40.0, 12.0, lambda_gu=0.0)
        rot = rrm.rotate_layout_users(lay, 120.0)
        rot = replace(rot, association=np.argmax(rrm.gain_matrix(rot, np.full(9, 12.0)), axis=1))
        # rotation permutes the users, so fading-free rates agree as a multiset
        pw, noise = rrm.dbm_to_watt(cfg.powers_dbm), float(rrm.dbm_to_watt(lay.channel.noise_dbm))
        ones = np.ones((len(users), rrm.N_BS))
        r0 = rrm.rates_from_gains(rrm.gain_matrix(lay, cfg.tilts_deg), pw, lay.association, ones, noise)
        r1 = rrm.rates_from_gains(rrm.gain_matrix(rot, cfg.tilts_deg), pw, rot.association, ones, noise)
        np.testing.assert_allclose(np.sort(r0), np.sort(r1), rtol=1e-9)
        a, sa = rrm.capacity_objective(lay, cfg, 4000, return_stderr=True)
        b, sb = rrm.capacity_objective(rot, cfg, 4000, seed=5, return_stderr=True)
        assert abs(a - b) < 3 * math.hypot(sa, sb)


class TestConfigAndBlocks:
    def test_bounds(self):
        with pytest.raises(ValueError):
            rrm.RadioConfig(np.full(9, 50.0), np.zeros(9))
        with pytest.raises(ValueError):
            rrm.RadioConfig(np.full(9, 20.0), np.full(9, 95.0))

    def test_encode_decode(self, rng):
        u = rng.random(18)
        np.testing.assert_allclose(rrm.encode(rrm.decode(u)), u, atol=1e-12)

    def test_rotation_rule(self):
        assert [rrm.block_for_round(t) for t in range(1, 10)] == list(range(9))
        assert rrm.block_for_round(10) == 0

    def test_embed_extract(self, rng):
        base = rng.random(18)
        blk = rrm.BlockCoordinate.for_round(base, 4)
        sub = rng.random(2)
        full = blk.embed(sub)
        np.testing.assert_allclose(blk.extract(full), sub)
        mask = np.ones(18, dtype=bool)
        mask[[3, 12]] = False
        np.testing.assert_array_equal(full[mask], base[mask])

    def test_problem(self, rng):
        p = rrm.make_rrm_problem(n_eval_channels=500)
        assert p.dim == 18 and len(p.blocks) == 9
        assert p.max_value is None
        y = p.sampler(rng.random(18), rng)
        assert np.isfinite(y)
