import numpy as np
import pytest

from mcsched.env import ConfigError
from mcsched.presets import (
    PRESET_NAMES, UnknownPreset, build_presets, load_preset, reduced_large,
)


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_shipped_files_match_generator(self, name):
        assert load_preset(name).to_dict() == build_presets()[name].to_dict()

    def test_unknown(self):
        with pytest.raises(UnknownPreset):
            load_preset("S7")

    def test_small_scenarios(self):
        s1, s2, s3 = (load_preset(n) for n in ("S1", "S2", "S3"))
        assert s1.env.arrival_rates.tolist() == [2.0] and s1.actor_hidden == (16, 16)
        assert s2.env.arrival_rates.tolist() == [2.0, 3.0] and s2.rvi_cap == 10
        assert s3.env.arrival_rates.tolist() == [2.0, 7.0] and s3.rvi_cap == 15
        assert s2.env.tradeoff_v == 0.0

    def test_large_scenarios_share_rates(self):
        s4, s5, s6 = (load_preset(n) for n in ("S4", "S5", "S6"))
        for p in (s4, s5, s6):
            assert p.env.n_messages == p.env.n_channels == 10
            assert p.actor_hidden == (128, 128, 128)
            assert np.all((p.env.arrival_rates >= 10) & (p.env.arrival_rates <= 20))
            assert np.all(p.env.arrival_rates == np.round(p.env.arrival_rates))
        assert np.array_equal(s4.env.arrival_rates, s5.env.arrival_rates)
        assert np.all(s4.env.duration_table == 1)
        assert s5.env.duration_table.min() >= 1 and s5.env.duration_table.max() <= 5
        assert np.array_equal(s6.env.penalty_fn[0], [1, 2, 3, 4])

    def test_common_constants(self):
        for name in PRESET_NAMES:
            env = load_preset(name).env
            assert env.buffer_len == 4
            assert np.all(env.energy_const == 500)
            assert env.gain_support.tolist() == list(range(100, 111))

    def test_overrides(self):
        p = load_preset("S2").with_overrides({"env": {"tradeoff_v": 3.0}, "episodes": 5})
        assert p.env.tradeoff_v == 3.0 and p.episodes == 5
        assert p.env.arrival_rates.tolist() == [2.0, 3.0]

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            load_preset("S1").with_overrides({"env": {"arrival_rates": [2.0, 3.0]}})

    def test_reduced(self):
        r = reduced_large(load_preset("S5"), 4)
        full = load_preset("S5").env
        assert r.env.n_messages == r.env.n_channels == 4
        assert np.array_equal(r.env.duration_table, full.duration_table[:4, :4])
