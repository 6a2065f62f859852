import numpy as np
import pytest

from d2dspread.analysis import fit_power_law
from d2dspread.cdr import assign_home, exposure_minutes, extract_mobility, per_capita_mobility
from d2dspread.errors import ValidationError
from d2dspread.synth import (KIND_JUMP, SynthConfig, generate_cdr, generate_world, observe_calls,
                             write_ground_truth)


def small(**kw):
    base = dict(community_count=30, total_users=1500, total_population=300_000, duration_minutes=20 * 1440, seed=4)
    base.update(kw)
    return SynthConfig(**base)


def test_single_community():
    cfg = SynthConfig(community_count=1, total_users=50, total_population=1000, duration_minutes=1440)
    w = generate_world(cfg)
    assert w.population.tolist() == [1000] and w.capital == 0
    corpus, truth = generate_cdr(w, cfg)
    assert len(truth.move_time) == 0 and len(corpus) == 50


def test_heavy_tailed_populations():
    for seed in range(20):
        w = generate_world(SynthConfig(seed=seed))
        assert w.population.max() / np.median(w.population) > 10
        assert w.population.sum() == 15_000_000 and np.all(w.areas > 0)


@pytest.mark.parametrize("field,value", [("jump_alpha", 1.0), ("total_users", 0), ("diurnal_amplitude", 1.0),
                                         ("mean_return_rate", 0.0)])
def test_validation_names_field(field, value):
    with pytest.raises(ValidationError, match=field):
        generate_world(small(**{field: value}))


def test_files_are_deterministic(tmp_path):
    out = []
    for k in range(2):
        cfg = small(call_rate=1 / 300)
        w = generate_world(cfg)
        corpus, truth = generate_cdr(w, cfg)
        d = tmp_path / str(k)
        d.mkdir()
        corpus.write(d / "cdr.csv")
        w.write_communities(d / "communities.csv")
        write_ground_truth(d / "truth.json", truth, w, cfg)
        out.append([(d / f).read_bytes() for f in ("cdr.csv", "communities.csv", "truth.json")])
    assert out[0] == out[1]
    other, _ = generate_cdr(generate_world(small(seed=5)), small(seed=5))
    assert other.sorted_records() != corpus.sorted_records()


def test_event_log_replays_to_corpus(small_synth):
    _, _, corpus, truth = small_synth
    assert corpus.trajectories() == truth.trajectories


def test_jumps_follow_planted_exponent():
    cfg = SynthConfig(total_users=3000, duration_minutes=60 * 1440, seed=2)
    _, truth = generate_cdr(generate_world(cfg), cfg)
    L = truth.jump_lengths()
    assert len(L) > 50_000
    assert abs(fit_power_law(L).alpha - 2.51) < 0.1


def test_fast_return_keeps_users_home():
    base = small()
    fast = small(mean_return_rate=1000 * base.mean_return_rate)
    share, zeta = [], []
    for cfg in (base, fast):
        corpus, truth = generate_cdr(generate_world(cfg), cfg)
        t = corpus.trajectories()
        _, by_home = exposure_minutes(t, truth.home)
        share.append(np.trace(by_home) / by_home.sum())
        zeta.append(per_capita_mobility(t, home=truth.home).zeta)
    assert share[1] > 0.99 > share[0]
    mask = (zeta[0] > 0) & (zeta[1] > 0)
    assert np.all(zeta[1][mask] > zeta[0][mask])


def test_planted_intensities_within_three_se():
    cfg = small(total_users=4000, duration_minutes=40 * 1440, community_count=15)
    corpus, truth = generate_cdr(generate_world(cfg), cfg)
    t = corpus.trajectories()
    m = per_capita_mobility(t, home=truth.home)
    _, by_home = exposure_minutes(t, truth.home)
    at_home = np.diag(by_home)
    hazard = -np.expm1(-truth.departure_rate)  # movement lives on a one-minute grid
    se = np.sqrt(hazard / at_home)
    assert np.all(np.abs(m.sigma - hazard) < 3 * se)
    away = by_home.sum(axis=0) - at_home
    r_away = truth.departure_rate[:, None] + truth.return_rate
    exp_returns = (by_home * (-np.expm1(-r_away) * truth.return_rate / r_away)).sum(axis=0) - np.diag(
        by_home * (-np.expm1(-r_away) * truth.return_rate / r_away))
    got = (m.zeta * by_home).sum(axis=0)
    assert abs(got.sum() - exp_returns.sum()) < 3 * np.sqrt(exp_returns.sum())
    assert away.sum() > 0


def test_homes_recovered(small_synth):
    _, _, corpus, truth = small_synth
    assert np.mean(assign_home(corpus.trajectories()) == truth.home) >= 0.99


def test_thinning_never_helps():
    cfg = small(total_users=3000)
    _, truth = generate_cdr(generate_world(cfg), cfg)
    rates = [1 / 30, 1 / 240, 1 / 1440]
    acc = []
    pos = {u: k for k, u in enumerate(truth.user_ids)}
    for r in rates:
        c = observe_calls(truth, cfg, r, max_rate=rates[0])
        t = c.trajectories()
        home = assign_home(t)
        idx = np.array([pos[u] for u in t.user_ids])
        acc.append(np.mean(home == truth.home[idx]) * t.n_users / truth.trajectories.n_users)
    assert acc[0] >= acc[1] >= acc[2]


def test_thinned_subset():
    cfg = small()
    _, truth = generate_cdr(generate_world(cfg), cfg)
    hi = set(observe_calls(truth, cfg, 1 / 60, max_rate=1 / 60).sorted_records())
    lo = set(observe_calls(truth, cfg, 1 / 600, max_rate=1 / 60).sorted_records())
    assert lo < hi
    with pytest.raises(ValidationError):
        observe_calls(truth, cfg, 1.0, max_rate=0.5)


def test_extraction_runs_on_thinned(small_synth):
    cfg, world, _, truth = small_synth
    c = observe_calls(truth, cfg, 1 / 120)
    m, counts, home = extract_mobility(c.trajectories())
    assert m.nu.shape == (world.n, world.n)
    assert np.all(truth.move_kind[truth.move_kind != KIND_JUMP] == 1)
