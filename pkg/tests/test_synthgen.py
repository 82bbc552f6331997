import numpy as np
import pandas as pd
import pytest
from conftest import SKEWED_MIX, small_config
from oracles import binomial_interval

from tenderrisk.domain import KEY_COLUMNS, InvalidInputError, SegmentKey
from tenderrisk.labeling import derive_labels
from tenderrisk.synthgen import (
    GeneratorConfig,
    InvalidConfigError,
    SegmentSpec,
    generate_portfolio,
    inject_missingness,
    latent_classes,
)


@pytest.fixture(scope="module")
def big_portfolio():
    cfg = GeneratorConfig(seed=5, segments=(SegmentSpec(SegmentKey("BU2", "GEO4"), 10_000, SKEWED_MIX),),
                          inflight_fraction=0.0)
    return generate_portfolio(cfg)


def test_mixture_converges_at_ten_thousand(big_portfolio):
    classes = latent_classes(big_portfolio)
    assert len(classes) == 10_000
    freq = np.bincount(classes.to_numpy(int), minlength=4) / len(classes)
    assert np.all(np.abs(freq - np.array(SKEWED_MIX)) <= 0.02)


def test_degenerate_win_mixture():
    cfg = GeneratorConfig(seed=1, segments=(SegmentSpec(SegmentKey("a", "b"), 200, (1, 0, 0, 0)),),
                          inflight_fraction=0.0)
    frame = generate_portfolio(cfg)
    last = frame.groupby("opportunity_id")["sales_stage"].last()
    assert set(last.unique()) <= {7, 8}


def test_generation_is_deterministic():
    a = generate_portfolio(small_config(seed=3))
    b = generate_portfolio(small_config(seed=3))
    pd.testing.assert_frame_equal(a, b)
    c = generate_portfolio(small_config(seed=4))
    assert not a.equals(c)


def test_stage_paths_are_monotone_with_single_final_close(small_snapshots):
    for _, g in small_snapshots.groupby("opportunity_id"):
        dates = g["record_date"].to_numpy()
        stages = g["sales_stage"].to_numpy()
        assert np.all(np.diff(dates.astype("int64")) > 0)
        assert np.all(np.diff(stages) >= 0)
        closed = stages >= 7
        assert closed.sum() <= 1
        if closed.any():
            assert closed[-1]


def test_generated_label_recovers_latent_class(small_snapshots):
    labeling = derive_labels(small_snapshots)
    latent = latent_classes(small_snapshots)
    per_opp = labeling.labeled.groupby("opportunity_id")["label"].first()
    assert (per_opp == latent.reindex(per_opp.index)).all()


def test_segments_are_independent_of_each_other():
    one = GeneratorConfig(seed=9, segments=(SegmentSpec(SegmentKey("a", "x"), 50, SKEWED_MIX),))
    two = GeneratorConfig(seed=9, segments=(SegmentSpec(SegmentKey("a", "x"), 50, SKEWED_MIX),
                                            SegmentSpec(SegmentKey("b", "y"), 60, SKEWED_MIX)))
    f1, f2 = generate_portfolio(one), generate_portfolio(two)
    pd.testing.assert_frame_equal(f1, f2[f2["business_unit"] == "a"].reset_index(drop=True))


@pytest.mark.parametrize("segments", [(), (SegmentSpec(SegmentKey("a", "b"), 0, SKEWED_MIX),)])
def test_invalid_configs(segments):
    with pytest.raises(InvalidConfigError):
        generate_portfolio(GeneratorConfig(seed=0, segments=segments))


def test_bad_mixture_rejected():
    with pytest.raises(InvalidConfigError):
        generate_portfolio(GeneratorConfig(seed=0, segments=(SegmentSpec(SegmentKey("a", "b"), 5, (0.5, 0.5, 0.5, 0)),)))


def test_config_json_round_trip(tmp_path):
    cfg = small_config(seed=21, missing_rate=0.1)
    path = tmp_path / "c.json"
    cfg.to_json(path)
    assert GeneratorConfig.from_json(path) == cfg


def test_missingness_rate_zero_is_identity(small_snapshots):
    pd.testing.assert_frame_equal(inject_missingness(small_snapshots, 0.0, seed=1), small_snapshots)


def test_missingness_count_within_binomial_bounds():
    frame = pd.DataFrame({
        "opportunity_id": [f"o{i}" for i in range(10_000)],
        "record_date": pd.Timestamp("2018-01-01"),
        "sales_stage": 1,
        "business_unit": "b",
        "geography": "g",
        "x": np.ones(10_000),
    })
    lo, hi = binomial_interval(10_000, 0.2, coverage=0.99)
    assert 1800 <= lo and hi <= 2200
    for seed in range(5):
        blanked = inject_missingness(frame, 0.2, seed=seed)["x"].isna().sum()
        assert 1800 <= blanked <= 2200


def test_missingness_never_touches_keys(small_snapshots):
    out = inject_missingness(small_snapshots, 0.5, seed=2)
    for col in KEY_COLUMNS:
        assert out[col].notna().all()
    with pytest.raises(InvalidInputError):
        inject_missingness(small_snapshots, 0.5, seed=2, columns=["opportunity_id"])


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_missingness_rate_bounds(small_snapshots, rate):
    with pytest.raises(InvalidInputError):
        inject_missingness(small_snapshots, rate, seed=0)
