import json

import numpy as np
import pytest

from arsq.action_codec import ActionSpec
from arsq.replay import (OfflineDataset, ReplayBuffer, Transition, load_dataset, rank_filter, sample,
                         segment_window, write_dataset)

SPEC = ActionSpec.box(2, bins_per_level=3, levels=2)


def record(ep, reward=0.0, action=(0.0, 0.0), done=False):
    return {"obs": [0.0, 1.0], "action": list(action), "reward": reward, "next_obs": [1.0, 1.0], "done": done,
            "episode": ep}


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def episodes_with_returns(returns):
    rows = [record(i, float(r), done=True) for i, r in enumerate(returns)]
    n = len(rows)
    return OfflineDataset.from_arrays(SPEC, np.zeros((n, 2)), np.zeros((n, 2)), [r["reward"] for r in rows],
                                      np.zeros((n, 2)), np.ones(n, bool), np.arange(n))


def test_empty_file(tmp_path):
    data = load_dataset(write_lines(tmp_path / "e.jsonl", []), SPEC, 2)
    assert len(data) == 0 and data.num_episodes == 0


def test_episode_boundaries(tmp_path):
    data = load_dataset(write_lines(tmp_path / "d.jsonl", [record(0), record(0, done=True), record(1)]), SPEC, 2)
    assert data.num_episodes == 2
    assert data.episode_bounds == [(0, 2), (2, 3)]
    assert np.all(data.is_demo)


def test_out_of_bounds_action_is_clamped(tmp_path, caplog):
    data = load_dataset(write_lines(tmp_path / "c.jsonl", [record(0, action=(3.0, 0.0))]), SPEC, 2)
    assert data.clamped == 1
    assert data.digits[0, 0].tolist() == [2, 2]
    assert "clamped" in caplog.text


@pytest.mark.parametrize("bad, message", [
    ("{not json}\n", "malformed"),
    (json.dumps({"obs": [0, 0]}) + "\n", "missing"),
    (json.dumps(record(0, action=(0.0,))) + "\n", "action has"),
    (json.dumps({**record(0), "done": 1}) + "\n", "boolean"),
])
def test_malformed_lines_report_line_numbers(tmp_path, bad, message):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record(0)) + "\n" + bad, encoding="utf-8")
    with pytest.raises(ValueError, match=rf"bad.jsonl:2: .*{message}"):
        load_dataset(path, SPEC, 2)


def test_non_contiguous_episodes_rejected(tmp_path):
    with pytest.raises(ValueError):
        load_dataset(write_lines(tmp_path / "n.jsonl", [record(0), record(1), record(0)]), SPEC, 2)


def test_write_then_load_round_trip(tmp_path):
    data = load_dataset(write_lines(tmp_path / "a.jsonl", [record(0, 1.5, (0.2, -0.7)), record(1, -2.0)]), SPEC, 2)
    write_dataset(tmp_path / "b.jsonl", data)
    again = load_dataset(tmp_path / "b.jsonl", SPEC, 2)
    assert np.array_equal(again.actions, data.actions) and np.array_equal(again.rewards, data.rewards)


def test_rank_filter_examples():
    data = episodes_with_returns(range(10))
    assert sorted(rank_filter(data, "top", 0.3).rewards) == [7.0, 8.0, 9.0]
    assert sorted(rank_filter(data, "middle", 0.3).rewards) == [4.0, 5.0, 6.0]
    assert sorted(rank_filter(data, "bottom", 0.3).rewards) == [0.0, 1.0, 2.0]
    assert np.array_equal(rank_filter(data, "top", 1.0).rewards, data.rewards)
    with pytest.raises(ValueError):
        rank_filter(data, "top", 0.01)
    with pytest.raises(ValueError):
        rank_filter(data, "side", 0.3)


def _windows(n, fraction):
    return [set(range(*segment_window(n, s, fraction))) for s in ("top", "middle", "bottom")]


@pytest.mark.parametrize("n", [10, 17, 50, 101])
def test_thirty_percent_segments_are_disjoint(n):
    top, mid, bottom = _windows(n, 0.3)
    assert top.isdisjoint(mid) and mid.isdisjoint(bottom) and top.isdisjoint(bottom)
    assert min(top) == 0 and max(bottom) == n - 1


@pytest.mark.parametrize("n", [3, 9, 30, 99])
def test_third_segments_tile_the_ranking(n):
    top, mid, bottom = _windows(n, 1 / 3)
    assert top | mid | bottom == set(range(n)) and len(top) + len(mid) + len(bottom) == n


def test_sampling_determinism_and_uniformity():
    data = episodes_with_returns([0, 1, 2, 3])
    a = sample(data, 16, np.random.default_rng(3))
    b = sample(data, 16, np.random.default_rng(3))
    assert np.array_equal(a.rewards, b.rewards)
    draws = sample(data, 100_000, np.random.default_rng(0)).rewards
    freqs = np.bincount(draws.astype(int), minlength=4) / draws.size
    assert np.all(np.abs(freqs - 0.25) < 0.01)
    single = episodes_with_returns([7])
    assert sample(single, 1, np.random.default_rng(0)).rewards.tolist() == [7.0]
    with pytest.raises(ValueError):
        sample(OfflineDataset.empty(SPEC, 2), 1, np.random.default_rng(0))


def transition(i, demo=False):
    return Transition(np.full(2, i, float), np.zeros(2), np.zeros((2, 2), int), float(i), np.zeros(2), False, i, demo)


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(3, 2, SPEC)
    buf.push(transition(0))
    assert buf.count == 1
    for i in range(1, 4):
        buf.push(transition(i))
    assert buf.count == 3
    assert sorted(buf.as_batch().rewards) == [1.0, 2.0, 3.0]


def test_buffer_keeps_demonstrations():
    buf = ReplayBuffer(4, 2, SPEC)
    buf.seed_with(episodes_with_returns([10, 11]))
    for i in range(5):
        buf.push(transition(i))
    batch = buf.as_batch()
    assert {10.0, 11.0} <= set(batch.rewards)
    assert batch.is_demo.sum() == 2 and len(buf) == 4
