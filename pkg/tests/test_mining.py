import json

import pytest

from dagalpha.config import MiningConfig, SeedFactor
from dagalpha.mining import Miner, ResumeError, iteration_curve, replay, resume, run_mining
from dagalpha.mock_llm import MutationChatProvider
from dagalpha.providers import HashingEmbedder, TransportError
from dagalpha.synthetic import demo_config, planted_panel


@pytest.fixture(scope="module")
def panel():
    return planted_panel(160, 20, seed=2)


def config(panel, **kw):
    kw.setdefault("iterations", 4)
    return demo_config(panel, capacity=kw.pop("capacity", 8), **kw)


def test_zero_iteration_run(panel, tmp_path):
    cfg = config(panel, iterations=0, seeds=[SeedFactor("Div($open, $close)"),
                                              SeedFactor("Div($vwap, $close)")])
    rep = run_mining(cfg, panel, tmp_path)
    assert rep.status == "completed"
    assert len(rep.final_pool) == 2
    assert set(rep.splits) == {"train", "valid", "test"}
    assert rep.splits["train"]["ic"] > 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["status"] == "completed"
    for name in ("graph.json", "state.json", "iterations.jsonl", "mega_weights.csv",
                 "backtest_train.csv"):
        assert (tmp_path / name).exists(), name


def test_invariants_over_a_run(panel, tmp_path):
    cfg = config(panel, iterations=5)
    rep = run_mining(cfg, panel, tmp_path)
    m = Miner(cfg, panel, tmp_path)
    m.restore()
    assert len(m.graph.active) <= cfg.capacity
    seeds = {n.id for n in m.graph.roots}
    for n in m.graph.nodes.values():
        if n.id not in seeds:
            assert n.quality > cfg.tau_q
    assert rep.iterations[-1]["iteration"] == 5
    maxima = [r["pool_max_quality"] for r in rep.iterations]
    assert maxima == sorted(maxima)
    evals = [r["evaluations"] for r in rep.iterations]
    assert evals == sorted(evals) and evals[-1] == rep.evaluations


def test_audit_trail_replays_graph(panel, tmp_path):
    run_mining(config(panel, iterations=5), panel, tmp_path)
    assert replay(tmp_path, capacity=8).dumps() == (tmp_path / "graph.json").read_text()


def test_runs_are_byte_identical(panel, tmp_path):
    for d in ("a", "b"):
        run_mining(config(panel), panel, tmp_path / d)
    for name in ("graph.json", "iterations.jsonl", "scores.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_resume_matches_uninterrupted(panel, tmp_path):
    run_mining(config(panel, iterations=4), panel, tmp_path / "full")
    run_mining(config(panel, iterations=2), panel, tmp_path / "part")
    rep = resume(tmp_path / "part", config(panel, iterations=4), panel)
    assert rep.iterations[-1]["iteration"] == 4
    for name in ("graph.json", "iterations.jsonl", "scores.csv"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()


class FlakyChat(MutationChatProvider):
    """Fails hard once the call budget is spent."""

    def __init__(self, budget, **kw):
        super().__init__(**kw)
        self.budget = budget

    def _complete(self, request):
        self.budget -= 1
        if self.budget < 0:
            raise TransportError("provider unreachable")
        return super()._complete(request)


def test_hard_failure_checkpoints_and_resumes(panel, tmp_path):
    cfg = config(panel, iterations=4)
    run_mining(cfg, panel, tmp_path / "full")
    nb = list(cfg.provider.mock_neighborhood)
    chat = FlakyChat(budget=9, seed=cfg.provider.seed, neighborhood=nb, max_inflight=1)
    m = Miner(cfg, panel, tmp_path / "cut", chat=chat, embedder=HashingEmbedder(seed=cfg.provider.seed))
    m.chat_json_sleep = None
    rep = m.run()
    assert rep.status == "interrupted" and "unreachable" in rep.error
    state = json.loads((tmp_path / "cut" / "state.json").read_text())
    assert 0 < state["iteration"] < 4
    resume(tmp_path / "cut", cfg, panel)
    for name in ("graph.json", "iterations.jsonl", "scores.csv"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "cut" / name).read_bytes()


def test_resume_refuses_other_panel(panel, tmp_path):
    run_mining(config(panel, iterations=1), panel, tmp_path)
    other = planted_panel(160, 20, seed=3)
    with pytest.raises(ResumeError, match="fingerprint"):
        resume(tmp_path, config(other, iterations=2), other)


def test_resume_refuses_smaller_capacity(panel, tmp_path):
    run_mining(config(panel, iterations=3), panel, tmp_path)
    with pytest.raises(ResumeError, match="capacity"):
        resume(tmp_path, config(panel, iterations=4, capacity=2), panel)


def test_resume_without_checkpoint(panel, tmp_path):
    with pytest.raises(ResumeError):
        resume(tmp_path, config(panel), panel)


def test_stagnation_stops_early(panel, tmp_path):
    cfg = config(panel, iterations=10, stagnation_limit=2, tau_q=50.0)
    rep = run_mining(cfg, panel, tmp_path)
    assert rep.status == "stagnated"
    assert rep.iterations[-1]["iteration"] == 2


def test_bad_seed_rejected(panel, tmp_path):
    with pytest.raises(ValueError, match="no seed"):
        run_mining(config(panel, seeds=[]), panel, tmp_path / "a")
    cfg = config(panel, seeds=[SeedFactor("TsMean($close, 500)")])
    with pytest.raises(ValueError, match="no valid values"):
        run_mining(cfg, panel, tmp_path / "b")


def test_dump_prompts(panel, tmp_path):
    Miner(config(panel, iterations=1), panel, tmp_path, dump_prompts=True).run()
    files = sorted(p.name for p in (tmp_path / "prompts").iterdir())
    assert any("strategy" in f for f in files) and any("execution" in f for f in files)


def test_iteration_curve(panel, tmp_path):
    run_mining(config(panel, iterations=2), panel, tmp_path)
    rows = iteration_curve(tmp_path)
    assert [r[0] for r in rows] == [0, 1, 2]


def test_config_round_trip(tmp_path, monkeypatch):
    cfg = MiningConfig(seeds=[SeedFactor("$close", "t")])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    monkeypatch.setenv("DAGALPHA_API_KEY", "k")
    back = MiningConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.provider.api_key == "k"
    with pytest.raises(ValueError, match="unknown config keys"):
        MiningConfig.from_dict({"bogus": 1})


@pytest.mark.parametrize("splits", [
    {"valid": [None, None]},
    {"train": ["2020-01-01", "2020-06-30"], "test": ["2020-06-01", "2020-12-31"]},
    {"train": ["2020-06-30", "2020-01-01"]},
])
def test_config_rejects_bad_splits(splits):
    with pytest.raises(ValueError):
        MiningConfig(splits=splits)
