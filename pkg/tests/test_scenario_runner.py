import filecmp
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from marketsim.cli import main
from marketsim.exchange import AccountKind, read_log
from marketsim.report import PANEL_IDS, emit_report, stylized_figure
from marketsim.runner import RunAborted, initialize_market, run
from marketsim.scenario import PRESETS, ConfigError, ScenarioConfig, load_scenario, parse_scenario, preset


def short(seconds=120, seed=3, **changes):
    return preset("small-univariate").replace(t_close=seconds, seed=seed, **changes)


# ------------------------------------------------------------------ config

def test_small_preset_values():
    c = preset("small-univariate")
    assert (c.n_lt, c.n_lp, c.n_mm, c.n_ia, c.n_assets) == (70, 70, 1, 1, 1)
    assert (c.c_min, c.c_max, c.h_min, c.h_max) == (5000, 15000, 50, 150)
    assert (c.freq_lt, c.freq_lp, c.freq_mm, c.freq_ia) == (5, 10, 2, 2)


def test_large_preset_values():
    c = preset("large-multivariate")
    assert (c.n_lt, c.n_lp, c.n_mm, c.n_ia, c.n_assets) == (8000, 100_000, 500, 0, 30)


def test_presets_validate_and_copies_are_independent():
    for name in PRESETS:
        preset(name).validate()
    c = preset("small-univariate")
    c.n_lt = 1
    assert preset("small-univariate").n_lt == 70


@pytest.mark.parametrize("field", ["n_lt", "n_lp", "n_mm", "n_ia"])
def test_negative_count_names_field(field):
    with pytest.raises(ConfigError) as err:
        ScenarioConfig(**{field: -1}).validate()
    assert err.value.field == field


@pytest.mark.parametrize("changes,field", [(dict(c_min=20_000), "c_min"), (dict(h_min=200), "h_min"),
                                           (dict(t_close=0), "t_close"), (dict(freq_lt=0.5), "freq_lt"),
                                           (dict(seed=2**64), "seed")])
def test_invariant_violations(changes, field):
    with pytest.raises(ConfigError) as err:
        ScenarioConfig(**changes).validate()
    assert err.value.field == field


def test_parse_scenario_text():
    cfg = parse_scenario("preset=small-univariate\n# one hour\nt_close = 600\nseed=9\n")
    assert (cfg.name, cfg.t_close, cfg.seed, cfg.n_lt) == ("small-univariate", 600.0, 9, 70)
    with pytest.raises(ConfigError) as err:
        parse_scenario("bogus=1")
    assert err.value.field == "bogus"
    with pytest.raises(ConfigError):
        parse_scenario("n_lt=many")
    with pytest.raises(ConfigError):
        parse_scenario("seed=1\npreset=small-univariate")
    with pytest.raises(ConfigError):
        parse_scenario("n_lt=-4")


def test_load_scenario(tmp_path):
    assert load_scenario("small-univariate").n_ia == 1
    path = tmp_path / "tiny.txt"
    path.write_text(short().to_text().replace("name=small-univariate\n", ""))
    cfg = load_scenario(path)
    assert cfg.name == "tiny" and cfg.t_close == 120
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.txt")


# ------------------------------------------------------------------ init

def test_initial_market_is_balanced_and_seeded():
    m = initialize_market(short())
    ex = m.exchange
    from marketsim.exchange import conservation_audit
    cash, shares = conservation_audit(ex, m.initial_totals)
    assert cash == 0 and shares == [0]
    assert 8500 <= m.initial_mids[0] <= 11500
    quote = ex.query_market(0)
    assert (quote.bid, quote.ask) == (m.initial_mids[0] - 1, m.initial_mids[0] + 1)
    accounts = [ex.accounts[a.account_id] for a in m.agents]
    traders = [a for a in accounts if a.kind is AccountKind.STANDARD]
    dealers = [a for a in accounts if a.kind is AccountKind.DEALER]
    assert len(traders) == 140 and len(dealers) == 2
    assert all(d.cash == 0 and d.holdings == [0] for d in dealers)
    assert all(50 <= t.holdings[0] <= 150 for t in traders)
    total_cash = sum(t.cash for t in traders)
    share_value = sum(t.holdings[0] for t in traders) * m.initial_mids[0]
    assert abs(total_cash - share_value) / total_cash <= 0.05


@pytest.mark.parametrize("name", ["small-univariate", "reduced-medium"])
def test_initial_balance_for_presets(name):
    m = initialize_market(preset(name))
    ex = m.exchange
    traders = [ex.accounts[a.account_id] for a in m.agents if ex.accounts[a.account_id].kind is AccountKind.STANDARD]
    cash = sum(t.cash for t in traders)
    value = sum(sum(h * mid for h, mid in zip(t.holdings, m.initial_mids)) for t in traders)
    assert abs(cash - value) / cash <= 0.05


def test_same_seed_same_ledger(tmp_path):
    a = initialize_market(short(), log_path=tmp_path / "a.jsonl")
    b = initialize_market(short(), log_path=tmp_path / "b.jsonl")
    a.exchange.close_log()
    b.exchange.close_log()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a.exchange.state_fingerprint() == b.exchange.state_fingerprint()
    c = initialize_market(short(seed=4))
    assert c.initial_mids != a.initial_mids or c.exchange.state_fingerprint() != a.exchange.state_fingerprint()


# ------------------------------------------------------------------- run

def test_empty_market_is_flat_and_inconclusive():
    res = run(short(n_lt=0, n_lp=0, n_mm=0, n_ia=0))
    assert res.trade_count == 0 and res.conserved
    assert res.reports[0].inconclusive
    assert len(res.mid_series(0)[1]) == 1


def test_short_run_is_deterministic_and_conserving(tmp_path):
    a = run(short(), log_path=tmp_path / "a.jsonl")
    b = run(short(), log_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a.trade_count > 0 and a.conserved
    assert set(a.pnl) == {"lt", "lp", "mm", "ia"}
    assert a.samples.shape == (120, 1, 2)


def test_agent_crash_aborts_with_id_and_seq():
    m = initialize_market(short())
    victim = m.agents[5]

    def boom(t):
        raise RuntimeError("boom")

    victim.step = boom
    with pytest.raises(RunAborted) as err:
        run(m.config, market=m)
    assert err.value.agent_id == victim.agent_id
    assert err.value.seq >= 0
    assert str(victim.agent_id) in str(err.value)


# ---------------------------------------------------------------- report

@pytest.fixture(scope="module")
def short_result():
    return run(short(300, seed=7))


def test_report_files(short_result, tmp_path):
    paths = emit_report(short_result, tmp_path)
    for key in ("prices", "quotes", "validation", "summary", "price", "spread", "stylized"):
        assert paths[key].exists(), key
    rows = paths["prices"].read_text().splitlines()
    history = short_result.exchange.query_history(0)
    assert len(rows) - 1 == len(history)
    mids = [m for _, m in history]
    assert all(x != y for x, y in zip(mids, mids[1:]))
    assert "conservation:" in paths["summary"].read_text() and "ok" in paths["summary"].read_text()
    assert any(p.name.startswith("ia_") for p in tmp_path.iterdir())


def test_stylized_figure_has_six_panels(short_result, tmp_path):
    paths = emit_report(short_result, tmp_path)
    root = ET.parse(paths["stylized"]).getroot()
    gids = {el.get("id") for el in root.iter() if (el.get("id") or "").startswith("panel-")}
    assert gids == {f"panel-{p}" for p in PANEL_IDS}


def test_stylized_figure_on_flat_series(tmp_path):
    stylized_figure([100.0] * 10, tmp_path / "flat.svg")
    root = ET.parse(tmp_path / "flat.svg").getroot()
    assert len([el for el in root.iter() if (el.get("id") or "").startswith("panel-")]) == 6


def test_reemitted_report_is_byte_identical(short_result, tmp_path):
    emit_report(short_result, tmp_path / "a")
    emit_report(short_result, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []


# ------------------------------------------------------------------- cli

def test_cli_run_validate_replay(tmp_path, capsys):
    scen = tmp_path / "scen.txt"
    scen.write_text("preset=small-univariate\nt_close=60\n")
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(scen), "--seed", "11", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "seed: 11" in text and "ok" in text
    for name in ("events.jsonl", "snapshot.json", "scenario.txt", "prices.csv", "summary.txt"):
        assert (out / name).exists()

    assert main(["validate", "--series", str(out / "prices.csv"), "--out", str(tmp_path / "val")]) == 0
    assert "asset 0:" in capsys.readouterr().out
    assert (tmp_path / "val" / "validation.csv").exists()

    assert main(["replay", "--log", str(out / "events.jsonl")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == f"events: {len(list(read_log(out / 'events.jsonl')))}"


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--scenario", "no-such-preset", "--out", str(tmp_path)]) == 2
    assert "scenario" in capsys.readouterr().err
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"seq": "5", "kind": "nonsense"}\n')
    assert main(["replay", "--log", str(bad)]) == 1
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "small-univariate", "--out", str(tmp_path), "--seed", "-1"])
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "small-univariate", "--out", str(tmp_path), "--realtime", "--accel", "5"])
