"""Run artifacts: CSV series, a summary, and SVG figures.

Figures are rendered with the Agg backend and a fixed hash salt with no date
metadata, so emitting the same result twice gives byte-identical files.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .book import format_price  # noqa: E402
from .stylized import (RunReport, acf, excess_kurtosis, first_passage_times, log_returns,  # noqa: E402
                       nonlinear_acf_suite, write_series)

PANEL_IDS = ("returns", "acf", "abs-acf", "nonlinear", "passage", "aggregation")
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "marketsim", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _empty_panel(ax, title: str, why: str) -> None:
    ax.set_title(title, fontsize=9)
    ax.text(0.5, 0.5, why, ha="center", va="center", transform=ax.transAxes, fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])


def stylized_figure(prices, path: str | Path, max_lag: int = 50) -> None:
    """Six panels: return histogram, return acf, |r| acf, nonlinear acfs, first passage, aggregation."""
    p = np.asarray(prices, dtype=float)
    fig, axes = plt.subplots(2, 3, figsize=(12, 7))
    panels = dict(zip(PANEL_IDS, axes.ravel()))
    for gid, ax in panels.items():
        ax.set_gid(f"panel-{gid}")
    titles = {"returns": "return distribution", "acf": "return autocorrelation",
              "abs-acf": "|r| autocorrelation", "nonlinear": "nonlinear autocorrelation",
              "passage": "first passage times", "aggregation": "aggregation"}
    try:
        r = log_returns(p)
        if np.std(r) == 0 or r.size <= max_lag:
            raise ValueError("flat or short series")
    except ValueError as exc:
        for gid, ax in panels.items():
            _empty_panel(ax, titles[gid], str(exc))
        fig.tight_layout()
        _save(fig, Path(path))
        return

    ax = panels["returns"]
    z = (r - r.mean()) / r.std()
    ax.hist(z, bins=101, density=True, color="tab:blue", alpha=0.7)
    xs = np.linspace(z.min(), z.max(), 200)
    ax.plot(xs, np.exp(-xs * xs / 2) / math.sqrt(2 * math.pi), color="k", lw=0.8)
    ax.set_yscale("log")
    ax.set_title(f"{titles['returns']} (excess kurtosis {excess_kurtosis(r):.1f})", fontsize=9)

    for gid, series in (("acf", r), ("abs-acf", np.abs(r))):
        ax = panels[gid]
        res = acf(series, max_lag)
        ax.bar(res.lags, res.values, width=0.8, color="tab:blue")
        ax.axhline(res.ci_band, color="r", ls="--", lw=0.8)
        ax.axhline(-res.ci_band, color="r", ls="--", lw=0.8)
        ax.set_title(titles[gid], fontsize=9)
        ax.set_xlabel("lag")

    ax = panels["nonlinear"]
    suite = nonlinear_acf_suite(r, max_lag)
    for name, res in suite.items():
        ax.plot(res.lags, res.values, lw=0.9, label=name)
    band = next(iter(suite.values())).ci_band
    ax.axhline(band, color="r", ls="--", lw=0.8)
    ax.axhline(-band, color="r", ls="--", lw=0.8)
    ax.legend(fontsize=6)
    ax.set_title(titles["nonlinear"], fontsize=9)
    ax.set_xlabel("lag")

    ax = panels["passage"]
    fp = first_passage_times(p)
    hi = max([1] + [int(a.max()) for a in (fp.gains, fp.losses) if a.size])
    bins = np.unique(np.logspace(0, math.log10(hi + 1), 40).astype(int))
    if fp.gains.size:
        ax.hist(fp.gains, bins=bins, histtype="step", density=True, label=f"gain ({fp.gains.size})")
    if fp.losses.size:
        ax.hist(fp.losses, bins=bins, histtype="step", density=True, label=f"loss ({fp.losses.size})")
    ax.set_xscale("log")
    ax.legend(fontsize=7)
    ax.set_title(titles["passage"], fontsize=9)
    ax.set_xlabel("steps")

    ax = panels["aggregation"]
    for stride in (1, 2, 5):
        if p.size <= stride + 1:
            continue
        rs = log_returns(p, stride)
        if np.std(rs) == 0:
            continue
        zs = (rs - rs.mean()) / rs.std()
        hist, edges = np.histogram(zs, bins=61, range=(-6, 6), density=True)
        ax.plot((edges[:-1] + edges[1:]) / 2, hist, lw=0.9, label=f"stride {stride}")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.set_title(titles["aggregation"], fontsize=9)

    fig.tight_layout()
    _save(fig, Path(path))


def price_figure(times, bids, asks, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(times, bids, lw=0.6, label="bid")
    ax.plot(times, asks, lw=0.6, label="ask")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("price")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, Path(path))


def spread_figure(times, spread, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(10, 3))
    ax.plot(times, spread, lw=0.6, color="tab:purple")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("spread")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, Path(path))


def write_validation(path: str | Path, reports: list[RunReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("asset", "key", "value"))
        for k, report in enumerate(reports):
            for key, value in report.as_rows():
                writer.writerow((k, key, value))


def summary_text(result) -> str:
    cfg = result.config
    cash, shares = result.audit
    lines = [
        f"scenario: {cfg.name}",
        f"seed: {cfg.seed}",
        f"simulated_seconds: {cfg.t_close:g}",
        f"assets: {cfg.n_assets}",
        f"agents: lt={cfg.n_lt} lp={cfg.n_lp} mm={cfg.n_mm} ia={cfg.n_ia}",
        f"trades: {result.trade_count}",
        f"conservation: cash_delta={cash} share_delta={','.join(map(str, shares))} "
        f"{'ok' if result.conserved else 'VIOLATED'}",
    ]
    for k, report in enumerate(result.reports):
        v = report.verdicts()
        lines.append(f"asset {k}: points={report.n_points} heavy_tails={v['a']} no_autocorrelation={v['b']} "
                     f"volatility_clustering={v['cd']} aggregational_gaussianity={v['f']}"
                     + (f" ({report.inconclusive})" if report.inconclusive else ""))
        if not report.inconclusive:
            lines.append(f"asset {k}: kurtosis={report.kurtosis:.4g} kurtosis_stride5={report.kurtosis_coarse:.4g} "
                         f"acf_inside={report.acf_inside:.3f} abs_acf_above={report.abs_acf_above:.3f} "
                         f"passage_gains={report.passage_gains} passage_losses={report.passage_losses} "
                         f"passage_censored={report.passage_censored}")
    for kind in sorted(result.pnl):
        row = result.pnl[kind]
        lines.append(f"pnl {kind}: count={row['count']} mean={row['mean']:.2f} min={row['min']:.2f} "
                     f"max={row['max']:.2f} total={row['total']:.2f}")
    return "\n".join(lines) + "\n"


def emit_report(result, out: str | Path) -> dict[str, Path]:
    """Write every artifact for ``result`` into ``out``; returns the paths by name."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ex = result.exchange
    K = ex.n_assets
    paths = {"prices": out / "prices.csv", "quotes": out / "quotes.csv", "validation": out / "validation.csv",
             "summary": out / "summary.txt"}

    rows = []
    for k in range(K):
        rows += [(t, k, m / 100) for t, m in ex.query_history(k)]
    rows.sort(key=lambda row: (row[0], row[1]))
    write_series(paths["prices"], rows)

    with open(paths["quotes"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("t", "asset", "bid", "ask"))
        for i, t in enumerate(result.sample_times):
            for k in range(K):
                bid, ask = result.samples[i, k]
                writer.writerow((f"{t:.3f}", k, "" if math.isnan(bid) else format_price(int(bid)),
                                 "" if math.isnan(ask) else format_price(int(ask))))

    write_validation(paths["validation"], result.reports)
    paths["summary"].write_text(summary_text(result))

    for agent in result.agents:
        if hasattr(agent, "write_diagnostics"):
            p = out / f"ia_{agent.agent_id}_diagnostics.csv"
            agent.write_diagnostics(p)
            paths[f"ia_{agent.agent_id}"] = p

    for k in range(K):
        suffix = f"_{k}" if K > 1 else ""
        bids, asks = result.samples[:, k, 0] / 100, result.samples[:, k, 1] / 100
        paths[f"price{suffix}"] = out / f"price{suffix}.svg"
        price_figure(result.sample_times, bids, asks, paths[f"price{suffix}"], f"asset {k} bid/ask")
        paths[f"spread{suffix}"] = out / f"spread{suffix}.svg"
        spread_figure(result.sample_times, asks - bids, paths[f"spread{suffix}"], f"asset {k} bid-ask spread")
        paths[f"stylized{suffix}"] = out / f"stylized_facts{suffix}.svg"
        stylized_figure([m / 100 for _, m in ex.query_history(k)], paths[f"stylized{suffix}"])
    return paths


def emit_validation(prices_by_asset: dict[int, np.ndarray], reports: dict[int, RunReport],
                    out: str | Path) -> dict[str, Path]:
    """Artifacts for ``sim validate``: a validation table and one stylized-facts figure per asset."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"validation": out / "validation.csv"}
    write_validation(paths["validation"], [reports[k] for k in sorted(reports)])
    for k, prices in sorted(prices_by_asset.items()):
        suffix = f"_{k}" if len(prices_by_asset) > 1 else ""
        paths[f"stylized{suffix}"] = out / f"stylized_facts{suffix}.svg"
        stylized_figure(prices, paths[f"stylized{suffix}"])
    return paths
