"""Chart builders over the published CSV schemas.

Four kinds: ``inversions`` (percentage of requests whose wait absorbed
a lower-priority grant), ``wmd`` (priority-weighted mean delay),
``highest-priority-delay`` (mean delay of the most urgent source), and
``overhead`` (uncontested acquire+release cost per discipline).

The delay kinds plot values normalized against the FIFO baseline when
every row carries a normalized value (the producer fills it whenever a
baseline ran); otherwise they fall back to raw values as a single
unnormalized chart.  Normalized values above the cap are drawn AT the
cap with a distinct marker and a per-panel note, so one runaway policy
cannot flatten everyone else's curves.

Rendering is deterministic: fixed style, fixed ordering, no timestamps
written into the output, so the same CSV bytes give the same image
bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .readers import read_overhead, read_results

KINDS = ("inversions", "wmd", "overhead", "highest-priority-delay")

DEFAULT_CAP = 1.25

# Fixed series order and look, so legends and colors never depend on
# row order in the input.
_POLICY_ORDER = {"FL": 0, "PL": 1, "BPL": 2, "SL": 3}
_POLICY_STYLE = {
    "FL": dict(color="tab:blue", marker="o"),
    "PL": dict(color="tab:orange", marker="s"),
    "BPL": dict(color="tab:green", marker="D"),
    "SL": dict(color="tab:red", marker="^"),
}
_FALLBACK_STYLE = dict(color="tab:gray", marker="x")

_RC = {
    "figure.dpi": 150,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


@dataclass(frozen=True)
class PlotSpec:
    """One chart request: which CSVs, which kind, where to write."""

    inputs: tuple
    kind: str
    out: str
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}, "
                             f"expected one of {KINDS}")
        if not (self.cap > 0):
            raise ValueError(f"cap must be positive, got {self.cap}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


@dataclass
class RenderInfo:
    """What a render actually drew; tests and the CLI report from this."""

    kind: str
    panels: int = 0
    series: int = 0
    points: int = 0
    clipped: int = 0
    normalized: bool = False
    notes: list = field(default_factory=list)


def _policy_key(policy: str):
    return (_POLICY_ORDER.get(policy, len(_POLICY_ORDER)), policy)


def _style(policy: str) -> dict:
    return _POLICY_STYLE.get(policy, _FALLBACK_STYLE)


def _mean(values) -> float:
    return sum(values) / len(values)


def _series_means(rows, value_of):
    """Nested mapping panel -> policy -> sorted [(x, mean y)].

    Panels split by (m, mean burst size); within a panel each policy's
    value is averaged over seeds at each arrival-rate point.
    """
    acc = {}
    for r in rows:
        y = value_of(r)
        if y is None:
            continue
        panel = (r["m"], r["mbs"])
        acc.setdefault(panel, {}) \
           .setdefault(r["policy"], {}) \
           .setdefault(r["lam_frac"], []).append(y)
    return {
        panel: {
            policy: sorted((x, _mean(ys)) for x, ys in xs.items())
            for policy, xs in sorted(policies.items(),
                                     key=lambda kv: _policy_key(kv[0]))
        }
        for panel, policies in sorted(acc.items())
    }


def _normalized_hp(rows):
    """Highest-priority delay per row against the FL row of the same
    (m, mbs, lam_frac, seed) cell; None when there is no baseline at
    all, per-entry None where one cell lacks its baseline."""
    base = {(r["m"], r["mbs"], r["lam_frac"], r["seed"]):
            r["d_highest_priority"]
            for r in rows if r["policy"] == "FL"}
    if not base:
        return None
    out = []
    for r in rows:
        b = base.get((r["m"], r["mbs"], r["lam_frac"], r["seed"]))
        out.append(None if not b else r["d_highest_priority"] / b)
    return out


def _panel_title(panel) -> str:
    m, mbs = panel
    if mbs == 0:
        return f"native, {m} threads"
    return f"{m} sources, mean burst {mbs}"


def _draw_lines(fig_axes, panels, spec, info, ylabel, clip):
    for ax, (panel, policies) in zip(fig_axes, panels.items()):
        clipped_here = 0
        for policy, points in policies.items():
            xs = [x for x, _ in points]
            ys = [y for _, y in points]
            if clip:
                over = [i for i, y in enumerate(ys) if y > spec.cap]
                clipped_here += len(over)
                ys = [min(y, spec.cap) for y in ys]
                if over:
                    ax.plot([xs[i] for i in over], [spec.cap] * len(over),
                            linestyle="none", marker="^", markersize=9,
                            markerfacecolor="white",
                            color=_style(policy)["color"], zorder=5)
            ax.plot(xs, ys, label=policy, markersize=4, **_style(policy))
            info.series += 1
            info.points += len(ys)
        if clipped_here:
            ax.text(0.02, 0.98, f"{clipped_here} above {spec.cap:g} "
                    f"drawn at the cap", transform=ax.transAxes,
                    va="top", ha="left", fontsize=8)
            info.clipped += clipped_here
        if clip:
            ax.set_ylim(top=spec.cap * 1.08)
        ax.set_xscale("log")
        ax.set_xlabel("burst arrival rate / service rate")
        ax.set_title(_panel_title(panel), fontsize=9)
        ax.legend()
        info.panels += 1
    fig_axes[0].set_ylabel(ylabel)


def _build_result_chart(spec: PlotSpec) -> tuple:
    rows = read_results(spec.inputs)
    info = RenderInfo(kind=spec.kind)

    if spec.kind == "inversions":
        value_of = lambda r: r["inversion_pct"]
        ylabel = "requests affected by inversion (%)"
        clip = False
    elif spec.kind == "wmd":
        info.normalized = bool(rows) and all(
            r["d_w_normalized"] is not None for r in rows)
        if info.normalized:
            value_of = lambda r: r["d_w_normalized"]
            ylabel = "weighted mean delay / FL"
        else:
            value_of = lambda r: r["d_w"]
            ylabel = "weighted mean delay"
        clip = info.normalized
    else:
        norm = _normalized_hp(rows)
        info.normalized = norm is not None
        if info.normalized:
            for r, v in zip(rows, norm):
                r["hp_normalized"] = v
            value_of = lambda r: r["hp_normalized"]
            ylabel = "highest-priority mean delay / FL"
        else:
            value_of = lambda r: r["d_highest_priority"]
            ylabel = "highest-priority mean delay"
        clip = info.normalized

    panels = _series_means(rows, value_of)
    if not panels:
        raise ValueError("empty cell grid: no rows to plot")

    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(panels), sharey=True,
                                 figsize=(4.2 * len(panels), 3.4),
                                 squeeze=False)
        _draw_lines(list(axes[0]), panels, spec, info, ylabel, clip)
        fig.tight_layout()
    return fig, info


def _build_overhead_chart(spec: PlotSpec) -> tuple:
    rows = read_overhead(spec.inputs)
    if not rows:
        raise ValueError("empty cell grid: no rows to plot")
    rows = sorted(rows, key=lambda r: _policy_key(r["discipline"]))
    info = RenderInfo(kind=spec.kind, panels=1, series=len(rows),
                      points=len(rows))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        xs = range(len(rows))
        medians = [r["median"] for r in rows]
        below = [r["median"] - r["min"] for r in rows]
        above = [r["p999"] - r["median"] for r in rows]
        colors = [_style(r["discipline"])["color"] for r in rows]
        ax.bar(xs, medians, yerr=[below, above], capsize=4, color=colors,
               alpha=0.85)
        for x, r in zip(xs, rows):
            ax.annotate(f"{r['median']:.0f}", (x, r["median"]),
                        textcoords="offset points", xytext=(0, 3),
                        ha="center", fontsize=8)
        ax.set_xticks(list(xs))
        ax.set_xticklabels([r["discipline"] for r in rows])
        ax.set_ylabel("uncontested acquire+release (ns)")
        ax.set_title("median, whiskers min to p99.9", fontsize=9)
        fig.tight_layout()
    return fig, info


def build_figure(spec: PlotSpec) -> tuple:
    """Build the matplotlib figure and its RenderInfo without saving."""
    if spec.kind == "overhead":
        return _build_overhead_chart(spec)
    return _build_result_chart(spec)


def render(spec: PlotSpec) -> RenderInfo:
    """Render the chart to ``spec.out`` and return what was drawn."""
    fig, info = build_figure(spec)
    try:
        if spec.out.endswith(".svg"):
            with plt.rc_context({"svg.hashsalt": "lockcharts"}):
                fig.savefig(spec.out, metadata={"Date": None})
        elif spec.out.endswith(".png"):
            fig.savefig(spec.out, metadata={"Software": "lockcharts"})
        else:
            fig.savefig(spec.out)
    finally:
        plt.close(fig)
    return info
