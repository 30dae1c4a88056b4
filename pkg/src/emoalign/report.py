"""Result tables and figures for the ablation, sweep, and classifier studies.

Every report is a tab-separated table with ``#`` comment headers plus a PNG
figure rendered next to it.  Numbers are written with ``repr`` so identical
runs produce byte-identical tables.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ContractError
from .pipeline import (AblationRow, ComparisonRow, SweepRow, ablation_means,
                       SWEEP_SPLIT)

# Large-scale reference averages for the same 2x2 study design (source study
# results; not reproducible here, shown in the header for ordering context
# only).  The source's own summary prints 52.39 for the strongest cell in one
# view and 52.59 in another; both are quoted.
REFERENCE_CELL_AVERAGES = {
    (False, False): 23.89,
    (False, True): 49.74,
    (True, False): 25.04,
    (True, True): 52.39,
}
REFERENCE_BEST_CELL_ALT = 52.59

_FLAG = {False: "no", True: "yes"}


def _write_table(path: Path, comment_lines, columns, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in comment_lines:
            fh.write(f"# {line}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(str(c) if not isinstance(c, float) else repr(c)
                              for c in row) + "\n")


def _finish_figure(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# -- ablation -----------------------------------------------------------------


def write_ablation_report(rows: list[AblationRow], out_dir) -> dict[str, Path]:
    """Per-run table, cell-mean summary, and a grouped-bar figure."""
    if not rows:
        raise ContractError("write_ablation_report: no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = sorted({r.seed for r in rows})

    runs_path = out / "ablation.tsv"
    header = [
        "encoder-alignment x prompt-tuning study, one row per run",
        f"seeds: {', '.join(str(s) for s in seeds)}",
        "reference cell averages from the source large-scale study "
        "(ordering context only, not reproduced at this scale):",
        "  align=no tune=no 23.89 | align=no tune=yes 49.74 | "
        "align=yes tune=no 25.04 | align=yes tune=yes 52.39 "
        f"(also quoted as {REFERENCE_BEST_CELL_ALT} in the source's per-corpus view)",
    ]
    _write_table(runs_path, header,
                 ("aligned", "tuned_prompts", "split", "seed", "wa", "ua"),
                 [(_FLAG[r.pretrained], _FLAG[r.acpt], r.split, r.seed, r.wa, r.ua)
                  for r in rows])

    summary_path = out / "ablation_summary.tsv"
    cells = [(False, False), (False, True), (True, False), (True, True)]
    means = {split: ablation_means(rows, split) for split in ("test_in", "test_dg")}
    summary_rows = [(_FLAG[p], _FLAG[a],
                     means["test_in"][(p, a)], means["test_dg"][(p, a)])
                    for (p, a) in cells]
    _write_table(summary_path,
                 ["mean weighted accuracy over seeds, per cell"],
                 ("aligned", "tuned_prompts", "wa_test_in", "wa_test_dg"),
                 summary_rows)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    x = np.arange(len(cells))
    width = 0.38
    labels = ["align:no\ntune:no", "align:no\ntune:yes",
              "align:yes\ntune:no", "align:yes\ntune:yes"]
    for k, (split, color) in enumerate((("test_in", "#4878d0"),
                                        ("test_dg", "#ee854a"))):
        vals = [means[split][c] for c in cells]
        ax.bar(x + (k - 0.5) * width, vals, width, label=split, color=color)
        for r in rows:
            if r.split == split:
                xi = cells.index((r.pretrained, r.acpt))
                ax.plot(xi + (k - 0.5) * width, r.wa, "k.", markersize=4)
    ax.set_xticks(x, labels)
    ax.set_ylabel("weighted accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Alignment and prompt tuning, mean over seeds (dots: runs)")
    ax.legend()
    fig_path = out / "ablation.png"
    _finish_figure(fig, fig_path)
    return {"runs": runs_path, "summary": summary_path, "figure": fig_path}


# -- prompt-length sweep --------------------------------------------------------


def write_sweep_report(rows: list[SweepRow], out_dir) -> dict[str, Path]:
    """Plot-ready table plus accuracy-vs-prompt-count figure."""
    if not rows:
        raise ContractError("write_sweep_report: no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = sorted({r.seed for r in rows})
    lengths = sorted({r.n_prompt for r in rows})

    table_path = out / "sweep.tsv"
    _write_table(table_path,
                 [f"prompt-count sweep on {SWEEP_SPLIT}, one row per (count, seed)"],
                 ("n_prompt", "seed", "wa", "ua"),
                 [(r.n_prompt, r.seed, r.wa, r.ua) for r in rows])

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for seed in seeds:
        pts = sorted((r.n_prompt, r.wa) for r in rows if r.seed == seed)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o--", alpha=0.45,
                label=f"seed {seed}")
    mean_wa = [float(np.mean([r.wa for r in rows if r.n_prompt == n]))
               for n in lengths]
    ax.plot(lengths, mean_wa, "ks-", linewidth=2, label="mean")
    ax.set_xscale("log", base=2)
    ax.set_xticks(lengths, [str(n) for n in lengths])
    ax.set_xlabel("prompt vectors per soundscape")
    ax.set_ylabel(f"weighted accuracy ({SWEEP_SPLIT})")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Prompt-count sweep")
    ax.legend()
    fig_path = out / "sweep.png"
    _finish_figure(fig, fig_path)
    return {"table": table_path, "figure": fig_path}


# -- classifier-loss comparison ---------------------------------------------------


def write_comparison_report(rows: list[ComparisonRow], out_dir) -> dict[str, Path]:
    """Margin-softmax vs plain-softmax table and per-split bar figure."""
    if not rows:
        raise ContractError("write_comparison_report: no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = sorted({r.seed for r in rows})
    variants = ("arcface", "softmax")
    splits = ("test_in", "test_dg")

    table_path = out / "classifier_comparison.tsv"
    _write_table(table_path,
                 ["classifier head comparison on identical tuned text features",
                  f"seeds: {', '.join(str(s) for s in seeds)}",
                  "single-run deltas at this scale are noise; this table is "
                  "informational, not a gate"],
                 ("loss", "split", "seed", "wa", "ua"),
                 [(r.loss_variant, r.split, r.seed, r.wa, r.ua) for r in rows])

    means = {(v, s): float(np.mean([r.wa for r in rows
                                    if r.loss_variant == v and r.split == s]))
             for v in variants for s in splits}
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    x = np.arange(len(splits))
    width = 0.38
    for k, (variant, color) in enumerate((("arcface", "#4878d0"),
                                          ("softmax", "#d65f5f"))):
        vals = [means[(variant, s)] for s in splits]
        ax.bar(x + (k - 0.5) * width, vals, width, label=variant, color=color)
        for r in rows:
            if r.loss_variant == variant:
                xi = splits.index(r.split)
                ax.plot(xi + (k - 0.5) * width, r.wa, "k.", markersize=4)
    ax.set_xticks(x, splits)
    ax.set_ylabel("weighted accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Classifier loss variants, mean over seeds (dots: runs)")
    ax.legend()
    fig_path = out / "classifier_comparison.png"
    _finish_figure(fig, fig_path)
    return {"table": table_path, "figure": fig_path}
