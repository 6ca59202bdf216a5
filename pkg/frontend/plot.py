#!/usr/bin/env python3
"""Log-log convergence figures from solver study CSVs.

Reads one or more CSV reports (header `level,h,h_prime,rms_error,stderr`,
rows, then `# key=value` comment lines) and renders a single log-log panel of
error versus h, one series per file, with dashed guide lines anchored at each
series' coarsest point. Guide slopes default to min(predicted_r1_plus_1,
predicted_r2) read from the CSV comments.

Usage: plot.py --out FIG.png file1.csv [file2.csv ...]
"""

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HEADER = "level,h,h_prime,rms_error,stderr"


class CsvFormatError(ValueError):
    """Malformed study CSV; message names the file and line."""


@dataclass
class Report:
    path: str
    h: list
    error: list
    stderr: list
    meta: dict

    @property
    def guide_slope(self):
        r1p1 = self.meta.get("predicted_r1_plus_1", math.nan)
        r2 = self.meta.get("predicted_r2", math.nan)
        slope = min(r1p1, r2)
        return slope if math.isfinite(slope) else None


@dataclass
class PlotSpec:
    inputs: list
    out: str
    labels: list = field(default_factory=list)
    guide_slopes: list = field(default_factory=list)
    dpi: int = 150

    def __post_init__(self):
        if not self.inputs:
            raise CsvFormatError("need at least one input CSV")
        for slope in self.guide_slopes:
            if not math.isfinite(slope):
                raise CsvFormatError(f"guide slope {slope!r} is not finite")


def parse_report(path):
    h, err, se, meta = [], [], [], {}
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != HEADER:
            raise CsvFormatError(f"{path}:1: expected header {HEADER!r}, got {first!r}")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, val = line[1:].strip().partition("=")
                if sep:
                    try:
                        meta[key.strip()] = float(val.strip())
                    except ValueError:
                        meta[key.strip()] = val.strip()
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise CsvFormatError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            try:
                h.append(float(parts[1]))
                err.append(float(parts[3]))
                se.append(float(parts[4]))
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    if not h:
        raise CsvFormatError(f"{path}: no data rows")
    return Report(path, h, err, se, meta)


def guide_points(h, anchor_h, anchor_e, slope):
    """Dashed reference line through the coarsest point with the given slope."""
    return [anchor_e * (x / anchor_h) ** slope for x in h]


def render(spec):
    """Render the panel; pure function of the CSV bytes (no timestamps)."""
    reports = [parse_report(p) for p in spec.inputs]
    labels = list(spec.labels) if spec.labels else [
        os.path.splitext(os.path.basename(p))[0] for p in spec.inputs]
    if len(labels) != len(reports):
        raise CsvFormatError("one label per input CSV required")

    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (rep, label) in enumerate(zip(reports, labels)):
        color = colors[i % len(colors)]
        ax.loglog(rep.h, rep.error, "o-", color=color, label=label, markersize=4)
        slope = (spec.guide_slopes[i] if i < len(spec.guide_slopes)
                 else rep.guide_slope)
        if slope is not None:
            guide = guide_points(rep.h, rep.h[0], rep.error[0], slope)
            ax.loglog(rep.h, guide, "--", color=color, linewidth=0.9, alpha=0.7,
                      label=f"slope {slope:g}")
    ax.set_xlabel("h")
    ax.set_ylabel("strong error")
    ax.grid(True, which="both", linewidth=0.3, alpha=0.5)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.out, dpi=spec.dpi, metadata={"Software": None})
    plt.close(fig)
    return spec.out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("inputs", nargs="+", metavar="file.csv")
    parser.add_argument("--out", required=True, metavar="FIG.png")
    parser.add_argument("--labels", help="comma-separated series labels")
    parser.add_argument("--slopes", help="comma-separated guide slopes "
                                         "(default: from CSV comments)")
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)
    labels = args.labels.split(",") if args.labels else []
    slopes = [float(s) for s in args.slopes.split(",")] if args.slopes else []
    try:
        render(PlotSpec(args.inputs, args.out, labels, slopes, args.dpi))
    except CsvFormatError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
