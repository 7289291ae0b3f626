"""JSON and CSV writers for regularity reports, profiles and sweep tables."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import pandas as pd

from zygmund_charts.charts import loss_profile, loss_series
from zygmund_charts.metadata import dumps
from zygmund_charts.spectral import RegularityReport

PROFILE_TERMS = 20


def write_json(data, output_path: Path) -> Path:
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = output_path.with_suffix(output_path.suffix + ".tmp")
    tmp.write_text(dumps(data) + "\n", encoding="utf-8")
    tmp.replace(output_path)
    return output_path


def write_table_csv(table: pd.DataFrame, output_path: Path) -> Path:
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_path, index=False, lineterminator="\n")
    return output_path


def block_table(report: RegularityReport) -> pd.DataFrame:
    norms = np.asarray(report.block_norms, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logs = np.where(norms > 0, np.log2(np.where(norms > 0, norms, 1.0)), -np.inf)
    return pd.DataFrame({"j": np.arange(norms.size), "log2_block_norm": logs})


def write_regularity_report(
    report: RegularityReport, output_path: Path, extra: dict | None = None
) -> Path:
    data = report.to_dict()
    if extra:
        data.update(extra)
    return write_json(data, output_path)


def write_block_csv(report: RegularityReport, output_path: Path) -> Path:
    table = block_table(report)
    table["log2_block_norm"] = table["log2_block_norm"].replace(-np.inf, np.nan)
    return write_table_csv(table, output_path)


def profile_table(alpha: float, points: int, s_max: float = 1.0) -> pd.DataFrame:
    """(s, g(s), truncated series) on an even grid ending at s_max."""
    if points < 1:
        raise ValueError("points must be at least 1")
    s = np.linspace(s_max / points, s_max, points)
    return pd.DataFrame(
        {
            "s": s,
            "g": loss_profile(s, alpha),
            "series": loss_series(s, alpha, PROFILE_TERMS),
        }
    )


def write_profile_csv(
    alpha: float, points: int, output_path: Path, s_max: float = 1.0
) -> Path:
    return write_table_csv(profile_table(alpha, points, s_max), output_path)


def main():
    parser = argparse.ArgumentParser(description="Write the closed-form profile CSV.")
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--points", type=int, default=100)
    parser.add_argument("--out", default="outputs/profile.csv")
    args = parser.parse_args()
    path = write_profile_csv(args.alpha, args.points, Path(args.out))
    print(f"Wrote {path}")


if __name__ == "__main__":
    main()
