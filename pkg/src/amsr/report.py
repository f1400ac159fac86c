"""Machine-readable evaluation reports and their text-table rendering.

Reports are versioned JSON with a config hash; the aligned text table is
always rendered from the JSON object so the two can never disagree.  Published
benchmark values from the literature can be attached as a clearly-labelled
static reference block; they are reference display only, never measurements.
"""

import hashlib
import json

PUBLISHED_NOTE = "published reference values, not reproduced by this run"

# (method, dataset, scale) -> (mean PSNR dB, mean SSIM)
PUBLISHED_BENCHMARKS = {
    ("bicubic", "Set5", 2): (33.66, 0.9299),
    ("bicubic", "Set14", 2): (30.24, 0.8688),
    ("bicubic", "BSD100", 2): (29.56, 0.8431),
    ("bicubic", "Urban100", 2): (26.88, 0.8403),
    ("bicubic", "Set5", 3): (30.39, 0.8682),
    ("bicubic", "Set14", 3): (27.55, 0.7742),
    ("bicubic", "BSD100", 3): (27.21, 0.7382),
    ("bicubic", "Urban100", 3): (24.46, 0.7349),
    ("bicubic", "Set5", 4): (28.42, 0.8104),
    ("bicubic", "Set14", 4): (26.00, 0.7027),
    ("bicubic", "BSD100", 4): (25.96, 0.6675),
    ("bicubic", "Urban100", 4): (23.14, 0.6577),
    ("srcnn", "Set5", 2): (36.66, 0.9542),
    ("srcnn", "Set14", 2): (32.42, 0.9063),
    ("srcnn", "BSD100", 2): (31.36, 0.8879),
    ("srcnn", "Urban100", 2): (29.50, 0.8946),
    ("srcnn", "Set5", 3): (32.75, 0.9090),
    ("srcnn", "Set14", 3): (29.28, 0.8208),
    ("srcnn", "BSD100", 3): (28.41, 0.7863),
    ("srcnn", "Urban100", 3): (26.24, 0.7989),
    ("srcnn", "Set5", 4): (30.48, 0.8628),
    ("srcnn", "Set14", 4): (27.49, 0.7503),
    ("srcnn", "BSD100", 4): (26.90, 0.7101),
    ("srcnn", "Urban100", 4): (24.52, 0.7221),
    ("vdsr", "Set5", 2): (37.53, 0.9587),
    ("vdsr", "Set14", 2): (33.03, 0.9124),
    ("vdsr", "BSD100", 2): (31.90, 0.8960),
    ("vdsr", "Urban100", 2): (30.76, 0.9140),
    ("vdsr", "Set5", 3): (33.66, 0.9213),
    ("vdsr", "Set14", 3): (29.77, 0.8314),
    ("vdsr", "BSD100", 3): (28.82, 0.7976),
    ("vdsr", "Urban100", 3): (27.14, 0.8279),
    ("vdsr", "Set5", 4): (31.35, 0.8838),
    ("vdsr", "Set14", 4): (28.01, 0.7674),
    ("vdsr", "BSD100", 4): (27.29, 0.7251),
    ("vdsr", "Urban100", 4): (25.18, 0.7524),
    ("lapsrn", "Set5", 2): (37.52, 0.9591),
    ("lapsrn", "Set14", 2): (33.08, 0.9130),
    ("lapsrn", "BSD100", 2): (30.41, 0.9101),
    ("lapsrn", "Urban100", 2): (37.27, 0.9740),
    ("lapsrn", "Set5", 3): (33.82, 0.9227),
    ("lapsrn", "Set14", 3): (29.79, 0.8320),
    ("lapsrn", "BSD100", 3): (27.07, 0.8272),
    ("lapsrn", "Urban100", 3): (32.19, 0.9334),
    ("lapsrn", "Set5", 4): (31.51, 0.8855),
    ("lapsrn", "Set14", 4): (28.19, 0.7720),
    ("lapsrn", "BSD100", 4): (25.21, 0.7553),
    ("lapsrn", "Urban100", 4): (29.09, 0.8893),
    ("memnet", "Set5", 2): (37.78, 0.9597),
    ("memnet", "Set14", 2): (33.28, 0.9142),
    ("memnet", "BSD100", 2): (32.08, 0.8978),
    ("memnet", "Urban100", 2): (31.31, 0.9195),
    ("memnet", "Set5", 3): (34.09, 0.9248),
    ("memnet", "Set14", 3): (30.00, 0.8350),
    ("memnet", "BSD100", 3): (28.96, 0.8001),
    ("memnet", "Urban100", 3): (27.56, 0.8376),
    ("memnet", "Set5", 4): (31.74, 0.8893),
    ("memnet", "Set14", 4): (28.26, 0.7723),
    ("memnet", "BSD100", 4): (27.40, 0.7281),
    ("memnet", "Urban100", 4): (25.50, 0.7630),
    ("amsr", "Set5", 2): (37.92, 0.9623),
    ("amsr", "Set14", 2): (33.51, 0.9160),
    ("amsr", "BSD100", 2): (32.23, 0.8997),
    ("amsr", "Urban100", 2): (31.88, 0.9290),
    ("amsr", "Set5", 3): (34.23, 0.9299),
    ("amsr", "Set14", 3): (30.22, 0.8369),
    ("amsr", "BSD100", 3): (29.01, 0.8056),
    ("amsr", "Urban100", 3): (27.88, 0.8499),
    ("amsr", "Set5", 4): (31.95, 0.8912),
    ("amsr", "Set14", 4): (28.43, 0.7748),
    ("amsr", "BSD100", 4): (27.49, 0.7334),
    ("amsr", "Urban100", 4): (25.78, 0.7753),
}

# (non-local, second-order, multi-scale) -> published best mean PSNR on Set5 x2
PUBLISHED_ABLATION = [
    {"nonlocal": True, "second_order": False, "multiscale": False, "psnr_db": 36.32},
    {"nonlocal": False, "second_order": True, "multiscale": False, "psnr_db": 36.78},
    {"nonlocal": False, "second_order": False, "multiscale": True, "psnr_db": 36.54},
    {"nonlocal": True, "second_order": True, "multiscale": True, "psnr_db": 37.23},
]

REPORT_VERSION = 1


def config_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def json_bytes(obj):
    """Canonical JSON encoding: sorted keys, fixed separators, trailing newline."""
    return (json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True) + "\n").encode("utf-8")


def write_json(obj, path):
    with open(path, "wb") as f:
        f.write(json_bytes(obj))


def build_eval_report(method, dataset, scale, records, tool_version, config_text,
                      include_published=True):
    mean_psnr, mean_ssim = _aggregate_from_records(records)
    report = {
        "report_version": REPORT_VERSION,
        "method": method,
        "dataset": dataset,
        "scale": scale,
        "tool_version": tool_version,
        "config_hash": config_hash(config_text),
        "images": [
            {
                "image_id": r.image_id,
                "psnr_db": r.psnr_db,
                "ssim": r.ssim,
                "shave": r.shave,
            }
            for r in records
        ],
        "mean_psnr_db": mean_psnr,
        "mean_ssim": mean_ssim,
    }
    if include_published:
        block = {}
        for (meth, ds, sc), (p, s) in sorted(PUBLISHED_BENCHMARKS.items()):
            if ds.lower() == str(dataset).lower() and sc == scale:
                block[meth] = {"psnr_db": p, "ssim": s}
        if block:
            report["published_reference"] = {"note": PUBLISHED_NOTE, "methods": block}
    return report


def _aggregate_from_records(records):
    import numpy as np

    psnrs = [r.psnr_db for r in records if np.isfinite(r.psnr_db)]
    mean_psnr = float(np.mean(psnrs)) if psnrs else float("inf")
    mean_ssim = float(np.mean([r.ssim for r in records])) if records else 0.0
    return mean_psnr, mean_ssim


def render_eval_table(report):
    """Aligned text rendering of an evaluation report JSON object."""
    lines = []
    head = f"{report['method']} on {report['dataset']} (x{report['scale']})"
    lines.append(head)
    lines.append("-" * len(head))
    lines.append(f"{'image':<28} {'PSNR (dB)':>10} {'SSIM':>8}")
    for rec in report["images"]:
        lines.append(f"{rec['image_id']:<28} {rec['psnr_db']:>10.2f} {rec['ssim']:>8.4f}")
    lines.append(f"{'mean':<28} {report['mean_psnr_db']:>10.2f} {report['mean_ssim']:>8.4f}")
    pub = report.get("published_reference")
    if pub:
        lines.append("")
        lines.append(f"[{pub['note']}]")
        for meth, vals in pub["methods"].items():
            lines.append(f"{meth:<28} {vals['psnr_db']:>10.2f} {vals['ssim']:>8.4f}")
    return "\n".join(lines) + "\n"


def build_ablation_report(rows, dataset, scale, tool_version, config_text):
    return {
        "report_version": REPORT_VERSION,
        "kind": "ablation",
        "dataset": dataset,
        "scale": scale,
        "tool_version": tool_version,
        "config_hash": config_hash(config_text),
        "rows": rows,
        "published_reference": {"note": PUBLISHED_NOTE, "rows": PUBLISHED_ABLATION},
    }


def render_ablation_table(rows, title="ablation"):
    """Three flag columns plus PSNR, one row per variant."""
    lines = [title, "-" * len(title)]
    lines.append(f"{'Non-local':>9}  {'Second-order':>12}  {'Multi-scale':>11}  {'PSNR (dB)':>9}")

    def mark(v):
        return "yes" if v else "no"

    for row in rows:
        lines.append(
            f"{mark(row['nonlocal']):>9}  {mark(row['second_order']):>12}  "
            f"{mark(row['multiscale']):>11}  {row['psnr_db']:>9.2f}"
        )
    return "\n".join(lines) + "\n"
