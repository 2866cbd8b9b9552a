"""Analysis matrix orchestration, candidate comparison and rendering."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .complexity import select_optimal_wavelet, summarize
from .hmt import EMConfig, em_fit, upward_downward
from .ingest import CHANNELS, crop_to_dyadic, dyadic_crop_box, extract_patch, load_image, plan_patches, split_channels
from .wavelet import BOUNDARY_RULE, MENU, ORIENTATION_CONVENTION, ORIENTATIONS, build_forest, decompose, filter_bank

SPEC_VERSION = "1.0"
ROW_ORDER = (("global", "Global"), ("D", "Diagonal"), ("H", "Horizontal"), ("V", "Vertical"))
CURVE_COLOURS = {"haar": "#000000", "db2": "#d62728", "sym3": "#e6c200", "coif1": "#2ca02c",
                 "bior1.3": "#e377c2", "rbior1.3": "#7b2fbe", "dmey": "#1f3fd6"}
TIE_TOL = 1e-12


class ReportError(ValueError):
    pass


@dataclass
class RunConfig:
    images: List[str]
    channels: Tuple[str, ...] = CHANNELS
    wavelets: Tuple[str, ...] = MENU
    K: int = 2
    J: int = 9
    mode: str = "whole"
    patch_size: int = 512
    em: EMConfig = field(default_factory=EMConfig)
    eps: float = 1e-9
    out_dir: Optional[str] = None
    formats: Tuple[str, ...] = ("json",)
    jobs: int = 1

    def validate(self) -> None:
        if not self.images:
            raise ReportError("no input images")
        if not self.channels or set(self.channels) - set(CHANNELS):
            raise ReportError(f"channels must be a non-empty subset of {CHANNELS}")
        if not self.wavelets or set(self.wavelets) - set(MENU):
            raise ReportError(f"wavelets must be a non-empty subset of {MENU}")
        if not 2 <= self.K <= 5:
            raise ReportError("number of hidden states must be between 2 and 5")
        if self.J < 1:
            raise ReportError("levels must be positive")
        if self.mode not in ("whole", "patch"):
            raise ReportError("mode must be 'whole' or 'patch'")
        if self.mode == "patch" and self.patch_size % 2 ** self.J:
            raise ReportError(f"patch size {self.patch_size} is not divisible by 2^{self.J}")
        if set(self.formats) - {"json", "csv", "md", "svg"}:
            raise ReportError("formats must be a subset of json, csv, md, svg")

    def protocol(self) -> dict:
        """The result-determining part of the config (no paths, no job count)."""
        return {"channels": list(self.channels), "wavelets": [w for w in MENU if w in self.wavelets],
                "states": self.K, "levels": self.J, "mode": self.mode,
                "patch_size": self.patch_size if self.mode == "patch" else None,
                "em": {"max_iter": self.em.max_iter, "rel_tol": self.em.rel_tol,
                       "seed": self.em.seed, "restarts": self.em.restarts},
                "span_eps": self.eps}


@dataclass
class AnalysisReport:
    data: dict

    @property
    def cells(self) -> List[dict]:
        return self.data["cells"]

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AnalysisReport":
        return cls(json.loads(text))

    def tables(self) -> Dict[Tuple[str, str, str], Dict[str, dict]]:
        """(image, channel, unit) -> wavelet -> cell, in report order."""
        out: Dict[Tuple[str, str, str], Dict[str, dict]] = {}
        for c in self.cells:
            out.setdefault((c["image"], c["channel"], c["unit"]), {})[c["wavelet"]] = c
        return out


def image_id(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _analyze_unit(job):
    """Worker: one (image, channel, wavelet, unit) cell. Returns a JSON-ready dict."""
    values, K, J, wavelet, em_cfg, eps = job
    try:
        pyr = decompose(values, filter_bank(wavelet), J)
        posts, fitted, diags, degen = {}, {}, {}, {}
        for o in ORIENTATIONS:
            forest = build_forest(pyr, o)
            model, diag = em_fit(forest, K, em_cfg)
            model.meta["wavelet"] = wavelet
            posts[o] = upward_downward(forest, model)
            fitted[o] = model
            diags[o] = diag.to_dict()
            degen[o] = diag.degenerate_forest
        summary = summarize(posts, fitted, degen, eps)
        models = {o: fitted[o].to_dict() for o in ORIENTATIONS}
        return {"summary": summary.to_dict(), "models": models, "diagnostics": diags, "error": None}
    except Exception as exc:  # recorded per cell, run continues
        return {"summary": None, "models": None, "diagnostics": None,
                "error": f"{type(exc).__name__}: {exc}"}


def _units(plane, cfg: RunConfig):
    """Yield (unit label, extra metadata, values) for one channel plane."""
    if cfg.mode == "whole":
        r0, c0, ch, cw = dyadic_crop_box(plane.height, plane.width, cfg.J)
        cropped = crop_to_dyadic(plane, cfg.J)
        meta = {"origin": [r0, c0], "shape": [ch, cw],
                "cropped": [ch, cw] != [plane.height, plane.width]}
        yield "whole", meta, cropped.values
        return
    grid = plan_patches(plane, cfg.patch_size)
    for r, c in grid.origins:
        meta = {"origin": [r, c], "shape": [cfg.patch_size, cfg.patch_size],
                "cropped": True, "overlap": grid.overlap_flag}
        yield f"patch@{r},{c}", meta, extract_patch(plane, (r, c), cfg.patch_size).values


def run_analysis(cfg: RunConfig) -> AnalysisReport:
    cfg.validate()
    images, cells, jobs = [], [], []
    wavelets = [w for w in MENU if w in cfg.wavelets]
    for path in cfg.images:
        iid = image_id(path)
        try:
            img = load_image(path)
        except Exception as exc:
            images.append({"id": iid, "file": os.path.basename(path), "error": str(exc)})
            for ch in cfg.channels:
                cells.append({"image": iid, "channel": ch, "wavelet": None, "unit": None,
                              "unit_meta": None, "summary": None, "models": None,
                              "diagnostics": None, "error": f"ImageLoadError: {exc}"})
            continue
        images.append({"id": iid, "file": os.path.basename(path), "sha256": _sha256(path),
                       "width": img.width, "height": img.height})
        planes = dict(zip(CHANNELS, split_channels(img)))
        for ch in cfg.channels:
            try:
                units = list(_units(planes[ch], cfg))
            except Exception as exc:
                cells.append({"image": iid, "channel": ch, "wavelet": None, "unit": None,
                              "unit_meta": None, "summary": None, "models": None,
                              "diagnostics": None, "error": f"{type(exc).__name__}: {exc}"})
                continue
            for label, meta, values in units:
                for w in wavelets:
                    cells.append({"image": iid, "channel": ch, "wavelet": w, "unit": label,
                                  "unit_meta": meta})
                    jobs.append((values, cfg.K, cfg.J, w, cfg.em, cfg.eps))
    if not cells:
        raise ReportError("empty run")
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_analyze_unit, jobs))
    else:
        results = [_analyze_unit(j) for j in jobs]
    it = iter(results)
    for cell in cells:
        if "error" not in cell:
            cell.update(next(it))
    optimal = _mark_optimal(cells)
    data = {
        "spec_version": SPEC_VERSION,
        "tool": {"name": "hmtart", "version": __version__},
        "conventions": {
            "boundary": BOUNDARY_RULE,
            "orientation": ORIENTATION_CONVENTION,
            "internal_time": "t=1 coarsest detail scale, t=J finest",
            "whole_image_geometry": "centered crop to multiples of 2^J (no padding)",
            "patch_placement": "stride = patch size, last row/column clamped to the border",
            "local_complexity": "Shannon entropy (bits) of each node's posterior state distribution",
            "orientational_complexity": "joint posterior entropy of the hidden tree given the coefficients, bits per node",
            "global_complexity": "mean of horizontal, vertical and diagonal complexities",
            "model_entropy": "prior entropy of the hidden tree under the fitted model, bits per node (diagnostic)",
            "state_order": "ascending variance at the finest scale",
        },
        "config": cfg.protocol(),
        "images": images,
        "cells": cells,
        "optimal": optimal,
        "errors": [{k: c[k] for k in ("image", "channel", "wavelet", "unit", "error")}
                   for c in cells if c.get("error")],
    }
    return AnalysisReport(data)


def _mark_optimal(cells: List[dict]) -> List[dict]:
    groups: Dict[tuple, Dict[str, dict]] = {}
    for c in cells:
        if c.get("summary"):
            groups.setdefault((c["image"], c["channel"], c["unit"]), {})[c["wavelet"]] = c
    out = []
    for (iid, ch, unit), by_w in groups.items():
        best = select_optimal_wavelet({w: c["summary"]["global"] for w, c in by_w.items()})
        by_w[best]["summary"]["optimal"] = True
        out.append({"image": iid, "channel": ch, "unit": unit, "wavelet": best,
                    "global": by_w[best]["summary"]["global"]})
    return out


def write_outputs(report: AnalysisReport, out_dir: str, formats: Sequence[str], stem: str = "report") -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, f"{stem}.json")
        with open(path, "w") as fh:
            fh.write(report.to_json())
        written.append(path)
    for fmt in ("csv", "md"):
        if fmt in formats:
            path = os.path.join(out_dir, f"{stem}_tables.{fmt}")
            with open(path, "w") as fh:
                fh.write(render_table(report, fmt))
            written.append(path)
    if "csv" in formats or "svg" in formats:
        written += render_curves(report, os.path.join(out_dir, f"{stem}_curves"),
                                 svg="svg" in formats, csv_out=True)
    return written


# -- comparison ----------------------------------------------------------------

def _optimal_index(report: AnalysisReport):
    return {(o["channel"], o["unit"]): o for o in report.data["optimal"]}


def _orientation_consistency(report: AnalysisReport, iid: str, channel: str, unit: str, best: str) -> dict:
    by_w = report.tables().get((iid, channel, unit), {})
    ok = {w: c for w, c in by_w.items() if c.get("summary")}
    out = {}
    for o in ORIENTATIONS:
        arg = select_optimal_wavelet({w: c["summary"]["orientational"][o] for w, c in ok.items()})
        out[o] = arg
    return {"per_orientation_optimal": out,
            "agrees_with_global": {o: out[o] == best for o in ORIENTATIONS}}


def _single_image(report: AnalysisReport) -> str:
    ids = [im["id"] for im in report.data["images"]]
    if len(ids) != 1:
        raise ReportError("compare expects one image per report")
    return ids[0]


def compare(a: AnalysisReport, b: AnalysisReport) -> dict:
    """Order two candidates by optimal-wavelet global complexity.

    Per unit, the candidate with the larger optimal global complexity wins;
    per channel, the majority of unit winners; overall, the majority of
    channel winners. Only the complexity ordering is reported.
    """
    ida, idb = _single_image(a), _single_image(b)
    if a.data["config"] != b.data["config"]:
        raise ReportError("reports were produced with different configurations")
    oa, ob = _optimal_index(a), _optimal_index(b)
    channels = a.data["config"]["channels"]
    units_a = sorted({u for (_, u) in oa}, key=_unit_key)
    units_b = sorted({u for (_, u) in ob}, key=_unit_key)
    if len(units_a) != len(units_b):
        raise ReportError("reports have different numbers of analysis units")
    label = {ida: "candidate-A", idb: "candidate-B"}
    if ida == idb:
        label = {ida: "candidate-A"}
    per_channel = {}
    channel_winners = []
    for ch in channels:
        units = []
        for ua, ub in zip(units_a, units_b):
            ca, cb = oa.get((ch, ua)), ob.get((ch, ub))
            if ca is None or cb is None:
                units.append({"unit_a": ua, "unit_b": ub, "winner": None, "note": "missing result"})
                continue
            margin = ca["global"] - cb["global"]
            winner = "tie" if abs(margin) <= TIE_TOL else (ida if margin > 0 else idb)
            units.append({
                "unit_a": ua, "unit_b": ub,
                "a": {"id": ida, "optimal_wavelet": ca["wavelet"], "global": ca["global"],
                      "consistency": _orientation_consistency(a, ida, ch, ua, ca["wavelet"])},
                "b": {"id": idb, "optimal_wavelet": cb["wavelet"], "global": cb["global"],
                      "consistency": _orientation_consistency(b, idb, ch, ub, cb["wavelet"])},
                "margin": abs(margin), "winner": winner})
        tally = {ida: 0, idb: 0, "tie": 0}
        for u in units:
            if u["winner"] is not None:
                tally[u["winner"]] = tally.get(u["winner"], 0) + 1
        winner = _majority(tally.get(ida, 0), tally.get(idb, 0), ida, idb)
        margins = [u["margin"] * (1 if u["winner"] == ida else -1 if u["winner"] == idb else 0)
                   for u in units if u["winner"] is not None]
        per_channel[ch] = {"winner": winner, "tally": tally, "units": units,
                           "mean_signed_margin_a_minus_b": float(np.mean(margins)) if margins else None}
        channel_winners.append(winner)
    overall = _majority(channel_winners.count(ida), channel_winners.count(idb), ida, idb)
    return {
        "spec_version": SPEC_VERSION,
        "candidates": {"candidate-A": ida, "candidate-B": idb},
        "labels": label,
        "per_channel": per_channel,
        "channel_winners": dict(zip(channels, channel_winners)),
        "overall_winner": overall,
        "rule": "per unit: larger optimal-wavelet global complexity; per channel and overall: "
                "simple majority (a convention, not a statistical test)",
        "disclaimer": "States which candidate shows the higher complexity ordering only; "
                      "makes no authorship claim.",
    }


def _majority(na: int, nb: int, ida: str, idb: str) -> str:
    if na > nb:
        return ida
    if nb > na:
        return idb
    return "tie"


def _unit_key(u: str):
    if u == "whole":
        return (0, 0, 0)
    r, c = u.split("@", 1)[1].split(",")
    return (1, int(r), int(c))


def render_verdict_md(verdict: dict) -> str:
    lines = ["# Complexity comparison", "",
             f"- candidate-A: `{verdict['candidates']['candidate-A']}`",
             f"- candidate-B: `{verdict['candidates']['candidate-B']}`",
             f"- overall (channel majority): **{verdict['overall_winner']}**", "",
             "| Channel | Unit | A optimal | A global | B optimal | B global | Margin | Winner |",
             "|---|---|---|---|---|---|---|---|"]
    for ch, res in verdict["per_channel"].items():
        for u in res["units"]:
            if u["winner"] is None:
                lines.append(f"| {ch} | {u['unit_a']} | n/a | n/a | n/a | n/a | n/a | n/a |")
                continue
            lines.append(f"| {ch} | {u['unit_a']} | {u['a']['optimal_wavelet']} | {u['a']['global']:.4f} | "
                         f"{u['b']['optimal_wavelet']} | {u['b']['global']:.4f} | {u['margin']:.4f} | {u['winner']} |")
    lines += ["", f"Rule: {verdict['rule']}.", "", verdict["disclaimer"], ""]
    return "\n".join(lines)


# -- rendering -----------------------------------------------------------------

def _row_values(by_w: Dict[str, dict], wavelets: Sequence[str], key: str) -> Dict[str, Optional[float]]:
    out = {}
    for w in wavelets:
        c = by_w.get(w)
        if c is None or not c.get("summary"):
            out[w] = None
        elif key == "global":
            out[w] = c["summary"]["global"]
        else:
            out[w] = c["summary"]["orientational"][key]
    return out


def render_table(report: AnalysisReport, fmt: str = "md") -> str:
    """One table per (image, channel, unit); the row maximum is bold (md) or starred (csv)."""
    if fmt not in ("md", "csv"):
        raise ValueError("format must be 'md' or 'csv'")
    tables = report.tables()
    tables = {k: v for k, v in tables.items() if k[2] is not None}
    if not tables:
        raise ReportError("report has no results to tabulate")
    wavelets = [w for w in MENU if w in report.data["config"]["wavelets"]]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image", "channel", "unit", "complexity", *wavelets])
    else:
        parts = []
    for (iid, ch, unit), by_w in tables.items():
        rows = []
        for key, title in ROW_ORDER:
            vals = _row_values(by_w, wavelets, key)
            present = {w: v for w, v in vals.items() if v is not None}
            best = select_optimal_wavelet(present) if present else None
            rows.append((title, vals, best))
        if fmt == "csv":
            for title, vals, best in rows:
                writer.writerow([iid, ch, unit, title.lower()] + [
                    "" if vals[w] is None else f"{vals[w]:.4f}" + ("*" if w == best else "")
                    for w in wavelets])
        else:
            parts.append(f"### {iid}, channel {ch}, {unit}\n")
            parts.append("| Complexity | " + " | ".join(wavelets) + " |")
            parts.append("|---" * (len(wavelets) + 1) + "|")
            for title, vals, best in rows:
                cells = []
                for w in wavelets:
                    if vals[w] is None:
                        cells.append("n/a")
                    elif w == best:
                        cells.append(f"**{vals[w]:.4f}**")
                    else:
                        cells.append(f"{vals[w]:.4f}")
                parts.append(f"| {title} | " + " | ".join(cells) + " |")
            parts.append("")
    if fmt == "csv":
        return buf.getvalue()
    return "\n".join(parts)


def parse_table_csv(text: str) -> Dict[Tuple[str, str, str, str], Dict[str, Tuple[float, bool]]]:
    """Read back :func:`render_table` csv output: value and starred flag per wavelet."""
    reader = csv.DictReader(io.StringIO(text))
    out = {}
    for row in reader:
        key = (row.pop("image"), row.pop("channel"), row.pop("unit"), row.pop("complexity"))
        out[key] = {w: (float(v.rstrip("*")), v.endswith("*")) for w, v in row.items() if v}
    return out


def _safe(s: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in s)


def curve_csv(by_w: Dict[str, dict], wavelets: Sequence[str], J: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", *wavelets])
    for t in range(J):
        row = [t + 1]
        for w in wavelets:
            c = by_w.get(w)
            row.append(repr(c["summary"]["per_scale_curve"][t]) if c and c.get("summary") else "")
        writer.writerow(row)
    return buf.getvalue()


def curve_svg(by_w: Dict[str, dict], wavelets: Sequence[str], J: int, title: str = "") -> str:
    width, height, pad = 640, 400, 50
    plot_w, plot_h = width - 2 * pad - 110, height - 2 * pad
    curves = {w: by_w[w]["summary"]["per_scale_curve"] for w in wavelets
              if w in by_w and by_w[w].get("summary")}
    ymax = max([1.0] + [max(c) for c in curves.values()])

    def xy(t, v):
        x = pad + (t / max(J - 1, 1)) * plot_w
        y = pad + plot_h - (v / ymax) * plot_h
        return f"{x:.2f},{y:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<title>{escape(title)}</title>',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{pad + plot_h}" x2="{pad + plot_w}" y2="{pad + plot_h}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{pad + plot_h}" stroke="black"/>',
           f'<text x="{pad + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">internal time t</text>',
           f'<text x="14" y="{pad + plot_h / 2:.1f}" font-size="12" transform="rotate(-90 14 {pad + plot_h / 2:.1f})" '
           f'text-anchor="middle">local complexity (bits)</text>']
    for t in range(J):
        x = pad + (t / max(J - 1, 1)) * plot_w
        out.append(f'<text x="{x:.2f}" y="{pad + plot_h + 16}" text-anchor="middle" font-size="10">{t + 1}</text>')
    for i, w in enumerate(wavelets):
        colour = CURVE_COLOURS.get(w, "#888888")
        if w in curves:
            pts = " ".join(xy(t, v) for t, v in enumerate(curves[w]))
            out.append(f'<polyline data-wavelet="{escape(w)}" fill="none" stroke="{colour}" '
                       f'stroke-width="1.5" points="{pts}"/>')
        ly = pad + 14 * i
        lx = pad + plot_w + 20
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11">{escape(w)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_curves(report: AnalysisReport, out_dir: str, svg: bool = True, csv_out: bool = True) -> List[str]:
    """Per (image, channel, unit): a CSV of per-scale curves and an SVG chart."""
    os.makedirs(out_dir, exist_ok=True)
    J = report.data["config"]["levels"]
    wavelets = [w for w in MENU if w in report.data["config"]["wavelets"]]
    written = []
    for (iid, ch, unit), by_w in report.tables().items():
        if unit is None:
            continue
        stem = os.path.join(out_dir, _safe(f"{iid}_{ch}_{unit}"))
        if csv_out:
            with open(stem + ".csv", "w") as fh:
                fh.write(curve_csv(by_w, wavelets, J))
            written.append(stem + ".csv")
        if svg:
            with open(stem + ".svg", "w") as fh:
                fh.write(curve_svg(by_w, wavelets, J, f"{iid} {ch} {unit}"))
            written.append(stem + ".svg")
    return written
