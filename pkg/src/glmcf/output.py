"""Run artefacts: monitors CSV, report text, SVG polyline plots.  Every file
is written to a temporary name and renamed into place."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write_text
from .flow import Trajectory
from .monitors import MonitorSample

CSV_HEADER = MonitorSample.columns()


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def monitors_csv(samples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_HEADER)
    for s in samples:
        w.writerow([_fmt(v) for v in s.row()])
    return buf.getvalue()


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def svg_plot(x, y, title: str, xlabel: str, ylabel: str, width: int = 640, height: int = 400) -> str:
    """Static polyline plot with axes, ticks and labels; non-finite points are dropped."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    if len(x) == 0:
        x0 = x1 = y0 = y1 = 0.0
    else:
        x0, x1 = float(x.min()), float(x.max())
        y0, y1 = float(y.min()), float(y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5 * max(abs(y0), 1.0), y1 + 0.5 * max(abs(y1), 1.0)
    sx = lambda v: ml + (v - x0) / (x1 - x0) * pw
    sy = lambda v: mt + ph - (v - y0) / (y1 - y0) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15" '
           f'font-family="sans-serif">{_esc(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<line x1="{sx(xv):.2f}" y1="{mt + ph}" x2="{sx(xv):.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(xv):.2f}" y="{mt + ph + 18}" text-anchor="middle" font-size="11" '
                   f'font-family="sans-serif">{xv:.3g}</text>')
        out.append(f'<line x1="{ml - 5}" y1="{sy(yv):.2f}" x2="{ml}" y2="{sy(yv):.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{sy(yv) + 4:.2f}" text-anchor="end" font-size="11" '
                   f'font-family="sans-serif">{yv:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="13" '
               f'font-family="sans-serif">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="13" font-family="sans-serif" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>')
    if len(x):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _safe_log10(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(y > 0, np.log10(np.where(y > 0, y, 1.0)), np.nan)


def plots(traj: Trajectory) -> dict[str, str]:
    t = traj.times
    osc = traj.series("osc_theta")
    return {
        "osc_theta.svg": svg_plot(t, osc, "oscillation of theta", "t", "osc theta"),
        "log_osc_theta_dot.svg": svg_plot(t, _safe_log10(osc), "log10 oscillation of theta_dot", "t",
                                          "log10 osc theta_dot"),
        "rho.svg": svg_plot(t, traj.series("rho_max"), "sup rho", "t", "rho"),
        "q.svg": svg_plot(t, traj.series("q_max"), "sup Q", "t", "Q"),
    }


def headline_numbers(traj: Trajectory, fitted_c2: float) -> tuple[float, float, float]:
    """(final osc theta, fitted C2, sup_t rho / rho(0)); the ratio is nan when rho(0) = 0."""
    rho = traj.series("rho_max")
    ratio = float(np.max(rho) / rho[0]) if rho[0] > 0 else math.nan
    return traj.samples[-1].osc_theta, fitted_c2, ratio


def report_text(report, cfg) -> str:
    traj = report.primary
    lines = [f"scenario: {report.scenario}", f"termination: {traj.termination}"]
    if traj.message:
        lines.append(f"note: {traj.message}")
    osc, c2, ratio = headline_numbers(traj, report.headline.get("C2", math.nan))
    lines += [f"final osc theta: {osc!r}",
              f"fitted C2: {c2!r}",
              f"sup_t rho / rho(0): {ratio!r}",
              f"checks passed: {'yes' if report.ok else 'no'}", ""]
    lines.append(f"grid: n={cfg.grid.n} N={cfg.grid.N}; metric: {cfg.metric.family}")
    lines.append(f"samples: {len(traj.samples)}; steps: {traj.steps}; dt: {traj.dt!r}")
    if traj.checkpoint_path:
        lines.append(f"final state: {traj.checkpoint_path}")
    for k, v in report.headline.items():
        lines.append(f"{k}: {v!r}" if isinstance(v, float) else f"{k}: {v}")
    lines += [""] + list(report.lines)
    if cfg.monitors.full:
        lines.append("upsilon_max uses nested fourth covariant derivatives (accuracy O(h^2) at worst).")
    return "\n".join(lines) + "\n"


def emit_outputs(report, cfg, out_dir: str | Path) -> list[Path]:
    traj = report.primary
    if traj is None or not traj.samples:
        raise ValueError("no samples")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    written = []

    def put(name: str, text: str):
        p = out / name
        atomic_write_text(p, text)
        written.append(p)

    put("monitors.csv", monitors_csv(traj.samples))
    for label, tr in list(report.trajectories.items())[1:]:
        if tr.samples:
            put(f"monitors_{label}.csv", monitors_csv(tr.samples))
    for name, (header, rows) in report.tables.items():
        put(f"{name}.csv", table_csv(header, rows))
    put("report.txt", report_text(report, cfg))
    for name, svg in plots(traj).items():
        put(f"plots/{name}", svg)
    return written
