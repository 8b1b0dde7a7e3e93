"""Command line interface: calibrate, build-model, track, bench, simulate, serve.

Exit codes: 0 clean run, 2 a tracked run contained violation frames,
3 registration could not be finalized, 1 configuration or input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import synth
from .calib import (
    CalibrationError,
    CalibrationModel,
    CameraPlacement,
    DisplacementSample,
    GridSpec,
    estimate_focal,
    fit_planar_map,
)
from .config import ConfigError, load_config, override, _parse_needles
from .frames import FrameFormatError, read_pgm, read_seq
from .matcher import MatchError, build_model, load_model, save_model
from .navigate import Session, Track, step, track_report
from .plangeo import PlanError, SurgicalPlan, register
from .service import build_service

REFERENCE_SEARCH_BUDGET_MS = 11.5  # reference-rig per-frame search figure


class CliError(SystemExit):
    def __init__(self, message: str, code: int = 1):
        print(f"pednav: {message}", file=sys.stderr)
        super().__init__(code)


def _read_sample_csv(path: Path) -> list[DisplacementSample]:
    """Displacement samples: x1,y1,x2,y2 in cm then u1,v1,u2,v2 in px, one
    per line; a header line is allowed."""
    samples = []
    for i, raw in enumerate(path.read_text().splitlines()):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.replace(";", ",").split(",")
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            if i == 0:
                continue  # header
            raise CliError(f"{path}:{i + 1}: not a numeric sample row")
        if len(vals) != 8:
            raise CliError(f"{path}:{i + 1}: expected 8 values, got {len(vals)}")
        samples.append(
            DisplacementSample(
                world_a=(vals[0], vals[1]), world_b=(vals[2], vals[3]),
                pixel_a=(vals[4], vals[5]), pixel_b=(vals[6], vals[7]),
            )
        )
    if not samples:
        raise CliError(f"{path}: no displacement samples found")
    return samples


def cmd_calibrate(args) -> int:
    placement = CameraPlacement(v=args.v, h=args.h)
    if args.samples is None and args.grid is None:
        raise CliError("calibrate needs --samples and/or --grid")
    pmap = None
    f_est = None
    if args.grid is not None:
        if args.grid_nx is None or args.grid_ny is None or args.grid_pitch_cm is None:
            raise CliError("--grid needs --grid-nx, --grid-ny and --grid-pitch-cm")
        spec = GridSpec(nx=args.grid_nx, ny=args.grid_ny, pitch_cm=args.grid_pitch_cm)
        try:
            grid_img = read_pgm(args.grid)
        except (FileNotFoundError, FrameFormatError) as exc:
            raise CliError(str(exc))
        pmap = fit_planar_map(grid_img, spec, radial=args.radial)
        print(f"grid fit: {pmap.n_dots} dots, rms residual {pmap.rms_px:.4f} px")
    if args.samples is not None:
        try:
            samples = _read_sample_csv(Path(args.samples))
        except FileNotFoundError as exc:
            raise CliError(str(exc))
        f_est = estimate_focal(samples, placement)
        print(f"samples: {len(samples)}  ratio spread {f_est.ratio_spread:.3f} px/cm")
        for i, (r, fi) in enumerate(zip(f_est.ratios, f_est.per_sample_f)):
            print(f"  sample {i}: Pd/Rd = {r:.3f}  ->  f = {fi:.1f}")

    if pmap is not None and f_est is None:
        calib = CalibrationModel.from_grid_map(pmap, placement)
    elif pmap is not None:
        calib = CalibrationModel(placement=placement, f=f_est.f, map=pmap)
    else:
        calib = CalibrationModel.from_samples(f_est.ratios.tolist(), placement)

    print(f"D = {placement.d:.2f} cm   theta = {placement.theta_deg:.2f} deg")
    print(f"f = {calib.f:.2f}   px/cm at axial distance = {calib.px_per_cm:.4f}")
    calib.save(args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_build_model(args) -> int:
    try:
        marker = read_pgm(args.marker)
    except (FileNotFoundError, FrameFormatError) as exc:
        raise CliError(str(exc))
    model = build_model(marker)
    save_model(model, args.output)
    print(
        f"model: {len(model.positions)} edgels in {len(model.chains)} chains, "
        f"active length {model.total_active_length:.1f} px, {len(model.levels)} pyramid levels"
    )
    print(f"wrote {args.output}")
    return 0


def _load_tracking_inputs(args):
    cfg = load_config(args.config)
    cfg = override(
        cfg,
        calibration=args.calib,
        model=args.model,
        plan=args.plan,
        sequence=args.seq,
        needles=_parse_needles(args.needles) if args.needles else None,
    )
    for name in ("calibration", "model", "plan", "sequence"):
        if getattr(cfg, name) is None:
            raise CliError(f"missing {name} (flag or config)")
    calib = CalibrationModel.load(cfg.calibration)
    model = load_model(cfg.model)
    plan = SurgicalPlan.load(cfg.plan)
    frames = read_seq(cfg.sequence)
    return cfg, calib, model, plan, frames


def _registered_session(cfg, calib, model, plan) -> Session:
    if cfg.needles is None:
        raise CliError("no needle points: registration cannot run (supply --needles)", code=3)
    reg = register(cfg.needles, plan, calib, cfg.registration_tol_cm)
    if not reg.finalized:
        raise CliError(
            f"registration residual {reg.residual:.3f} cm exceeds tolerance "
            f"{cfg.registration_tol_cm:.3f} cm",
            code=3,
        )
    return Session(
        calib=calib, model=model, plan=plan, registration=reg,
        search=cfg.search_params(), edge=cfg.edge_params(), nav=cfg.nav_params(),
    )


def cmd_track(args) -> int:
    cfg, calib, model, plan, frames = _load_tracking_inputs(args)
    session = _registered_session(cfg, calib, model, plan)
    for frame in frames:
        step(frame, session)
    report = track_report(session, include_timing=not args.no_timing)
    if args.output:
        Path(args.output).write_text(report)
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(report)
    n_violation = sum(1 for s in session.states if s.violation)
    n_lost = sum(1 for s in session.states if s.track is Track.LOST)
    print(f"{len(session.states)} frames, {n_violation} violation frames, {n_lost} lost frames")
    return 2 if n_violation else 0


def cmd_bench(args) -> int:
    cfg, calib, model, plan, frames = _load_tracking_inputs(args)
    if not frames:
        raise CliError("empty input sequence")
    session = _registered_session(cfg, calib, model, plan)
    for frame in frames:
        step(frame, session)
    seeded = np.array([s.search_ms for s in session.states[1:]])  # frame 0 searches full-frame

    # Full-frame mode: a fresh session per frame never has a seed.
    full = []
    for frame in frames[:: max(1, len(frames) // 32)]:
        one = _registered_session(cfg, calib, model, plan)
        step(frame, one)
        full.append(one.states[0].search_ms)
    full = np.array(full)

    def line(name, arr):
        print(
            f"{name}: P50 {np.percentile(arr, 50):.1f} ms  "
            f"P95 {np.percentile(arr, 95):.1f} ms  max {arr.max():.1f} ms  (n={len(arr)})"
        )

    line("seeded search", seeded)
    line("full-frame search", full)
    print(
        f"reference rig per-frame search budget: {REFERENCE_SEARCH_BUDGET_MS} ms "
        f"(seeded P50 here: {np.percentile(seeded, 50):.1f} ms)"
    )
    return 0


def cmd_simulate(args) -> int:
    if args.script:
        script = synth.parse_script(Path(args.script).read_text())
    elif args.preset == "straight":
        script = synth.make_straight_script(n_frames=args.frames, noise_sigma=args.noise)
    elif args.preset == "veering":
        script = synth.make_veering_script(n_frames=args.frames, noise_sigma=args.noise)
    else:
        raise CliError("simulate needs --script or --preset straight|veering")
    scenario = synth.render_scenario(script)
    seq_path, truth_path = synth.write_scenario(scenario, args.output_dir)
    out = Path(args.output_dir)
    (out / f"{script.name}.scenario").write_text(synth.format_script(script))
    plan_path = out / f"{script.name}.plan"
    script.plan.save(plan_path)
    print(f"wrote {seq_path} ({len(scenario.frames)} frames), {truth_path}, {plan_path}")
    return 0


def cmd_serve(args) -> int:
    cfg = load_config(args.config)
    cfg = override(
        cfg,
        calibration=args.calib,
        model=args.model,
        plan=args.plan,
        sequence=args.seq,
        scenario=args.scenario,
        port=args.port,
        live_synth=True if args.live_synth else None,
        needles=_parse_needles(args.needles) if args.needles else None,
        frame_rate=args.frame_rate,
    )
    try:
        service = build_service(cfg, truth_log=args.truth_log)
    except (ValueError, OSError) as exc:
        raise CliError(str(exc))
    print(f"serving on 127.0.0.1:{service.port} "
          f"({'live-synth' if cfg.live_synth else cfg.sequence})", flush=True)
    try:
        with service:
            while True:
                import time

                time.sleep(0.5)
    except KeyboardInterrupt:
        print("stopped")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="pednav", description=__doc__)
    parser.add_argument("--config", default=None, help="pipeline config file (or $PEDNAV_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit a calibration from samples and/or a dot grid")
    p.add_argument("--samples", help="displacement sample CSV (x1,y1,x2,y2,u1,v1,u2,v2)")
    p.add_argument("--grid", help="dot grid image (PGM)")
    p.add_argument("--grid-nx", type=int)
    p.add_argument("--grid-ny", type=int)
    p.add_argument("--grid-pitch-cm", type=float)
    p.add_argument("--radial", action="store_true", help="also fit one radial coefficient")
    p.add_argument("--v", type=float, required=True, help="vertical camera offset, cm")
    p.add_argument("--h", type=float, required=True, help="horizontal camera offset, cm")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("build-model", help="build a search model from a marker image")
    p.add_argument("--marker", required=True, help="marker image (PGM)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_build_model)

    for name, help_text in (("track", "batch navigation over a .seq file"),
                            ("bench", "timing summary over a .seq file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seq", help=".seq input")
        p.add_argument("--calib", help="calibration file")
        p.add_argument("--model", help="model file")
        p.add_argument("--plan", help="plan file")
        p.add_argument("--needles", help="three needle points: u,v;u,v;u,v")
        if name == "track":
            p.add_argument("-o", "--output", help="report CSV path (stdout if omitted)")
            p.add_argument("--no-timing", action="store_true",
                           help="zero the search_ms column for byte-comparable reports")
            p.set_defaults(func=cmd_track)
        else:
            p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="render a scripted scenario to .seq + truth CSV")
    p.add_argument("--script", help="scenario script file")
    p.add_argument("--preset", choices=("straight", "veering"))
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("-o", "--output-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the streaming service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--seq")
    p.add_argument("--calib")
    p.add_argument("--model")
    p.add_argument("--plan")
    p.add_argument("--needles")
    p.add_argument("--live-synth", action="store_true")
    p.add_argument("--scenario", help="scenario script for live-synth mode")
    p.add_argument("--truth-log", help="CSV of live-synth ground truth")
    p.add_argument("--frame-rate", type=float, default=None)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError:
        raise
    except (ConfigError, CalibrationError, MatchError, PlanError, FrameFormatError,
            FileNotFoundError) as exc:
        raise CliError(str(exc))


if __name__ == "__main__":
    sys.exit(main())
