"""End-to-end guided insertion.

Renders the straight and veering insertion scenarios, runs the per-frame
navigation loop over each, compares against the exact ground truth, and
writes the per-frame report CSVs to demos/out/.
"""

from pathlib import Path

import numpy as np

from pednav import (
    CameraPlacement,
    CalibrationModel,
    MarkerSpec,
    ScenePose,
    Session,
    Track,
    build_model,
    make_straight_script,
    make_veering_script,
    register,
    render_marker,
    render_scenario,
    step,
    track_report,
)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

calib = CalibrationModel.from_samples([10.8], CameraPlacement(v=56.0, h=77.0))
marker = MarkerSpec()
model = build_model(render_marker(marker, ScenePose(center=(32.0, 32.0), angle=0.0, px_per_cm=10.8), (64, 64)))

for script in (make_straight_script(n_frames=120), make_veering_script(n_frames=120)):
    scenario = render_scenario(script)
    needles = [(x * 10.8, 150.0 + 7 * i) for i, x in enumerate(script.plan.line_x)]
    session = Session(calib=calib, model=model, plan=script.plan,
                      registration=register(needles, script.plan, calib))
    for frame in scenario.frames:
        step(frame, session)

    depths = np.array([s.depth for s in session.states])
    truth_depths = np.array([r.depth_cm for r in scenario.truth])
    times = np.array([s.search_ms for s in session.states])
    violations = [s.frame_index for s in session.states if s.violation]
    truth_exit = next((r.frame for r in scenario.truth if not r.inside and r.depth_cm > 0), None)

    print(f"scenario '{script.name}': {len(session.states)} frames")
    print(f"  track states: {dict((t.value, sum(1 for s in session.states if s.track is t)) for t in Track)}")
    print(f"  depth error vs truth: max {np.abs(depths - truth_depths).max():.3f} cm")
    print(f"  search time: P50 {np.percentile(times, 50):.1f} ms, P95 {np.percentile(times, 95):.1f} ms")
    print(f"  ground-truth corridor exit: frame {truth_exit}")
    print(f"  violation raised: {f'frame {violations[0]}' if violations else 'never'}")
    report_path = out_dir / f"{script.name}_report.csv"
    report_path.write_text(track_report(session))
    print(f"  wrote {report_path}\n")
