"""Local streaming service: processes frames (recorded .seq or live synthetic
drill), streams one STATE message per frame as line-delimited JSON over a
TCP socket, and accepts operator commands (steer, mark-needle,
finalize-registration, pause/resume).

One operator connection at a time; each new connection restarts the run.
STATE messages may be dropped under backpressure (the send queue keeps the 8
newest), but ALERT, REGISTRATION, and COMMAND_ACK messages never are; gaps in
the sequence counter reveal any drops.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synth
from .calib import CalibrationModel
from .config import PipelineConfig
from .frames import Frame, read_seq
from .matcher import GeometricModel, load_model
from .navigate import Session, Track, step
from .plangeo import SurgicalPlan, alignment_residual, finalize_registration
from .synth import ScenePose, ScenarioScript, TruthRow, render_marker
from .wire import WireError, WireMessage, WireType, navstate_payload, parse_command

SEND_QUEUE_CAP = 8


class _SendQueue:
    """Bounded outgoing queue: oldest droppable (STATE) entries are evicted
    first; protected messages always fit. Sequence numbers are assigned at
    enqueue time so the receiver can detect drops."""

    def __init__(self, cap: int = SEND_QUEUE_CAP):
        self._cap = cap
        self._items: list[tuple[WireMessage, bool]] = []
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._seq = 0
        self.closed = False

    def put(self, mtype: WireType, payload: dict, droppable: bool) -> int:
        with self._lock:
            self._seq += 1
            msg = WireMessage(type=mtype, seq=self._seq, payload=payload)
            if len(self._items) >= self._cap:
                for i, (_m, drop_ok) in enumerate(self._items):
                    if drop_ok:
                        del self._items[i]
                        break
            self._items.append((msg, droppable))
            self._ready.notify()
            return self._seq

    def get(self, timeout: float = 0.2) -> WireMessage | None:
        with self._lock:
            if not self._items:
                self._ready.wait(timeout)
            if not self._items:
                return None
            return self._items.pop(0)[0]

    def empty(self) -> bool:
        with self._lock:
            return not self._items

    def close(self) -> None:
        with self._lock:
            self.closed = True
            self._ready.notify_all()


@dataclass
class LiveSynthState:
    """The simulated drill the operator steers in live-synth mode."""

    script: ScenarioScript
    anchor_world: np.ndarray        # figure-centroid position, cm
    angle_deg: float
    frame_index: int = 0

    @classmethod
    def from_script(cls, script: ScenarioScript) -> "LiveSynthState":
        cx, cy, ang, _ = script.poses[0]
        anchor = synth.figure_centroid_px(script.marker, (cx, cy), ang, script.px_per_cm)
        return cls(script=script, anchor_world=anchor / script.px_per_cm, angle_deg=ang)

    def steer(self, dx_cm: float, dy_cm: float, dtheta_deg: float) -> None:
        self.anchor_world = self.anchor_world + (dx_cm, dy_cm)
        self.angle_deg = (self.angle_deg + dtheta_deg) % 360.0

    def render(self) -> tuple[Frame, TruthRow]:
        s = self.script.px_per_cm
        gamma = self.script.marker.contour_centroid() @ synth._rot2(self.angle_deg).T
        center_px = (self.anchor_world - gamma) * s
        pose = ScenePose(
            center=(float(center_px[0]), float(center_px[1])),
            angle=self.angle_deg,
            px_per_cm=s,
            noise_sigma=self.script.noise_sigma,
            clutter_seed=self.script.seed + self.frame_index,
        )
        frame = render_marker(self.script.marker, pose, (self.script.width, self.script.height))
        probe = ScenarioScript(
            name=self.script.name, width=self.script.width, height=self.script.height,
            px_per_cm=s, noise_sigma=self.script.noise_sigma, seed=self.script.seed,
            plan=self.script.plan, poses=[(pose.center[0], pose.center[1], self.angle_deg, True)],
            marker=self.script.marker,
        )
        row = synth.scenario_truth(probe)[0]
        row = TruthRow(
            frame=self.frame_index, cx_px=row.cx_px, cy_px=row.cy_px, angle_deg=row.angle_deg,
            tip_x_cm=row.tip_x_cm, tip_y_cm=row.tip_y_cm, depth_cm=row.depth_cm,
            radial_clearance_cm=row.radial_clearance_cm, inside=row.inside, visible=True,
        )
        self.frame_index += 1
        return frame, row


class NavService:
    """Socket front end around the navigation session."""

    def __init__(
        self,
        config: PipelineConfig,
        calib: CalibrationModel,
        model: GeometricModel,
        plan: SurgicalPlan,
        frames: list[Frame] | None = None,
        live_script: ScenarioScript | None = None,
        truth_log: str | Path | None = None,
        host: str = "127.0.0.1",
    ):
        if frames is None and live_script is None:
            raise ValueError("service needs recorded frames or a live-synth script")
        self.config = config
        self.calib = calib
        self.model = model
        self.plan = plan
        self.frames = frames
        self.live_script = live_script
        self.truth_log = Path(truth_log) if truth_log else None
        self._sock = socket.create_server((host, config.port))
        self._sock.settimeout(0.25)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.last_session: Session | None = None

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "NavService":
        self._thread = threading.Thread(target=self._accept_loop, name="pednav-accept", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        self._sock.close()

    def __enter__(self) -> "NavService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _addr = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                self._serve_connection(conn)
            finally:
                try:
                    conn.close()
                except OSError:
                    pass

    # -- one connection -----------------------------------------------------

    def _serve_connection(self, conn: socket.socket) -> None:
        conn.settimeout(0.25)
        queue = _SendQueue()
        done = threading.Event()
        paused = threading.Event()
        needles: list[tuple[float, float]] = []
        registration_box: dict = {"reg": None}
        if self.config.needles:
            residual = alignment_residual(self.config.needles, self.plan, self.calib)
            registration_box["reg"] = finalize_registration(
                residual, self.config.registration_tol_cm, needles=self.config.needles
            )
        live = LiveSynthState.from_script(self.live_script) if self.live_script else None
        lock = threading.Lock()

        sender = threading.Thread(
            target=self._sender_loop, args=(conn, queue, done), name="pednav-send", daemon=True
        )
        processor = threading.Thread(
            target=self._process_loop,
            args=(queue, done, paused, registration_box, live, lock),
            name="pednav-process",
            daemon=True,
        )
        sender.start()
        processor.start()

        buf = b""
        try:
            while not done.is_set() and not self._stop.is_set():
                try:
                    data = conn.recv(4096)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                buf += data
                while b"\n" in buf:
                    raw, buf = buf.split(b"\n", 1)
                    if raw.strip():
                        self._handle_command(
                            raw.decode("utf-8", "replace"), queue, paused, needles,
                            registration_box, live, lock,
                        )
        finally:
            done.set()
            queue.close()
            processor.join(timeout=5.0)
            sender.join(timeout=5.0)

    def _sender_loop(self, conn: socket.socket, queue: _SendQueue, done: threading.Event) -> None:
        while True:
            msg = queue.get(timeout=0.2)
            if msg is None:
                if done.is_set() and queue.empty():
                    return
                continue
            try:
                conn.sendall((msg.to_line() + "\n").encode("utf-8"))
            except OSError:
                done.set()
                return

    def _process_loop(
        self,
        queue: _SendQueue,
        done: threading.Event,
        paused: threading.Event,
        registration_box: dict,
        live: LiveSynthState | None,
        lock: threading.Lock,
    ) -> None:
        interval = 1.0 / self.config.frame_rate
        session: Session | None = None
        truth_fh = None
        if self.truth_log is not None and live is not None:
            truth_fh = open(self.truth_log, "w")
            truth_fh.write(synth.TRUTH_CSV_HEADER + "\n")
        frame_index = 0
        try:
            while not done.is_set() and not self._stop.is_set():
                start = time.perf_counter()
                if paused.is_set():
                    time.sleep(0.02)
                    continue
                with lock:
                    reg = registration_box["reg"]
                    if live is not None:
                        frame, truth = live.render()
                        if truth_fh is not None:
                            truth_fh.write(synth.truth_csv([truth]).splitlines()[1] + "\n")
                            truth_fh.flush()
                    else:
                        if frame_index >= len(self.frames):
                            done.set()
                            break
                        frame = self.frames[frame_index]
                frame_index += 1

                if reg is None or not reg.finalized:
                    payload = {
                        "frame_index": frame_index - 1,
                        "track": Track.UNREGISTERED.value,
                        "violation": False,
                        "depth_cm": None,
                        "radial_clearance_cm": None,
                        "search_ms": 0.0,
                        "match": None,
                        "drill_line": None,
                        "overlay": [],
                    }
                    queue.put(WireType.STATE, payload, droppable=True)
                else:
                    if session is None or session.registration is not reg:
                        session = Session(
                            calib=self.calib, model=self.model, plan=self.plan, registration=reg,
                            search=self.config.search_params(), edge=self.config.edge_params(),
                            nav=self.config.nav_params(),
                        )
                        self.last_session = session
                    was_violating = session.states[-1].violation if session.states else False
                    state = step(frame, session)
                    queue.put(WireType.STATE, navstate_payload(state), droppable=True)
                    if state.violation and not was_violating:
                        queue.put(
                            WireType.ALERT,
                            {"frame_index": state.frame_index, "kind": "VIOLATION",
                             "message": "drill outside corridor"},
                            droppable=False,
                        )

                remainder = interval - (time.perf_counter() - start)
                if remainder > 0:
                    time.sleep(remainder)
        finally:
            if truth_fh is not None:
                truth_fh.close()

    def _handle_command(
        self,
        raw: str,
        queue: _SendQueue,
        paused: threading.Event,
        needles: list[tuple[float, float]],
        registration_box: dict,
        live: LiveSynthState | None,
        lock: threading.Lock,
    ) -> None:
        try:
            cmd = parse_command(raw)
            name = cmd["command"]
            if name == "steer":
                if live is None:
                    raise WireError("steer requires live-synth mode")
                dx = float(cmd.get("dx", 0.0))
                dy = float(cmd.get("dy", 0.0))
                dth = float(cmd.get("dtheta", 0.0))
                with lock:
                    live.steer(dx, dy, dth)
                queue.put(
                    WireType.COMMAND_ACK,
                    {"command": "steer", "applied": {"dx": dx, "dy": dy, "dtheta": dth}},
                    droppable=False,
                )
            elif name == "mark_needle":
                u, v = float(cmd["u"]), float(cmd["v"])
                with lock:
                    needles.append((u, v))
                    count = len(needles)
                queue.put(
                    WireType.COMMAND_ACK,
                    {"command": "mark_needle", "applied": {"u": u, "v": v, "count": count}},
                    droppable=False,
                )
            elif name == "finalize_registration":
                with lock:
                    if len(needles) < 3:
                        raise WireError(f"need 3 marked needles, have {len(needles)}")
                    pts = tuple(needles[-3:])
                    residual = alignment_residual(pts, self.plan, self.calib)
                    reg = finalize_registration(residual, self.config.registration_tol_cm, needles=pts)
                    registration_box["reg"] = reg
                queue.put(WireType.COMMAND_ACK, {"command": "finalize_registration", "applied": {}},
                          droppable=False)
                queue.put(
                    WireType.REGISTRATION,
                    {"residual_cm": residual, "finalized": reg.finalized,
                     "tolerance_cm": self.config.registration_tol_cm,
                     "needles": [list(p) for p in pts]},
                    droppable=False,
                )
            elif name == "pause":
                paused.set()
                queue.put(WireType.COMMAND_ACK, {"command": "pause", "applied": {}}, droppable=False)
            elif name == "resume":
                paused.clear()
                queue.put(WireType.COMMAND_ACK, {"command": "resume", "applied": {}}, droppable=False)
            else:
                raise WireError(f"unknown command {name!r}")
        except (WireError, KeyError, TypeError, ValueError) as exc:
            queue.put(
                WireType.COMMAND_ACK,
                {"command": None, "error": str(exc)},
                droppable=False,
            )


def build_service(
    config: PipelineConfig,
    truth_log: str | Path | None = None,
) -> NavService:
    """Assemble a service from a pipeline config (paths already validated)."""
    for name in ("calibration", "model", "plan"):
        if getattr(config, name) is None:
            raise ValueError(f"config is missing '{name}'")
    calib = CalibrationModel.load(config.calibration)
    model = load_model(config.model)
    plan = SurgicalPlan.load(config.plan)
    frames = None
    live_script = None
    if config.live_synth:
        if config.scenario:
            live_script = synth.parse_script(Path(config.scenario).read_text())
        else:
            live_script = synth.make_straight_script(n_frames=1)
    elif config.sequence:
        frames = read_seq(config.sequence)
    else:
        raise ValueError("config needs a sequence or live_synth mode")
    return NavService(config, calib, model, plan, frames=frames, live_script=live_script,
                      truth_log=truth_log)
