"""Streaming service walkthrough.

Starts the navigation service in live-synth mode on an ephemeral port,
connects a tiny line-JSON client, registers through the command channel,
steers the simulated drill, and prints the wire traffic. This is the same
protocol the operator console speaks.
"""

import json
import socket

from pednav import CameraPlacement, CalibrationModel, MarkerSpec, ScenePose, build_model, render_marker
from pednav.config import PipelineConfig
from pednav.service import NavService
from pednav.synth import make_straight_script
from pednav.wire import parse_line

script = make_straight_script(n_frames=1)
calib = CalibrationModel.from_samples([script.px_per_cm], CameraPlacement(v=56.0, h=77.0))
model = build_model(
    render_marker(MarkerSpec(), ScenePose(center=(32.0, 32.0), angle=0.0, px_per_cm=script.px_per_cm), (64, 64))
)
config = PipelineConfig(port=0, frame_rate=30.0)

with NavService(config, calib, model, script.plan, live_script=script) as service:
    print(f"service on 127.0.0.1:{service.port}\n")
    sock = socket.create_connection(("127.0.0.1", service.port), timeout=10)
    fh = sock.makefile("r", encoding="utf-8")

    def send(obj):
        print(f">> {json.dumps(obj)}")
        sock.sendall((json.dumps(obj) + "\n").encode())

    def read_until(wanted, limit=200):
        for _ in range(limit):
            msg = parse_line(fh.readline())
            if msg.type.value in wanted:
                return msg

    msg = read_until({"STATE"})
    print(f"<< {msg.type.value} seq={msg.seq} track={msg.payload['track']}")

    for i, x in enumerate(script.plan.line_x):
        send({"command": "mark_needle", "u": x * script.px_per_cm, "v": 150.0 + 7 * i})
        read_until({"COMMAND_ACK"})
    send({"command": "finalize_registration"})
    reg = read_until({"REGISTRATION"})
    print(f"<< REGISTRATION residual={reg.payload['residual_cm']:.4f} cm finalized={reg.payload['finalized']}")

    state = read_until({"STATE"})
    while state.payload["track"] != "TRACKING":
        state = read_until({"STATE"})
    m = state.payload["match"]
    print(f"<< STATE frame={state.payload['frame_index']} tracked at ({m['cx']:.2f}, {m['cy']:.2f}) "
          f"depth={state.payload['depth_cm']:.2f} cm")

    send({"command": "steer", "dx": 0.4, "dy": -0.2, "dtheta": 5.0})
    ack = read_until({"COMMAND_ACK"})
    print(f"<< COMMAND_ACK applied={ack.payload['applied']}")
    for _ in range(3):
        state = read_until({"STATE"})
    m = state.payload["match"]
    print(f"<< STATE frame={state.payload['frame_index']} tracked at ({m['cx']:.2f}, {m['cy']:.2f}) "
          f"after the steer")
    sock.close()
print("\ndone")
