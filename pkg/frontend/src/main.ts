// Terminal operator console. Keyboard-first:
//   arrows          steer the simulated drill (dx/dy, coalesced per frame)
//   [ and ]         rotate the drill
//   m               mark a needle: type "u,v" and press enter
//   p / r           pause / resume the service
//   q or ctrl-c     quit

import readline from "node:readline";
import { ServiceConnection } from "./connection.js";
import { TerminalSurface } from "./renderer.js";
import { ConsoleSession } from "./session.js";

function argValue(name: string, fallback: string): string {
  const idx = process.argv.indexOf(`--${name}`);
  return idx >= 0 && process.argv[idx + 1] ? process.argv[idx + 1] : fallback;
}

const host = argValue("host", "127.0.0.1");
const port = parseInt(argValue("port", "7433"), 10);
const stepCm = parseFloat(argValue("sensitivity", "0.05"));

const surface = new TerminalSurface();
const connection = new ServiceConnection(host, port, {
  onMessage: (msg) => session.handleMessage(msg),
  onStatus: (text) => session.setConnectionState(text),
});
const session = new ConsoleSession((cmd) => connection.sendCommand(cmd), surface, { stepCm });

let markBuffer: string | null = null;

readline.emitKeypressEvents(process.stdin);
if (process.stdin.isTTY) {
  process.stdin.setRawMode(true);
}
process.stdin.on("keypress", (ch: string | undefined, key: { name?: string; ctrl?: boolean }) => {
  if ((key.ctrl && key.name === "c") || key.name === "q") {
    connection.close();
    process.exit(0);
  }
  if (markBuffer !== null) {
    if (key.name === "return") {
      const m = markBuffer.match(/^\s*([\d.]+)\s*,\s*([\d.]+)\s*$/);
      if (m) {
        session.markNeedle(parseFloat(m[1]), parseFloat(m[2]));
      }
      markBuffer = null;
    } else if (key.name === "backspace") {
      markBuffer = markBuffer.slice(0, -1);
    } else if (ch && /[\d.,]/.test(ch)) {
      markBuffer += ch;
    }
    return;
  }
  switch (key.name) {
    case "left":
    case "right":
    case "up":
    case "down":
      session.keyInput(key.name);
      break;
    case "m":
      markBuffer = "";
      break;
    case "p":
      connection.sendCommand({ command: "pause" });
      break;
    case "r":
      connection.sendCommand({ command: "resume" });
      break;
    default:
      if (ch === "[") {
        session.keyInput("rot-");
      } else if (ch === "]") {
        session.keyInput("rot+");
      }
  }
});

console.log(`connecting to ${host}:${port} (steering ${stepCm} cm per keypress)`);
connection.connect();
