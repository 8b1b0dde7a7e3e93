// TCP line-JSON client with reconnect. The session's last-rendered state is
// owned by the caller and survives reconnects; this class only moves lines.

import net from "node:net";
import { parseMessage, type Command, type WireMessage, encodeCommand } from "./protocol.js";

export interface ConnectionEvents {
  onMessage: (msg: WireMessage) => void;
  onStatus: (text: string) => void;
}

export class ServiceConnection {
  private host: string;
  private port: number;
  private events: ConnectionEvents;
  private socket: net.Socket | null = null;
  private buffer = "";
  private closed = false;
  private backoffMs = 500;

  constructor(host: string, port: number, events: ConnectionEvents) {
    this.host = host;
    this.port = port;
    this.events = events;
  }

  connect(): void {
    if (this.closed) {
      return;
    }
    const socket = net.createConnection({ host: this.host, port: this.port });
    this.socket = socket;
    socket.setEncoding("utf-8");
    socket.on("connect", () => {
      this.backoffMs = 500;
      this.events.onStatus("connected");
    });
    socket.on("data", (chunk: string) => {
      this.buffer += chunk;
      let idx: number;
      while ((idx = this.buffer.indexOf("\n")) >= 0) {
        const line = this.buffer.slice(0, idx);
        this.buffer = this.buffer.slice(idx + 1);
        if (line.trim()) {
          try {
            this.events.onMessage(parseMessage(line));
          } catch (err) {
            this.events.onStatus(`bad message: ${err}`);
          }
        }
      }
    });
    const retry = () => {
      if (this.closed) {
        return;
      }
      this.events.onStatus(`reconnecting in ${this.backoffMs} ms`);
      setTimeout(() => this.connect(), this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, 8000);
    };
    socket.on("error", () => undefined); // 'close' always follows
    socket.on("close", retry);
  }

  sendCommand(cmd: Command): void {
    if (this.socket && !this.socket.destroyed) {
      this.socket.write(encodeCommand(cmd));
    }
  }

  close(): void {
    this.closed = true;
    this.socket?.destroy();
  }
}
