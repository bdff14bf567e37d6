// WebSocket link to the door unit. The kiosk is stateless across reloads:
// every (re)connect starts from whatever the gateway sends first, which is
// always showMainMenu.

import { KioskEvent } from "./events.js";

const RECONNECT_DELAY_MS = 1000;

export class KioskSocket {
  private socket: WebSocket | null = null;
  private closed = false;

  constructor(
    private url: string,
    private onEvent: (event: KioskEvent) => void,
    private onStatus: (connected: boolean) => void,
  ) {}

  connect(): void {
    if (this.closed) {
      return;
    }
    const socket = new WebSocket(this.url);
    this.socket = socket;
    socket.addEventListener("open", () => this.onStatus(true));
    socket.addEventListener("message", (message) => {
      try {
        this.onEvent(JSON.parse(message.data as string) as KioskEvent);
      } catch {
        // non-JSON frames are ignored; the gateway never sends them
      }
    });
    socket.addEventListener("close", () => {
      this.onStatus(false);
      this.socket = null;
      if (!this.closed) {
        setTimeout(() => this.connect(), RECONNECT_DELAY_MS);
      }
    });
  }

  send(event: KioskEvent): void {
    if (this.socket !== null && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(JSON.stringify(event));
    }
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
