// Dashboard wiring: one WebSocket to the hub bridge, a render loop, and
// the marker-injection form. Read-only except for inject messages.

import { composeInject, decodeBridgeMessage } from "./messages.js";
import { DashboardModel } from "./model.js";
import { drawSeries } from "./charts.js";

const RECONNECT_DELAY_MS = 1500;

function bridgeUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("bridge") ?? `ws://${window.location.hostname}:16572/`;
}

class App {
  model = new DashboardModel();
  socket: WebSocket | null = null;
  canvases = new Map<number, HTMLCanvasElement>();
  renderedMarkers = 0;

  constructor(private root: Document) {}

  start(): void {
    this.connect();
    const tick = () => {
      this.render();
      requestAnimationFrame(tick);
    };
    requestAnimationFrame(tick);

    const form = this.root.getElementById("inject-form") as HTMLFormElement;
    const input = this.root.getElementById("inject-label") as HTMLInputElement;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      this.inject(input.value);
      input.value = "";
    });
  }

  connect(): void {
    const ws = new WebSocket(bridgeUrl());
    this.socket = ws;
    ws.onopen = () => this.model.setConnected(true);
    ws.onmessage = (ev) => {
      const msg = decodeBridgeMessage(String(ev.data));
      if (msg) this.model.apply(msg);
    };
    ws.onclose = () => {
      this.model.setConnected(false);
      this.socket = null;
      setTimeout(() => this.connect(), RECONNECT_DELAY_MS);
    };
    ws.onerror = () => ws.close();
  }

  inject(label: string): void {
    const result = composeInject(label, this.model.connected
      && this.socket !== null && this.socket.readyState === WebSocket.OPEN);
    if (!result.ok) {
      this.model.lastError = result.reason;
      return;
    }
    this.socket!.send(JSON.stringify(result.message));
  }

  render(): void {
    const status = this.root.getElementById("status")!;
    status.textContent = this.model.connected ? "connected" : "disconnected";
    status.className = this.model.connected ? "ok" : "bad";

    const zone = this.root.getElementById("zone")!;
    zone.textContent = this.model.zone ?? "–";
    zone.className = `zone ${(this.model.zone ?? "none").toLowerCase()}`;

    const errorBox = this.root.getElementById("error")!;
    errorBox.textContent = this.model.lastError ?? "";

    this.renderStreams();
    this.renderMarkers();
  }

  renderStreams(): void {
    const empty = this.root.getElementById("empty-state")!;
    empty.style.display = this.model.streams.size ? "none" : "block";
    const container = this.root.getElementById("streams")!;
    for (const [id, meta] of this.model.streams) {
      let canvas = this.canvases.get(id);
      if (!canvas) {
        const panel = this.root.createElement("div");
        panel.className = "panel";
        const title = this.root.createElement("div");
        title.className = "panel-title";
        title.id = `title-${id}`;
        canvas = this.root.createElement("canvas");
        canvas.width = 560;
        canvas.height = 120;
        panel.appendChild(title);
        panel.appendChild(canvas);
        container.appendChild(panel);
        this.canvases.set(id, canvas);
      }
      const title = this.root.getElementById(`title-${id}`)!;
      const healthy = this.model.syncHealthy(id);
      const rtt = meta.rtt === null ? "?" : (meta.rtt * 1000).toFixed(1);
      const offset = meta.offset === null ? "?"
        : (meta.offset * 1000).toFixed(1);
      title.innerHTML =
        `<span class="sync ${healthy ? "ok" : "bad"}"></span>` +
        `${meta.name} @ ${meta.rate} Hz ` +
        `<span class="dim">rtt ${rtt} ms, offset ${offset} ms</span>`;
      drawSeries(canvas, this.model.visibleSeries(id));
    }
  }

  renderMarkers(): void {
    const list = this.root.getElementById("markers")!;
    while (this.renderedMarkers < this.model.markers.length) {
      const m = this.model.markers[this.renderedMarkers++];
      const row = this.root.createElement("li");
      row.className = `marker ${m.origin}`;
      row.textContent = `${m.t.toFixed(3)}  [${m.origin}] ${m.label}`;
      list.prepend(row);
    }
    while (list.childElementCount > 100) {
      list.lastElementChild?.remove();
    }
  }
}

new App(document).start();
