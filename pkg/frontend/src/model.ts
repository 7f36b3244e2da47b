// View model: everything the panels render, kept free of DOM concerns so
// it can be tested headless.

import { BridgeMessage, StreamEntry } from "./messages.js";

export interface SeriesPoint {
  t: number;
  v: number[];
}

export interface MarkerRow {
  t: number;
  label: string;
  origin: string;
}

export const SYNC_HEALTHY_RTT = 0.05; // seconds; green badge below this
const ROLLING_WINDOW_S = 30;
const MAX_MARKER_ROWS = 200;

export class DashboardModel {
  connected = false;
  streams = new Map<number, StreamEntry>();
  series = new Map<number, SeriesPoint[]>();
  markers: MarkerRow[] = [];
  zone: string | null = null;
  lastError: string | null = null;

  apply(msg: BridgeMessage): void {
    switch (msg.type) {
      case "streams": {
        for (const entry of msg.payload) {
          this.streams.set(entry.id, entry);
          if (!this.series.has(entry.id)) this.series.set(entry.id, []);
        }
        break;
      }
      case "samples": {
        const buf = this.series.get(msg.id) ?? [];
        for (let i = 0; i < msg.t.length; i++) {
          buf.push({ t: msg.t[i], v: msg.v[i] });
        }
        const horizon = buf.length ? buf[buf.length - 1].t - ROLLING_WINDOW_S : 0;
        while (buf.length && buf[0].t < horizon) buf.shift();
        this.series.set(msg.id, buf);
        break;
      }
      case "marker": {
        this.markers.push({ t: msg.t, label: msg.label, origin: msg.origin });
        if (this.markers.length > MAX_MARKER_ROWS) {
          this.markers.splice(0, this.markers.length - MAX_MARKER_ROWS);
        }
        break;
      }
      case "zone":
        this.zone = msg.value;
        break;
      case "error":
        this.lastError = msg.detail;
        break;
    }
  }

  setConnected(connected: boolean): void {
    this.connected = connected;
    if (connected) this.lastError = null;
  }

  /** Sync badge is green only while the bridge is up and the source's
   * round trip stays under the health threshold. */
  syncHealthy(id: number): boolean {
    const meta = this.streams.get(id);
    if (!meta || !this.connected) return false;
    if (meta.rtt === null) return false;
    return meta.rtt < SYNC_HEALTHY_RTT;
  }

  /** Received point rate per channel over the trailing span: the hub
   * decimates to <= 30/s/channel, and this is what the tests count. */
  pointRate(id: number, spanSeconds: number): number {
    const buf = this.series.get(id);
    if (!buf || buf.length === 0 || spanSeconds <= 0) return 0;
    const end = buf[buf.length - 1].t;
    const start = end - spanSeconds;
    const n = buf.filter((p) => p.t > start).length;
    return n / spanSeconds;
  }

  visibleSeries(id: number): SeriesPoint[] {
    return this.series.get(id) ?? [];
  }
}
