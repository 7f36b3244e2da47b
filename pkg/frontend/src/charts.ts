// Canvas strip charts for the rolling stream buffers.

import { SeriesPoint } from "./model.js";

const TRACE_COLORS = ["#4fc3f7", "#aed581", "#ffb74d", "#f06292",
                      "#ba68c8", "#90a4ae"];

export function drawSeries(canvas: HTMLCanvasElement,
                           points: SeriesPoint[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.fillStyle = "#10161d";
  ctx.fillRect(0, 0, width, height);
  if (points.length < 2) return;

  const t0 = points[0].t;
  const t1 = points[points.length - 1].t;
  const span = Math.max(t1 - t0, 1e-9);
  const channels = points[0].v.length;

  let lo = Infinity;
  let hi = -Infinity;
  for (const p of points) {
    for (const v of p.v) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  if (!(hi > lo)) {
    lo -= 1;
    hi += 1;
  }
  const pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;

  for (let ch = 0; ch < channels; ch++) {
    ctx.beginPath();
    ctx.strokeStyle = TRACE_COLORS[ch % TRACE_COLORS.length];
    ctx.lineWidth = 1;
    for (let i = 0; i < points.length; i++) {
      const x = ((points[i].t - t0) / span) * width;
      const y = height - ((points[i].v[ch] - lo) / (hi - lo)) * height;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}
