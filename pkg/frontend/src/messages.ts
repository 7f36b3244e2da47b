// Bridge message schema. The hub sends streams/samples/marker/zone/error;
// the only message a client may send is an inject.

export interface StreamEntry {
  id: number;
  name: string;
  rate: number;
  offset: number | null;
  rtt: number | null;
}

export interface StreamsMessage {
  type: "streams";
  payload: StreamEntry[];
}

export interface SamplesMessage {
  type: "samples";
  id: number;
  t: number[];
  v: number[][];
}

export interface MarkerMessage {
  type: "marker";
  t: number;
  label: string;
  origin: string;
}

export interface ZoneMessage {
  type: "zone";
  value: string;
}

export interface ErrorMessage {
  type: "error";
  detail: string;
}

export type BridgeMessage =
  | StreamsMessage
  | SamplesMessage
  | MarkerMessage
  | ZoneMessage
  | ErrorMessage;

export interface InjectMessage {
  type: "inject";
  label: string;
}

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function isStreamEntry(x: unknown): x is StreamEntry {
  if (typeof x !== "object" || x === null) return false;
  const e = x as Record<string, unknown>;
  return (
    isFiniteNumber(e.id) &&
    typeof e.name === "string" &&
    isFiniteNumber(e.rate) &&
    (e.offset === null || isFiniteNumber(e.offset)) &&
    (e.rtt === null || isFiniteNumber(e.rtt))
  );
}

/** Parse one frame off the socket; null for anything malformed. */
export function decodeBridgeMessage(raw: string): BridgeMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const m = doc as Record<string, unknown>;
  switch (m.type) {
    case "streams":
      if (Array.isArray(m.payload) && m.payload.every(isStreamEntry)) {
        return { type: "streams", payload: m.payload as StreamEntry[] };
      }
      return null;
    case "samples":
      if (
        isFiniteNumber(m.id) &&
        Array.isArray(m.t) &&
        m.t.every(isFiniteNumber) &&
        Array.isArray(m.v) &&
        m.v.length === m.t.length &&
        m.v.every((row) => Array.isArray(row) && row.every(isFiniteNumber))
      ) {
        return {
          type: "samples",
          id: m.id,
          t: m.t as number[],
          v: m.v as number[][],
        };
      }
      return null;
    case "marker":
      if (isFiniteNumber(m.t) && typeof m.label === "string" && m.label) {
        return {
          type: "marker",
          t: m.t,
          label: m.label,
          origin: typeof m.origin === "string" ? m.origin : "auto",
        };
      }
      return null;
    case "zone":
      if (m.value === "Normal" || m.value === "Reduced" || m.value === "Stop") {
        return { type: "zone", value: m.value };
      }
      return null;
    case "error":
      return {
        type: "error",
        detail: typeof m.detail === "string" ? m.detail : "unknown error",
      };
    default:
      return null;
  }
}

export type InjectResult =
  | { ok: true; message: InjectMessage }
  | { ok: false; reason: string };

/** The one and only client->hub message. Rejected (never queued) when the
 * bridge is down or the label is empty. */
export function composeInject(label: string, connected: boolean): InjectResult {
  const trimmed = label.trim();
  if (!trimmed) {
    return { ok: false, reason: "marker label is empty" };
  }
  if (!connected) {
    return { ok: false, reason: "not connected to the hub" };
  }
  return { ok: true, message: { type: "inject", label: trimmed } };
}
