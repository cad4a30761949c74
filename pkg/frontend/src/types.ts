/** Shared shapes mirrored from the supervisor API (docs/api.md). */

export type Severity = "OK" | "WARNING" | "ERROR" | "FATAL";
export type QualityFlag = "valid" | "invalid" | "stale";

export const SEVERITY_ORDER: Record<Severity, number> = {
  OK: 0, WARNING: 1, ERROR: 2, FATAL: 3,
};

export const SEVERITY_COLORS: Record<Severity, string> = {
  OK: "#2da44e", WARNING: "#d4a72c", ERROR: "#cf222e", FATAL: "#cf222e",
};

export interface LoginReply {
  token: string;
  user: string;
  role: "guest" | "shift" | "expert";
  detectors: string[];
  control_room: boolean;
}

export interface AlertRecord {
  record_id: number;
  path: string;
  severity: Severity;
  value_at_came: number | string | boolean | null;
  came_at: number;
  went_at: number | null;
  ack_required: boolean;
  acknowledged_at: number | null;
  acknowledged_by: string | null;
  active: boolean;
  requires_attention: boolean;
}

export interface TrendSample {
  t: number;
  v: number | null;
  q: QualityFlag;
}

export interface TrendSeries {
  path: string;
  unknown_path: boolean;
  samples: TrendSample[];
}

export interface ValueEntry {
  path: string;
  value?: number | string | boolean | null;
  ts?: number;
  quality?: QualityFlag;
  kind?: string;
  error?: string;
}

export interface SummaryEntry {
  severity: Severity;
  active: number;
}

export interface HealthReply {
  uptime_ms: number;
  leaves: number;
  ingest: Record<string, number>;
  archive_samples: number;
  alerts_active: number;
  sessions: number;
  monitors: { id: string; kind: string; alive: boolean }[];
  latency: Record<string, number>;
}

export interface StreamValueItem {
  path: string;
  value: number | string | boolean | null;
  ts: number;
  quality: QualityFlag;
}

export type StreamEvent =
  | { type: "hello"; summary: Record<string, SummaryEntry> }
  | { type: "values"; ts: number; items: StreamValueItem[] }
  | { type: "alert"; event: string; path: string; severity: Severity;
      record_id: number; ts: number; record: AlertRecord | null }
  | { type: "health"; monitor: string; alive: boolean; ts: number };
