/** Wire types for the detection service API. Field names match the JSON payloads. */

export type EventKind =
  | "Stage1Alarm"
  | "Stage2Cleared"
  | "Stage2Alarm"
  | "DiskEncryptionSuspect"
  | "SuspendedAwaitingUser"
  | "UserApproved"
  | "UserDenied"
  | "RansomwareVerdict";

export type Mode =
  | "Monitoring"
  | "Stage1Suspect"
  | "HighComputeCleared"
  | "RepeatedEncryption"
  | "AwaitingAdjudication"
  | "TerminatedRansomware"
  | "ResumedDiskEncryption";

export interface DetectionEvent {
  window_index: number;
  kind: EventKind;
  payload: Record<string, unknown>;
}

/** One chart row: [window index, stage-1 error, stage-2 error or null]. */
export type ErrorRow = [number, number, number | null];

export interface ErrorsPayload {
  from: number;
  threshold_1: number;
  threshold_2: number;
  errors: ErrorRow[];
}

export interface CorrelationPayload {
  label: string;
  template_length: number;
  rho: number[];
}

export interface ReplayMeta {
  profile?: string;
  trace_id?: string;
  seed?: number;
  ticks?: number;
  speed_multiplier?: number;
  done?: boolean;
}

export interface LatencyPayload {
  windows_processed: number;
  mean_window_ms: number;
  budget_ms: number;
  within_budget: boolean;
  first_anomaly_window: number | null;
  detection_latency_ms: number | null;
}

export interface DetectorConfigView {
  window_len: number;
  stride: number;
  n_fft: number;
  drop_dc: boolean;
  sampling_interval_ms: number;
  persistence_k: number;
  threshold_1: number;
  threshold_2: number;
  rho_high: number;
  rho_low: number;
  m_consecutive: number;
}

export interface ServerState {
  mode: Mode;
  windows_seen: number;
  stage1_run: number;
  stage2_run: number;
  stage2_evaluations: number;
  first_anomaly_window: number | null;
  last_stage1_error: number | null;
  last_stage2_error: number | null;
  correlation_length: number;
  last_rho: number | null;
  event_count: number;
  error_count: number;
  replay: ReplayMeta | null;
  latency: LatencyPayload | null;
  config: DetectorConfigView;
}

export interface RecoveryPayload {
  recovered: string[];
  lost: string[];
  total_encrypted: number;
}

export interface ReplayRequest {
  profile?: string;
  trace_id?: string;
  seed?: number;
  ticks?: number;
  speed_multiplier?: number;
}
