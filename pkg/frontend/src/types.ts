// Wire-format types shared by the runner and the dashboard.

export interface StepDef {
  step_id: string;
  kind: "multiple_choice" | "multiple_answer" | "text_response" | "custom";
  prompt: string;
  options: string[];
  required: boolean;
  plugin_kind?: string;
  template?: string;
  script?: string;
}

export interface AuditorRef {
  kind: string;
  script: string;
}

export interface TaskBundle {
  task_id: string;
  name: string;
  description: string;
  steps: StepDef[];
  auditors: AuditorRef[];
  session_token: string;
  preview: boolean;
}

export interface WireEvent {
  kind: string;
  t_ms: number;
  data: Record<string, unknown>;
}

export interface BatchAck {
  accepted: number;
  rejected: { index: number; reason: string }[];
}

export interface SubmitResult {
  response_pk: number;
  redirect: { url: string; fields: Record<string, string> };
}

export interface CaptureConfig {
  mouseSampleMinIntervalMs: number;
  flushIntervalMs: number;
  flushMaxEvents: number;
}

export const DEFAULT_CAPTURE_CONFIG: CaptureConfig = {
  mouseSampleMinIntervalMs: 50,
  flushIntervalMs: 2000,
  flushMaxEvents: 200,
};

export type AnswerValue = number | number[] | string | Record<string, unknown>;

export interface Answer {
  step_id: string;
  value: AnswerValue;
}

export interface TaskRow {
  task_id: string;
  name: string;
  status: string;
  response_count: number;
}

export interface Fingerprint {
  total_time_ms: number;
  clicks_count: number;
  keypress_count: number;
  resize_count: number;
  mouse_sample_count: number;
  mouse_path_px: number;
  mouse_net_displacement_px: number;
  focus_loss_count: number;
  unfocused_ms: number;
  dwell_mean_ms: number;
  dwell_median_ms: number;
  dwell_max_ms: number;
}

export const FINGERPRINT_FIELDS: (keyof Fingerprint)[] = [
  "total_time_ms",
  "clicks_count",
  "keypress_count",
  "resize_count",
  "mouse_sample_count",
  "mouse_path_px",
  "mouse_net_displacement_px",
  "focus_loss_count",
  "unfocused_ms",
  "dwell_mean_ms",
  "dwell_median_ms",
  "dwell_max_ms",
];

export interface ExportedResponse {
  pk: number;
  worker_id: string;
  assignment_id: string;
  hit_id: string;
  step_order_seed: number;
  submitted_at: string;
  fingerprint: Fingerprint;
  answers: { step_id: string; value: unknown }[];
}

export interface ParsedExport {
  task_id: string;
  name: string;
  responses: ExportedResponse[];
}
