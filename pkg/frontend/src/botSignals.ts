// Client-side mirror of the server's bot-signal rules, applied to exported
// fingerprints so the dashboard can badge suspicious responses.

import type { Fingerprint } from "./types";

export interface BotThresholds {
  minTotalTimeMs: number;
  minEventsForDwell: number;
}

export const DEFAULT_THRESHOLDS: BotThresholds = {
  minTotalTimeMs: 2000,
  minEventsForDwell: 5,
};

export function detectBotSignals(
  fp: Fingerprint,
  thresholds: BotThresholds = DEFAULT_THRESHOLDS,
): Set<string> {
  const flags = new Set<string>();
  if (fp.mouse_sample_count === 0 && fp.mouse_path_px === 0) {
    flags.add("no_mouse_activity");
  }
  if (fp.total_time_ms < thresholds.minTotalTimeMs) {
    flags.add("instant_completion");
  }
  const countable =
    fp.clicks_count +
    fp.keypress_count +
    fp.resize_count +
    fp.mouse_sample_count +
    fp.focus_loss_count;
  if (countable >= thresholds.minEventsForDwell && fp.dwell_mean_ms === fp.dwell_max_ms) {
    flags.add("zero_dwell_variance");
  }
  return flags;
}
