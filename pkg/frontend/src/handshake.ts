// External-HIT query parameter handshake.

export const PREVIEW_SENTINEL = "ASSIGNMENT_ID_NOT_AVAILABLE";

export type RunnerMode = "preview" | "live" | "standalone";

export interface Handshake {
  mode: RunnerMode;
  assignmentId: string;
  hitId: string;
  workerId: string;
  turkSubmitTo: string;
}

export function parseHandshake(pageUrl: string): Handshake {
  const url = new URL(pageUrl, "http://localhost");
  const params = url.searchParams;
  const assignmentId = params.get("assignmentId") ?? "";
  let mode: RunnerMode;
  if (assignmentId === PREVIEW_SENTINEL) {
    mode = "preview";
  } else if (assignmentId === "") {
    mode = "standalone";
  } else {
    mode = "live";
  }
  return {
    mode,
    assignmentId,
    hitId: params.get("hitId") ?? "",
    workerId: params.get("workerId") ?? "",
    turkSubmitTo: params.get("turkSubmitTo") ?? "",
  };
}
