/**
 * Session state and its pure reducers.
 *
 * Everything the canvas shows derives from this state plus the last
 * response in the history, so replaying a stored history reproduces the
 * exact same pixels. Reducers never mutate; they return new objects.
 */

import type { QueryResponse, UploadInfo } from "./api";

export type View = "combined" | "token";

export interface HistoryEntry {
  text: string;
  timestamp: number;
  response: QueryResponse;
}

export interface SessionState {
  image: UploadInfo | null;
  /** Append-only within an image session; replay source of truth. */
  history: HistoryEntry[];
  /** Index into the last response's tokens. */
  activeToken: number;
  /** Which map the overlay shows; queries land on "combined". */
  view: View;
  threshold: number;
  opacity: number;
}

export function initialState(): SessionState {
  return {
    image: null,
    history: [],
    activeToken: 0,
    view: "combined",
    threshold: 0.5,
    opacity: 0.6,
  };
}

function clamp01(x: number): number {
  return x < 0 ? 0 : x > 1 ? 1 : x;
}

/**
 * Switch to an uploaded image. A different image starts a fresh session
 * (empty history); re-uploading the same image keeps it, since upload
 * ids are content hashes and the responses still apply.
 */
export function withImage(state: SessionState, info: UploadInfo): SessionState {
  if (state.image && state.image.image_id === info.image_id) {
    return { ...state, image: info };
  }
  return { ...state, image: info, history: [], activeToken: 0, view: "combined" };
}

/**
 * Record a successful query. The first returned token becomes the
 * active selection, and the view resets to the combined map. Failures
 * never reach this reducer, so history is untouched on failure.
 */
export function appendQuery(
  state: SessionState,
  text: string,
  timestamp: number,
  response: QueryResponse,
): SessionState {
  return {
    ...state,
    history: [...state.history, { text, timestamp, response }],
    activeToken: 0,
    view: "combined",
  };
}

export function lastResponse(state: SessionState): QueryResponse | null {
  const n = state.history.length;
  return n > 0 ? state.history[n - 1].response : null;
}

/** Pick a token chip. Out-of-range indices are ignored with a console note. */
export function selectToken(state: SessionState, index: number): SessionState {
  const res = lastResponse(state);
  if (!res || index < 0 || index >= res.tokens.length || !Number.isInteger(index)) {
    console.info(`select_token(${index}) ignored: no token at that index`);
    return state;
  }
  return { ...state, activeToken: index, view: "token" };
}

export function selectCombined(state: SessionState): SessionState {
  return { ...state, view: "combined" };
}

export function setThreshold(state: SessionState, value: number): SessionState {
  return { ...state, threshold: clamp01(value) };
}

export function setOpacity(state: SessionState, value: number): SessionState {
  return { ...state, opacity: clamp01(value) };
}

/** The heatmap the overlay should composite right now, or null for raw image. */
export function displayedHeat(state: SessionState): number[] | null {
  const res = lastResponse(state);
  if (!res) return null;
  if (state.view === "combined") return res.combined;
  const tok = res.tokens[state.activeToken];
  return tok ? tok.heatmap : null;
}

export interface ChipModel {
  label: string;
  kind: View;
  /** Token index; combined chips have none. */
  index?: number;
  active: boolean;
  hasMap: boolean;
  tokenId: number | null;
}

/**
 * View model for the chip row: one combined chip plus exactly one chip
 * per returned token, in response order. Empty before the first query.
 */
export function chipModels(state: SessionState): ChipModel[] {
  const res = lastResponse(state);
  if (!res) return [];
  const chips: ChipModel[] = [
    {
      label: "combined",
      kind: "combined",
      active: state.view === "combined",
      hasMap: res.combined !== null,
      tokenId: null,
    },
  ];
  res.tokens.forEach((tok, i) => {
    chips.push({
      label: tok.text === " " ? "␣" : tok.text,
      kind: "token",
      index: i,
      active: state.view === "token" && state.activeToken === i,
      hasMap: tok.heatmap !== null,
      tokenId: tok.token_id,
    });
  });
  return chips;
}
