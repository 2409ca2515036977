import { afterEach, describe, expect, it, vi } from "vitest";

import type { QueryResponse, UploadInfo } from "../src/api";
import {
  appendQuery,
  chipModels,
  displayedHeat,
  initialState,
  lastResponse,
  selectCombined,
  selectToken,
  setOpacity,
  setThreshold,
  withImage,
} from "../src/state";

const IMAGE: UploadInfo = { image_id: "abc123", width: 64, height: 64, grid_h: 32, grid_w: 32 };

function makeResponse(texts: string[], withNull = false): QueryResponse {
  const tokens = texts.map((text, i) => ({
    text,
    token_id: withNull && i === texts.length - 1 ? null : i + 10,
    heatmap: withNull && i === texts.length - 1 ? null : [i, i + 1, i + 2, i + 3],
  }));
  const maps = tokens.filter((t) => t.heatmap !== null);
  return {
    checkpoint: "deadbeef00000000",
    grid_h: 2,
    grid_w: 2,
    tokens,
    combined: maps.length > 0 ? [9, 9, 9, 9] : null,
  };
}

function loaded() {
  return withImage(initialState(), IMAGE);
}

afterEach(() => {
  vi.restoreAllMocks();
});

describe("initialState", () => {
  it("starts with no image, empty history, and in-range sliders", () => {
    const s = initialState();
    expect(s.image).toBeNull();
    expect(s.history).toEqual([]);
    expect(s.threshold).toBeGreaterThanOrEqual(0);
    expect(s.threshold).toBeLessThanOrEqual(1);
    expect(s.opacity).toBeGreaterThanOrEqual(0);
    expect(s.opacity).toBeLessThanOrEqual(1);
  });
});

describe("withImage", () => {
  it("keeps history when the same image is re-uploaded", () => {
    let s = appendQuery(loaded(), "O", 1, makeResponse(["O"]));
    s = withImage(s, { ...IMAGE });
    expect(s.history).toHaveLength(1);
  });

  it("starts a fresh history for a different image but keeps slider prefs", () => {
    let s = setThreshold(appendQuery(loaded(), "O", 1, makeResponse(["O"])), 0.8);
    s = withImage(s, { ...IMAGE, image_id: "other456" });
    expect(s.history).toEqual([]);
    expect(s.threshold).toBe(0.8);
  });
});

describe("appendQuery", () => {
  it("grows history in order: two sequential queries give length 2", () => {
    let s = loaded();
    s = appendQuery(s, "first", 1, makeResponse(["f"]));
    s = appendQuery(s, "second", 2, makeResponse(["s"]));
    expect(s.history.map((h) => h.text)).toEqual(["first", "second"]);
  });

  it("selects the first token and shows the combined map by default", () => {
    let s = selectToken(appendQuery(loaded(), "ab", 1, makeResponse(["a", "b"])), 1);
    s = appendQuery(s, "cd", 2, makeResponse(["c", "d"]));
    expect(s.activeToken).toBe(0);
    expect(s.view).toBe("combined");
  });

  it("never mutates its input, so a failed request leaves history unchanged", () => {
    const before = appendQuery(loaded(), "O", 1, makeResponse(["O"]));
    const historyRef = before.history;
    appendQuery(before, "discarded", 2, makeResponse(["d"]));
    // the caller adopts the returned state only on success; on failure
    // it keeps `before`, whose history must be untouched
    expect(before.history).toBe(historyRef);
    expect(before.history).toHaveLength(1);
  });
});

describe("selectToken", () => {
  it("switches the view to that token's map and highlights its chip", () => {
    const s = selectToken(appendQuery(loaded(), "ab", 1, makeResponse(["a", "b"])), 1);
    expect(s.view).toBe("token");
    expect(s.activeToken).toBe(1);
    expect(displayedHeat(s)).toEqual([1, 2, 3, 4]);
    const active = chipModels(s).filter((c) => c.active);
    expect(active).toHaveLength(1);
    expect(active[0].index).toBe(1);
  });

  it("ignores an out-of-range index with a console note", () => {
    const note = vi.spyOn(console, "info").mockImplementation(() => {});
    const s = appendQuery(loaded(), "ab", 1, makeResponse(["a", "b"]));
    expect(selectToken(s, 2)).toBe(s);
    expect(selectToken(s, -1)).toBe(s);
    expect(selectToken(initialState(), 0)).toEqual(initialState());
    expect(note).toHaveBeenCalled();
  });

  it("is idempotent on re-select", () => {
    const s = selectToken(appendQuery(loaded(), "ab", 1, makeResponse(["a", "b"])), 1);
    expect(selectToken(s, 1)).toEqual(s);
  });
});

describe("selectCombined", () => {
  it("returns the overlay to the combined map", () => {
    let s = selectToken(appendQuery(loaded(), "ab", 1, makeResponse(["a", "b"])), 1);
    s = selectCombined(s);
    expect(s.view).toBe("combined");
    expect(displayedHeat(s)).toEqual([9, 9, 9, 9]);
  });
});

describe("slider setters", () => {
  it("clamp threshold and opacity into [0, 1]", () => {
    const s = loaded();
    expect(setThreshold(s, -0.2).threshold).toBe(0);
    expect(setThreshold(s, 1.7).threshold).toBe(1);
    expect(setThreshold(s, 0.35).threshold).toBe(0.35);
    expect(setOpacity(s, -9).opacity).toBe(0);
    expect(setOpacity(s, 2).opacity).toBe(1);
    expect(setOpacity(s, 0.9).opacity).toBe(0.9);
  });
});

describe("displayedHeat", () => {
  it("is null before any query (placeholder state)", () => {
    expect(displayedHeat(loaded())).toBeNull();
  });

  it("is null for a token the vocabulary could not map", () => {
    let s = appendQuery(loaded(), "a?", 1, makeResponse(["a", "?"], true));
    s = selectToken(s, 1);
    expect(displayedHeat(s)).toBeNull();
  });
});

describe("chipModels", () => {
  it("renders one chip per token plus the combined chip", () => {
    const res = makeResponse(["a", "b", "c"]);
    const chips = chipModels(appendQuery(loaded(), "abc", 1, res));
    expect(chips).toHaveLength(res.tokens.length + 1);
    expect(chips[0].kind).toBe("combined");
    expect(chips[0].active).toBe(true);
    expect(chips.slice(1).map((c) => c.index)).toEqual([0, 1, 2]);
  });

  it("marks unmapped tokens and shows the space label for the probe", () => {
    const res = makeResponse([" ", "?"], true);
    const chips = chipModels(appendQuery(loaded(), " ", 1, res));
    expect(chips[1].label).toBe("␣");
    expect(chips[2].hasMap).toBe(false);
  });

  it("is empty before the first response", () => {
    expect(chipModels(loaded())).toEqual([]);
  });
});

describe("lastResponse", () => {
  it("tracks the newest history entry", () => {
    let s = appendQuery(loaded(), "x", 1, makeResponse(["x"]));
    s = appendQuery(s, "y", 2, makeResponse(["y"]));
    expect(lastResponse(s)?.tokens[0].text).toBe("y");
  });
});
