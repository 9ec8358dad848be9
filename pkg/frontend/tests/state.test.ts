import { describe, expect, it } from "vitest";

import { canEdit, currentImage, initialState, reduce, sliderKey } from "../src/state.js";
import { ScenePayload } from "../src/types.js";

function scene(revision: number, image = "IMG"): ScenePayload {
  return {
    session_id: "s1", revision,
    segments: [{ index: 0, class: 1, mean_depth: 0.5, bbox: [0, 0, 3, 3], birth_step: 1 }],
    image, layout_png_like: "LAY", depth_png_like: "DEP",
  };
}

describe("reducer", () => {
  it("loads scenes and clears pending", () => {
    let s = reduce(initialState, { type: "request-start" });
    expect(s.pending).toBe(true);
    s = reduce(s, { type: "scene-loaded", scene: scene(0) });
    expect(s.pending).toBe(false);
    expect(s.scene?.revision).toBe(0);
  });

  it("enforces one in-flight request", () => {
    const s = reduce(initialState, { type: "request-start" });
    expect(() => reduce(s, { type: "request-start" })).toThrow();
  });

  it("ignores stale revisions (monotone)", () => {
    let s = reduce(initialState, { type: "scene-loaded", scene: scene(3, "NEW") });
    s = reduce(s, { type: "scene-loaded", scene: scene(1, "OLD") });
    expect(s.scene?.image).toBe("NEW");
  });

  it("records 409 conflicts for the replay prompt", () => {
    let s = reduce(initialState, { type: "request-start" });
    s = reduce(s, { type: "request-failed", message: "stale", status: 409 });
    expect(s.conflict).toBe(true);
    expect(s.error).toBe("stale");
    s = reduce(s, { type: "conflict-acknowledged" });
    expect(s.conflict).toBe(false);
  });

  it("drops selection when the segment disappears", () => {
    let s = reduce(initialState, { type: "scene-loaded", scene: scene(0) });
    s = reduce(s, { type: "select", index: 0 });
    const smaller: ScenePayload = { ...scene(1), segments: [] };
    s = reduce(s, { type: "scene-loaded", scene: smaller });
    expect(s.selected).toBeNull();
  });

  it("tracks sliders per (segment, which)", () => {
    let s = reduce(initialState, { type: "slider", segment: 2, which: "style", value: 0.7 });
    s = reduce(s, { type: "slider", segment: 2, which: "structure", value: 0.2 });
    expect(s.sliders[sliderKey(2, "style")]).toBe(0.7);
    expect(s.sliders[sliderKey(2, "structure")]).toBe(0.2);
  });
});

describe("views", () => {
  it("serves layout and depth from the cached payload", () => {
    let s = reduce(initialState, { type: "scene-loaded", scene: scene(0) });
    expect(currentImage(s)).toBe("IMG");
    s = reduce(s, { type: "view", mode: "depth" });
    expect(currentImage(s)).toBe("DEP");
    s = reduce(s, { type: "view", mode: "layout" });
    expect(currentImage(s)).toBe("LAY");
  });

  it("canEdit needs a scene and no pending request", () => {
    expect(canEdit(initialState)).toBe(false);
    let s = reduce(initialState, { type: "scene-loaded", scene: scene(0) });
    expect(canEdit(s)).toBe(true);
    s = reduce(s, { type: "request-start" });
    expect(canEdit(s)).toBe(false);
  });
});
