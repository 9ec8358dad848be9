// Editor state machine.  The UI never mutates the scene locally: every
// change round-trips through the service, and a response only lands if its
// revision advances monotonically.  One in-flight request per session.

import { ScenePayload, Which } from "./types.js";

export type ViewMode = "image" | "layout" | "depth";

export interface EditorState {
  scene: ScenePayload | null;
  selected: number | null;
  sliders: Record<string, number>;
  pending: boolean;
  view: ViewMode;
  error: string | null;
  conflict: boolean; // 409 seen; prompt a refetch-and-replay
}

export const initialState: EditorState = {
  scene: null,
  selected: null,
  sliders: {},
  pending: false,
  view: "image",
  error: null,
  conflict: false,
};

export type Action =
  | { type: "request-start" }
  | { type: "scene-loaded"; scene: ScenePayload }
  | { type: "request-failed"; message: string; status?: number }
  | { type: "select"; index: number | null }
  | { type: "slider"; segment: number; which: Which; value: number }
  | { type: "view"; mode: ViewMode }
  | { type: "conflict-acknowledged" };

export function sliderKey(segment: number, which: Which): string {
  return `${segment}:${which}`;
}

export function reduce(state: EditorState, action: Action): EditorState {
  switch (action.type) {
    case "request-start":
      if (state.pending) throw new Error("one request in flight per session");
      return { ...state, pending: true, error: null };
    case "scene-loaded": {
      if (state.scene && action.scene.revision < state.scene.revision) {
        // stale response; keep the newer state
        return { ...state, pending: false };
      }
      const maxIndex = action.scene.segments.length - 1;
      const selected =
        state.selected !== null && state.selected <= maxIndex ? state.selected : null;
      return {
        ...state,
        scene: action.scene,
        selected,
        pending: false,
        error: null,
        conflict: false,
      };
    }
    case "request-failed":
      return {
        ...state,
        pending: false,
        error: action.message,
        conflict: action.status === 409,
      };
    case "select":
      return { ...state, selected: action.index };
    case "slider":
      return {
        ...state,
        sliders: { ...state.sliders, [sliderKey(action.segment, action.which)]: action.value },
      };
    case "view":
      return { ...state, view: action.mode };
    case "conflict-acknowledged":
      return { ...state, conflict: false };
  }
}

export function canEdit(state: EditorState): boolean {
  return state.scene !== null && !state.pending;
}

export function currentImage(state: EditorState): string | null {
  if (!state.scene) return null;
  // the depth/layout views are payload-cached: switching needs no request
  if (state.view === "layout") return state.scene.layout_png_like;
  if (state.view === "depth") return state.scene.depth_png_like;
  return state.scene.image;
}
