export interface SegmentInfo {
  index: number;
  class: number;
  class_probs?: number[];
  mean_depth: number;
  centroid?: [number, number];
  bbox: [number, number, number, number]; // [y0, x0, y1, x1]
  birth_step: number;
}

export interface ScenePayload {
  session_id: string;
  revision: number;
  segments: SegmentInfo[];
  image: string; // base64 PPM
  layout_png_like: string;
  depth_png_like: string;
  edit_log?: unknown[];
}

export type Which = "structure" | "style";
export type EditMode = "interpolate" | "resample";

export interface EditBody {
  which: Which;
  mode: EditMode;
  t: number;
  seed: number;
  revision: number;
}

export const CLASS_NAMES = ["background", "circle", "square", "triangle"];
