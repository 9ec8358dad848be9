import { makeApi } from "./api.js";
import { Controller } from "./controller.js";
import { decodeScenePpm } from "./ppm.js";
import { EditorState } from "./state.js";
import { CLASS_NAMES, SegmentInfo } from "./types.js";

const SCALE = 8; // upscale the 32x32 renders for visibility

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function drawScene(state: EditorState, hover: number | null): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d")!;
  if (!state.scene) return;
  const key = state.view === "layout" ? state.scene.layout_png_like
    : state.view === "depth" ? state.scene.depth_png_like : state.scene.image;
  const img = decodeScenePpm(key);
  canvas.width = img.width * SCALE;
  canvas.height = img.height * SCALE;
  const off = new OffscreenCanvas(img.width, img.height);
  const octx = off.getContext("2d")!;
  octx.putImageData(new ImageData(new Uint8ClampedArray(img.pixels), img.width, img.height), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  const target = hover ?? state.selected;
  if (target !== null && state.scene.segments[target]) {
    const [y0, x0, y1, x1] = state.scene.segments[target].bbox;
    ctx.strokeStyle = "#ffcc00";
    ctx.lineWidth = 2;
    ctx.strokeRect(x0 * SCALE, y0 * SCALE, (x1 - x0 + 1) * SCALE, (y1 - y0 + 1) * SCALE);
  }
}

function segmentRow(seg: SegmentInfo, ctl: Controller,
                    setHover: (i: number | null) => void): HTMLElement {
  const row = document.createElement("div");
  row.className = "segment" + (ctl.state.selected === seg.index ? " selected" : "");
  row.addEventListener("mouseenter", () => setHover(seg.index));
  row.addEventListener("mouseleave", () => setHover(null));
  const label = document.createElement("span");
  label.textContent = `#${seg.index} ${CLASS_NAMES[seg.class] ?? seg.class} ` +
    `(step ${seg.birth_step}, depth ${seg.mean_depth.toFixed(2)})`;
  label.addEventListener("click", () => ctl.select(seg.index));
  row.appendChild(label);
  for (const which of ["structure", "style"] as const) {
    const wrap = document.createElement("label");
    wrap.textContent = which;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.05";
    slider.value = "0";
    slider.addEventListener("input", () =>
      ctl.setSlider(seg.index, which, parseFloat(slider.value)));
    slider.addEventListener("change", () => {
      void ctl.applySlider(seg.index, which, Date.now() % 100000);
    });
    wrap.appendChild(slider);
    row.appendChild(wrap);
  }
  const del = document.createElement("button");
  del.textContent = "remove";
  del.addEventListener("click", () => void ctl.deleteObject(seg.index));
  row.appendChild(del);
  return row;
}

function render(ctl: Controller, hover: number | null): void {
  const state = ctl.state;
  drawScene(state, hover);
  const list = el<HTMLDivElement>("segments");
  list.textContent = "";
  if (state.scene) {
    for (const seg of state.scene.segments) {
      list.appendChild(segmentRow(seg, ctl, (h) => render(ctl, h)));
    }
  }
  el<HTMLDivElement>("status").textContent = state.pending
    ? "rendering…"
    : state.scene
      ? `revision ${state.scene.revision}`
      : "no session";
  const banner = el<HTMLDivElement>("banner");
  banner.style.display = state.error ? "block" : "none";
  banner.textContent = state.error
    ? state.error + (state.conflict ? " — state refreshed; re-apply your edit" : "")
    : "";
  for (const button of document.querySelectorAll<HTMLButtonElement>("button, input")) {
    if (button.id !== "new-session" && button.id !== "seed") {
      button.disabled = state.pending;
    }
  }
}

function main(): void {
  const api = makeApi("");
  const params = new URLSearchParams(location.search);
  const ctl = new Controller(api, params.get("session"));
  ctl.onChange(() => {
    render(ctl, null);
    if (ctl.session) {
      const url = new URL(location.href);
      url.searchParams.set("session", ctl.session);
      history.replaceState(null, "", url.toString());
    }
  });
  el<HTMLButtonElement>("new-session").addEventListener("click", () => {
    const seed = parseInt(el<HTMLInputElement>("seed").value || "0", 10);
    void ctl.create("final.gf2c", seed);
  });
  el<HTMLButtonElement>("add-object").addEventListener("click", () =>
    void ctl.addObjects(Date.now() % 100000));
  for (const mode of ["image", "layout", "depth"] as const) {
    el<HTMLButtonElement>(`view-${mode}`).addEventListener("click", () => {
      ctl.setView(mode);
      render(ctl, null);
    });
  }
  el<HTMLButtonElement>("banner").addEventListener("click", () => void ctl.refetch());
  if (params.get("session")) {
    void ctl.attach(params.get("session")!);
  }
  render(ctl, null);
}

main();
