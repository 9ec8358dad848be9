// Glue between the state machine and the HTTP client: every mutation is a
// round trip, 409 responses trigger a refetch so the client converges on
// the server's revision.

import { Api, ApiError } from "./api.js";
import { Action, EditorState, canEdit, initialState, reduce, sliderKey } from "./state.js";
import { EditMode, Which } from "./types.js";

export class Controller {
  state: EditorState = initialState;
  private listeners: Array<(s: EditorState) => void> = [];

  constructor(private api: Api, private sessionId: string | null = null) {}

  get session(): string | null {
    return this.sessionId;
  }

  onChange(fn: (s: EditorState) => void): void {
    this.listeners.push(fn);
  }

  private dispatch(action: Action): void {
    this.state = reduce(this.state, action);
    for (const fn of this.listeners) fn(this.state);
  }

  private async run(op: () => Promise<void>): Promise<void> {
    this.dispatch({ type: "request-start" });
    try {
      await op();
    } catch (err) {
      const status = err instanceof ApiError ? err.status : undefined;
      const message = err instanceof Error ? err.message : String(err);
      this.dispatch({ type: "request-failed", message, status });
      if (status === 409 && this.sessionId) {
        // converge on the server's view, then let the user replay the edit
        await this.refetch();
      }
    }
  }

  async create(checkpoint: string, seed: number): Promise<void> {
    await this.run(async () => {
      const scene = await this.api.createSession(checkpoint, seed);
      this.sessionId = scene.session_id;
      this.dispatch({ type: "scene-loaded", scene });
    });
  }

  async attach(sessionId: string): Promise<void> {
    this.sessionId = sessionId;
    await this.refetch();
  }

  async refetch(): Promise<void> {
    if (!this.sessionId) return;
    const scene = await this.api.getSession(this.sessionId);
    this.dispatch({ type: "scene-loaded", scene });
    this.dispatch({ type: "conflict-acknowledged" });
  }

  select(index: number | null): void {
    this.dispatch({ type: "select", index });
  }

  setView(mode: "image" | "layout" | "depth"): void {
    this.dispatch({ type: "view", mode });
  }

  setSlider(segment: number, which: Which, value: number): void {
    this.dispatch({ type: "slider", segment, which, value });
  }

  async applyEdit(segment: number, which: Which, t: number,
                  mode: EditMode = "interpolate", seed = 0): Promise<void> {
    if (!canEdit(this.state) || !this.sessionId) return;
    const revision = this.state.scene!.revision;
    await this.run(async () => {
      const scene = await this.api.editSegment(this.sessionId!, segment, {
        which, mode, t, seed, revision,
      });
      this.dispatch({ type: "scene-loaded", scene });
    });
  }

  async applySlider(segment: number, which: Which, seed = 0): Promise<void> {
    const t = this.state.sliders[sliderKey(segment, which)] ?? 0;
    await this.applyEdit(segment, which, t, "interpolate", seed);
  }

  async addObjects(seed = 0): Promise<void> {
    if (!canEdit(this.state) || !this.sessionId) return;
    const revision = this.state.scene!.revision;
    await this.run(async () => {
      const scene = await this.api.addSegments(this.sessionId!, seed, revision);
      this.dispatch({ type: "scene-loaded", scene });
    });
  }

  async deleteObject(segment: number): Promise<void> {
    if (!canEdit(this.state) || !this.sessionId) return;
    const revision = this.state.scene!.revision;
    await this.run(async () => {
      const scene = await this.api.deleteSegment(this.sessionId!, segment, revision);
      this.dispatch({ type: "scene-loaded", scene });
    });
  }
}
