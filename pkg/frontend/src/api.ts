import { EditBody, ScenePayload } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function request<T>(fetchImpl: FetchLike, url: string, init?: RequestInit): Promise<T> {
  const res = await fetchImpl(url, init);
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export interface Api {
  createSession(checkpoint: string, seed: number): Promise<ScenePayload>;
  getSession(id: string): Promise<ScenePayload>;
  editSegment(id: string, segment: number, body: EditBody): Promise<ScenePayload>;
  addSegments(id: string, seed: number, revision: number): Promise<ScenePayload>;
  deleteSegment(id: string, segment: number, revision: number): Promise<ScenePayload>;
  replay(id: string): Promise<ScenePayload>;
}

export function makeApi(baseUrl: string, fetchImpl?: FetchLike): Api {
  const f: FetchLike = fetchImpl ?? ((u, i) => fetch(u, i));
  const json = { "Content-Type": "application/json" };
  return {
    createSession: (checkpoint, seed) =>
      request(f, `${baseUrl}/sessions`, {
        method: "POST", headers: json,
        body: JSON.stringify({ checkpoint, seed }),
      }),
    getSession: (id) => request(f, `${baseUrl}/sessions/${id}`),
    editSegment: (id, segment, body) =>
      request(f, `${baseUrl}/sessions/${id}/segments/${segment}/edit`, {
        method: "POST", headers: json, body: JSON.stringify(body),
      }),
    addSegments: (id, seed, revision) =>
      request(f, `${baseUrl}/sessions/${id}/segments`, {
        method: "POST", headers: json, body: JSON.stringify({ seed, revision }),
      }),
    deleteSegment: (id, segment, revision) =>
      request(f, `${baseUrl}/sessions/${id}/segments/${segment}?revision=${revision}`, {
        method: "DELETE",
      }),
    replay: (id) =>
      request(f, `${baseUrl}/sessions/${id}/replay`, { method: "POST" }),
  };
}
