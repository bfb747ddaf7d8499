/**
 * Thin typed client for the render service. The fetch function is
 * injectable so tests can run against an in-memory mock.
 */

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<any>;
  arrayBuffer(): Promise<ArrayBuffer>;
}>;

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class SceneClient {
  constructor(private baseUrl: string, private fetchFn: FetchLike) {}

  private async post(path: string, body: unknown): Promise<any> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new ServiceError(res.status, `POST ${path} -> ${res.status}`);
    return res.json();
  }

  async createScene(seed?: number): Promise<string> {
    const body = seed === undefined ? {} : { seed };
    return (await this.post("/scenes", body)).scene_id;
  }

  async renderFrame(url: string): Promise<ArrayBuffer> {
    const res = await this.fetchFn(this.baseUrl + url);
    if (!res.ok) throw new ServiceError(res.status, `GET ${url} -> ${res.status}`);
    return res.arrayBuffer();
  }

  async edit(sceneId: string, op: "mirror" | "rotate",
             params: Record<string, number>): Promise<string> {
    return (await this.post(`/scenes/${sceneId}/edit`, { op, params })).scene_id;
  }

  async interpolate(a: string, b: string, t: number): Promise<string> {
    const res = await this.fetchFn(
      `${this.baseUrl}/scenes/${a}/interpolate/${b}?t=${t}`);
    if (!res.ok) throw new ServiceError(res.status, `interpolate -> ${res.status}`);
    return (await res.json()).scene_id;
  }

  async floorplan(sceneId: string): Promise<ArrayBuffer> {
    const res = await this.fetchFn(`${this.baseUrl}/scenes/${sceneId}/floorplan`);
    if (!res.ok) throw new ServiceError(res.status, `floorplan -> ${res.status}`);
    return res.arrayBuffer();
  }
}
