/**
 * In-memory stand-in for the render service, mimicking its wire format:
 * scene handles are immutable, edits mint new ids, identical render
 * requests return identical bytes.
 */

import { FetchLike } from "../src/client.js";

interface MockScene {
  id: string;
  codesSeed: number;
  flips: number;
  turns: number;
}

function textBytes(text: string): ArrayBuffer {
  return new TextEncoder().encode(text).buffer as ArrayBuffer;
}

export class MockService {
  scenes = new Map<string, MockScene>();
  renderCount = 0;
  maxConcurrent = 0;
  lastRenderUrl: string | null = null;
  delayMs = 0;
  failNext = false;
  private active = 0;
  private nextId = 0;

  private mint(seed: number, flips = 0, turns = 0): MockScene {
    const scene = { id: `scene-${this.nextId++}`, codesSeed: seed, flips, turns };
    this.scenes.set(scene.id, scene);
    return scene;
  }

  fetch: FetchLike = async (url, init) => {
    if (this.failNext) {
      this.failNext = false;
      return this.respond(503, { detail: "mock outage" });
    }
    const [path, query] = url.split("?");
    if (init?.method === "POST" && path === "/scenes") {
      const body = JSON.parse(init.body ?? "{}");
      const scene = this.mint(body.seed ?? 12345);
      return this.respond(200, { scene_id: scene.id });
    }
    const render = path.match(/^\/scenes\/([^/]+)\/render$/);
    if (render) {
      const scene = this.scenes.get(render[1]);
      if (!scene) return this.respond(404, { detail: "unknown scene" });
      this.active += 1;
      this.maxConcurrent = Math.max(this.maxConcurrent, this.active);
      this.renderCount += 1;
      this.lastRenderUrl = url;
      if (this.delayMs) {
        await new Promise(resolve => setTimeout(resolve, this.delayMs));
      }
      this.active -= 1;
      // deterministic fake PNG payload keyed by scene and full query
      const payload = `png:${scene.codesSeed}:${scene.flips}:${scene.turns}:${query}`;
      return this.respondBytes(textBytes(payload));
    }
    const edit = path.match(/^\/scenes\/([^/]+)\/edit$/);
    if (edit && init?.method === "POST") {
      const scene = this.scenes.get(edit[1]);
      if (!scene) return this.respond(404, { detail: "unknown scene" });
      const body = JSON.parse(init.body ?? "{}");
      if (body.op === "mirror") {
        const next = this.mint(scene.codesSeed, scene.flips + 1, scene.turns);
        return this.respond(200, { scene_id: next.id });
      }
      if (body.op === "rotate") {
        const next = this.mint(scene.codesSeed, scene.flips,
                               scene.turns + (body.params?.k ?? 1));
        return this.respond(200, { scene_id: next.id });
      }
      return this.respond(422, { detail: "unknown op" });
    }
    const plan = path.match(/^\/scenes\/([^/]+)\/floorplan$/);
    if (plan) {
      const scene = this.scenes.get(plan[1]);
      if (!scene) return this.respond(404, { detail: "unknown scene" });
      return this.respondBytes(textBytes(`plan:${scene.codesSeed}:${scene.flips}`));
    }
    const interp = path.match(/^\/scenes\/([^/]+)\/interpolate\/([^/]+)$/);
    if (interp) {
      const a = this.scenes.get(interp[1]);
      const b = this.scenes.get(interp[2]);
      if (!a || !b) return this.respond(404, { detail: "unknown scene" });
      const next = this.mint(a.codesSeed ^ b.codesSeed);
      return this.respond(200, { scene_id: next.id });
    }
    return this.respond(404, { detail: `no route for ${url}` });
  };

  private respond(status: number, body: unknown) {
    return {
      ok: status < 400,
      status,
      json: async () => body,
      arrayBuffer: async () => textBytes(JSON.stringify(body)),
    };
  }

  private respondBytes(bytes: ArrayBuffer) {
    return {
      ok: true,
      status: 200,
      json: async () => ({}),
      arrayBuffer: async () => bytes,
    };
  }
}
