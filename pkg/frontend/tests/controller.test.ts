import { describe, expect, it } from "vitest";

import { SceneClient } from "../src/client.js";
import { FrameSink, ViewerController } from "../src/controller.js";
import { ViewerState } from "../src/state.js";
import { MockService } from "./mock_service.js";

function makeController(service = new MockService()) {
  const frames: { state: ViewerState; bytes: ArrayBuffer }[] = [];
  const errors: string[] = [];
  const sink: FrameSink = {
    showFrame: (bytes, state) => frames.push({ bytes, state }),
    showError: message => errors.push(message),
  };
  const client = new SceneClient("", service.fetch);
  return { controller: new ViewerController(client, sink), frames, errors, service };
}

describe("viewer controller", () => {
  it("identical states produce identical frame bytes", async () => {
    const { controller, frames } = makeController();
    await controller.newScene(7);
    await controller.settle();
    controller.handle({ kind: "toggleDepth" });
    controller.handle({ kind: "toggleDepth" });
    await controller.settle();
    expect(frames.length).toBeGreaterThanOrEqual(2);
    const first = new Uint8Array(frames[0].bytes);
    const last = new Uint8Array(frames[frames.length - 1].bytes);
    expect(Array.from(last)).toEqual(Array.from(first));
  });

  it("keeps at most one request in flight under an input burst", async () => {
    const { controller, frames, service } = makeController();
    service.delayMs = 5;
    await controller.newScene(1);
    for (let i = 0; i < 25; i++) controller.handle({ kind: "key", code: "w" });
    expect(service.maxConcurrent).toBeLessThanOrEqual(1);
    await controller.settle();
    expect(service.maxConcurrent).toBe(1);
    // the final displayed frame corresponds to the final pose
    const finalUrl = service.lastRenderUrl!;
    expect(finalUrl).toContain(encodeURIComponentLike(controller.state));
  });

  it("drops stale responses (latest wins)", async () => {
    const { controller, frames, service } = makeController();
    service.delayMs = 5;
    await controller.newScene(2);
    controller.handle({ kind: "key", code: "w" });
    controller.handle({ kind: "key", code: "w" });
    controller.handle({ kind: "key", code: "a" });
    await controller.settle();
    const shown = frames[frames.length - 1].state;
    expect(shown.camera).toEqual(controller.state.camera);
    // some intermediate states were never rendered
    expect(service.renderCount).toBeLessThan(4 + 1);
  });

  it("shows an error banner and keeps state when the service fails", async () => {
    const { controller, errors, service } = makeController();
    await controller.newScene(3);
    await controller.settle();
    service.failNext = true;
    const before = controller.state.camera;
    controller.handle({ kind: "key", code: "d" });
    await controller.settle();
    expect(errors.length).toBe(1);
    expect(controller.state.camera).not.toEqual(before); // state advanced
  });

  it("replaying the event log reproduces the live state", async () => {
    const { controller } = makeController();
    await controller.newScene(4);
    const moves = ["w", "a", "s", "d", "w", "w"] as const;
    for (const code of moves) controller.handle({ kind: "key", code });
    controller.handle({ kind: "look", dx: 21, dy: -8 });
    await controller.settle();
    const replayed = controller.replayLog();
    expect(replayed.camera).toEqual(controller.state.camera);
    expect(replayed.sceneId).toEqual(controller.state.sceneId);
    expect(replayed.depthOverlay).toEqual(controller.state.depthOverlay);
  });
});

function encodeURIComponentLike(state: ViewerState): string {
  // the mock echoes the requested pose back; match on the x translation
  return state.camera.position[0].toString();
}
