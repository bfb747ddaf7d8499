/**
 * Browser wiring: canvas, keyboard/mouse capture, floorplan panel, edit
 * buttons, and an interpolation slider. All scene access goes through the
 * HTTP API; the client renders nothing itself.
 */

import { SceneClient } from "./client.js";
import { FrameSink, ViewerController } from "./controller.js";
import { ViewerState, cameraCell } from "./state.js";

const GRID_SIZE = 16; // desk preset; purely a floorplan-highlight hint
const EXTENT = 4.0;

function blit(canvas: HTMLCanvasElement, bytes: ArrayBuffer): void {
  const blob = new Blob([bytes], { type: "image/png" });
  const url = URL.createObjectURL(blob);
  const img = new Image();
  img.onload = () => {
    const ctx = canvas.getContext("2d")!;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    URL.revokeObjectURL(url);
  };
  img.src = url;
}

export function start(root: Document): void {
  const view = root.getElementById("view") as HTMLCanvasElement;
  const depthView = root.getElementById("depth") as HTMLCanvasElement;
  const planImg = root.getElementById("floorplan") as HTMLImageElement;
  const planCell = root.getElementById("plan-cell") as HTMLElement;
  const banner = root.getElementById("banner") as HTMLElement;

  const client = new SceneClient("", (url, init) => fetch(url, init));
  const sink: FrameSink = {
    showFrame(bytes, state: ViewerState) {
      banner.hidden = true;
      blit(state.depthOverlay ? depthView : view, bytes);
      const cell = cameraCell(state, GRID_SIZE, EXTENT);
      planCell.textContent = `cell (${cell.i}, ${cell.j})`;
      const px = 100 * (cell.j + 0.5) / GRID_SIZE;
      const py = 100 * (cell.i + 0.5) / GRID_SIZE;
      planCell.style.left = `calc(${px}% - 4px)`;
      planCell.style.top = `calc(${py}% - 4px)`;
    },
    showError(message) {
      banner.hidden = false;
      banner.textContent = `service error: ${message}`;
    },
  };
  const controller = new ViewerController(client, sink);

  root.addEventListener("keydown", (e: KeyboardEvent) => {
    const code = e.key.toLowerCase();
    if (code === "w" || code === "a" || code === "s" || code === "d") {
      controller.handle({ kind: "key", code });
    }
  });

  let dragging = false;
  view.addEventListener("mousedown", () => { dragging = true; });
  root.addEventListener("mouseup", () => { dragging = false; });
  root.addEventListener("mousemove", (e: MouseEvent) => {
    if (dragging) controller.handle({ kind: "look", dx: e.movementX,
                                      dy: e.movementY });
  });

  const refreshPlan = async () => {
    if (!controller.state.sceneId) return;
    const bytes = await client.floorplan(controller.state.sceneId);
    planImg.src = URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
  };

  (root.getElementById("new-scene") as HTMLButtonElement).onclick = async () => {
    await controller.newScene();
    await refreshPlan();
  };
  (root.getElementById("mirror") as HTMLButtonElement).onclick = async () => {
    await controller.mirror(1);
    await refreshPlan(); // floorplan refreshes only after an edit response
  };
  (root.getElementById("rotate") as HTMLButtonElement).onclick = async () => {
    await controller.rotate(1);
    await refreshPlan();
  };
  (root.getElementById("depth-toggle") as HTMLInputElement).onchange = () => {
    controller.handle({ kind: "toggleDepth" });
  };

  const slider = root.getElementById("interp") as HTMLInputElement;
  const otherField = root.getElementById("other-scene") as HTMLInputElement;
  slider.onchange = async () => {
    const other = otherField.value.trim();
    if (!controller.state.sceneId || !other) return;
    const id = await client.interpolate(controller.state.sceneId, other,
                                        Number(slider.value));
    controller.handle({ kind: "setScene", sceneId: id });
    await refreshPlan();
  };
}

if (typeof document !== "undefined") {
  start(document);
}
