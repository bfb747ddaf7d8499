/**
 * Viewer state machine. Pure reducers over an input-event log, so a session
 * replayed from the same log lands in an identical state.
 */

import { Camera, poseParam } from "./math.js";

export interface ViewerState {
  sceneId: string | null;
  camera: Camera;
  fov: number; // degrees
  resolution: number;
  depthOverlay: boolean;
  pendingRequest: boolean;
}

export const PITCH_LIMIT = (89 * Math.PI) / 180;
export const MOVE_STEP = 0.25; // world units per key event
export const LOOK_RATE = 0.005; // radians per pixel of drag

export type InputEvent =
  | { kind: "key"; code: "w" | "a" | "s" | "d" }
  | { kind: "look"; dx: number; dy: number }
  | { kind: "toggleDepth" }
  | { kind: "setScene"; sceneId: string }
  | { kind: "setFov"; fov: number };

export function initialState(): ViewerState {
  return {
    sceneId: null,
    camera: { position: [0, 0, 0], yaw: 0, pitch: 0 },
    fov: 53,
    resolution: 64,
    depthOverlay: false,
    pendingRequest: false,
  };
}

function clampPitch(pitch: number): number {
  // open interval: stay strictly inside +-89 degrees
  const eps = 1e-9;
  return Math.min(PITCH_LIMIT - eps, Math.max(-PITCH_LIMIT + eps, pitch));
}

/** Apply one input event; unknown scenes aside, this is total and pure. */
export function poseFromInput(state: ViewerState, event: InputEvent): ViewerState {
  switch (event.kind) {
    case "key": {
      const { camera } = state;
      const yaw = camera.yaw;
      const f = [-Math.sin(yaw), 0, -Math.cos(yaw)];
      const r = [Math.cos(yaw), 0, -Math.sin(yaw)];
      const dir = { w: f, s: f.map(v => -v), d: r, a: r.map(v => -v) }[event.code];
      const position: [number, number, number] = [
        camera.position[0] + MOVE_STEP * dir[0],
        camera.position[1] + MOVE_STEP * dir[1],
        camera.position[2] + MOVE_STEP * dir[2],
      ];
      return { ...state, camera: { ...camera, position } };
    }
    case "look": {
      const yaw = state.camera.yaw - LOOK_RATE * event.dx;
      const pitch = clampPitch(state.camera.pitch - LOOK_RATE * event.dy);
      return { ...state, camera: { ...state.camera, yaw, pitch } };
    }
    case "toggleDepth":
      return { ...state, depthOverlay: !state.depthOverlay };
    case "setScene":
      return { ...state, sceneId: event.sceneId };
    case "setFov":
      return { ...state, fov: event.fov };
  }
}

export function replay(events: InputEvent[], from?: ViewerState): ViewerState {
  return events.reduce(poseFromInput, from ?? initialState());
}

/** The render-request URL for a state, in the service's wire format. */
export function renderUrl(state: ViewerState): string {
  if (!state.sceneId) throw new Error("no scene selected");
  const pose = poseParam(state.camera);
  const depth = state.depthOverlay ? "&depth=true" : "";
  return `/scenes/${state.sceneId}/render?pose=${pose}&fov=${state.fov}` +
    `&res=${state.resolution}${depth}`;
}

/** Grid cell under the camera, for the floorplan highlight. */
export function cameraCell(state: ViewerState, gridSize: number,
                           extent: number): { i: number; j: number } {
  const scale = gridSize > 1 ? (gridSize - 1) / (2 * extent) : 0;
  const u = (state.camera.position[2] + extent) * scale;
  const v = (state.camera.position[0] + extent) * scale;
  const clamp = (x: number) =>
    Math.max(0, Math.min(gridSize - 1, Math.round(x)));
  return { i: clamp(u), j: clamp(v) };
}
