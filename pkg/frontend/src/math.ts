/**
 * Camera math mirroring the render service's pose convention:
 * right-handed world, y up, camera looks along its own +z axis, poses are
 * 16-float row-major camera-to-world matrices.
 *
 * An upright camera at yaw 0 faces world -z; pitch tilts about the camera's
 * x axis with positive pitch looking up. The rotation is
 * R_y(yaw) * R_x(pi + pitch), whose pitch = 0 case matches the dataset's
 * upright-pose convention.
 */

export type Mat4 = number[]; // 16 entries, row-major

export interface Camera {
  position: [number, number, number];
  yaw: number; // radians
  pitch: number; // radians, clamped by the state layer
}

export function rotationYawPitch(yaw: number, pitch: number): number[] {
  // 3x3 row-major: R_y(yaw) @ R_x(pi + pitch)
  const a = Math.PI + pitch;
  const cy = Math.cos(yaw), sy = Math.sin(yaw);
  const cx = Math.cos(a), sx = Math.sin(a);
  // R_y = [[cy,0,sy],[0,1,0],[-sy,0,cy]], R_x = [[1,0,0],[0,cx,-sx],[0,sx,cx]]
  return [
    cy, sy * sx, sy * cx,
    0, cx, -sx,
    -sy, cy * sx, cy * cx,
  ];
}

export function cameraToMatrix(cam: Camera): Mat4 {
  const r = rotationYawPitch(cam.yaw, cam.pitch);
  const [x, y, z] = cam.position;
  return [
    r[0], r[1], r[2], x,
    r[3], r[4], r[5], y,
    r[6], r[7], r[8], z,
    0, 0, 0, 1,
  ];
}

/** Serialize exactly the way the service parses: comma-joined full floats. */
export function poseParam(cam: Camera): string {
  return cameraToMatrix(cam).map(v => stringifyFloat(v)).join(",");
}

/**
 * Full-precision float text: Number.prototype.toString round-trips IEEE754
 * doubles, and Python's float() parses the same grammar bit-exactly.
 */
export function stringifyFloat(v: number): string {
  if (Object.is(v, -0)) return "-0.0";
  return v.toString();
}

export function parsePoseParam(text: string): Mat4 {
  const parts = text.split(",").map(Number);
  if (parts.length !== 16 || parts.some(Number.isNaN)) {
    throw new Error(`pose needs 16 floats, got ${text}`);
  }
  return parts;
}

/** Ground-plane basis for WASD moves: forward and right in the zx-plane. */
export function groundBasis(yaw: number): {
  forward: [number, number, number];
  right: [number, number, number];
} {
  return {
    forward: [-Math.sin(yaw), 0, -Math.cos(yaw)],
    right: [Math.cos(yaw), 0, -Math.sin(yaw)],
  };
}
