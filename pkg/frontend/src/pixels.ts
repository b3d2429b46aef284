// Pure pixel/geometry helpers behind the eyedropper, loupe and crop tool.
// Everything works in native image coordinates; zoom only affects the
// screen mapping, never what gets sent to the backend.

import type { DecodedImage } from "./png.js";

export interface RGB {
  r: number;
  g: number;
  b: number;
}

export function getPixel(img: DecodedImage, x: number, y: number): RGB {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) {
    throw new Error(`pixel (${x},${y}) outside ${img.width}x${img.height}`);
  }
  const o = (y * img.width + x) * 4;
  return { r: img.rgba[o], g: img.rgba[o + 1], b: img.rgba[o + 2] };
}

/** Screen (css px, relative to the canvas) -> native pixel under a zoom. */
export function screenToImage(
  sx: number, sy: number, zoom: number, img: DecodedImage,
): { x: number; y: number } | null {
  const x = Math.floor(sx / zoom);
  const y = Math.floor(sy / zoom);
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return null;
  return { x, y };
}

export interface Rect {
  x: number; // left, native px
  y: number; // top, native px
  w: number;
  h: number;
}

/** Normalize a drag from (ax,ay) to (bx,by) into a clamped native rect. */
export function dragToRect(
  ax: number, ay: number, bx: number, by: number, img: DecodedImage,
): Rect {
  let x0 = Math.max(0, Math.min(ax, bx));
  let y0 = Math.max(0, Math.min(ay, by));
  const x1 = Math.min(img.width, Math.max(ax, bx) + 1);
  const y1 = Math.min(img.height, Math.max(ay, by) + 1);
  return { x: x0, y: y0, w: Math.max(1, x1 - x0), h: Math.max(1, y1 - y0) };
}

/** Snap a rect to size x size, keeping it inside the image (the live
 *  guide while dragging a crop). */
export function snapRect(rect: Rect, size: number, img: DecodedImage): Rect {
  const w = Math.min(size, img.width);
  const h = Math.min(size, img.height);
  const cx = rect.x + rect.w / 2;
  const cy = rect.y + rect.h / 2;
  const x = Math.round(Math.min(Math.max(cx - w / 2, 0), img.width - w));
  const y = Math.round(Math.min(Math.max(cy - h / 2, 0), img.height - h));
  return { x, y, w, h };
}

/** Neighborhood around (x,y) for the loupe, clamped at the borders. */
export function loupeWindow(
  img: DecodedImage, x: number, y: number, radius: number,
): { origin: { x: number; y: number }; size: number } {
  const size = 2 * radius + 1;
  const ox = Math.min(Math.max(x - radius, 0), Math.max(img.width - size, 0));
  const oy = Math.min(Math.max(y - radius, 0), Math.max(img.height - size, 0));
  return { origin: { x: ox, y: oy }, size: Math.min(size, img.width, img.height) };
}

export function rgbHex({ r, g, b }: RGB): string {
  const h = (v: number) => v.toString(16).padStart(2, "0");
  return `#${h(r)}${h(g)}${h(b)}`;
}

/** Exact byte values -> the unit-interval floats the backend stores. */
export function rgbUnit({ r, g, b }: RGB): [number, number, number] {
  return [r / 255, g / 255, b / 255];
}

export function formatAsr(asr: number): string {
  return `${(asr * 100).toFixed(2)}%`;
}
