// Small DOM helpers; canvases render decoded buffers 1:1 and zoom via CSS
// so the stored pixel values are never resampled.

import type { DecodedImage } from "./png.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else node.setAttribute(k, v);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function drawImage(canvas: HTMLCanvasElement, img: DecodedImage,
                          zoom = 1): void {
  canvas.width = img.width;
  canvas.height = img.height;
  canvas.style.width = `${img.width * zoom}px`;
  canvas.style.height = `${img.height * zoom}px`;
  canvas.style.imageRendering = "pixelated";
  const ctx = canvas.getContext("2d")!;
  const buf = new Uint8ClampedArray(img.rgba); // fresh ArrayBuffer for ImageData
  ctx.putImageData(new ImageData(buf, img.width, img.height), 0, 0);
}

export function imageCanvas(img: DecodedImage, zoom = 1,
                            cls = ""): HTMLCanvasElement {
  const canvas = el("canvas", { class: cls });
  drawImage(canvas, img, zoom);
  return canvas;
}

/** Magnified neighborhood with a center crosshair for the eyedropper. */
export function drawLoupe(canvas: HTMLCanvasElement, img: DecodedImage,
                          ox: number, oy: number, size: number,
                          scale: number, cx: number, cy: number): void {
  canvas.width = size * scale;
  canvas.height = size * scale;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const o = ((oy + y) * img.width + (ox + x)) * 4;
      ctx.fillStyle = `rgb(${img.rgba[o]},${img.rgba[o + 1]},${img.rgba[o + 2]})`;
      ctx.fillRect(x * scale, y * scale, scale, scale);
    }
  }
  ctx.strokeStyle = "#fff";
  ctx.strokeRect((cx - ox) * scale + 0.5, (cy - oy) * scale + 0.5,
                 scale - 1, scale - 1);
}
