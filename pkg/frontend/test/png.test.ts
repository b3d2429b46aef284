// The pixel picker relies on bit-exact decoding: every byte must equal the
// value Pillow stored.
import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { decodePng } from "../src/png.js";

function fixture(name: string): Uint8Array {
  return new Uint8Array(readFileSync(new URL(`./fixtures/${name}`, import.meta.url)));
}

describe("png decoder", () => {
  it("decodes the known-value image bit-exactly", async () => {
    const want = JSON.parse(
      readFileSync(new URL("./fixtures/known.json", import.meta.url), "utf8"));
    const img = await decodePng(fixture("known.png"));
    expect(img.width).toBe(want.width);
    expect(img.height).toBe(want.height);
    for (let y = 0; y < img.height; y++) {
      for (let x = 0; x < img.width; x++) {
        const o = (y * img.width + x) * 4;
        expect([img.rgba[o], img.rgba[o + 1], img.rgba[o + 2]])
          .toEqual(want.pixels[y][x]);
        expect(img.rgba[o + 3]).toBe(255);
      }
    }
  });

  it("decodes a noisy image with mixed filters bit-exactly", async () => {
    const want = JSON.parse(
      readFileSync(new URL("./fixtures/noisy.json", import.meta.url), "utf8"));
    const img = await decodePng(fixture("noisy.png"));
    for (let y = 0; y < img.height; y++) {
      for (let x = 0; x < img.width; x++) {
        const o = (y * img.width + x) * 4;
        expect([img.rgba[o], img.rgba[o + 1], img.rgba[o + 2]])
          .toEqual(want[y][x]);
      }
    }
  });

  it("rejects non-PNG data", async () => {
    await expect(decodePng(new Uint8Array([1, 2, 3]))).rejects.toThrow("not a PNG");
  });
});
