// Boolean mask grid driven by a circular brush. The grid is sent to the
// region-ablation job as a uint8 wire array; the server treats nonzero
// cells as masked.

import { encodeArray, type WireArray } from "./api";

export class MaskGrid {
  readonly cells: Uint8Array;

  constructor(public readonly height: number, public readonly width: number) {
    if (height < 1 || width < 1) throw new Error("mask grid needs positive extents");
    this.cells = new Uint8Array(height * width);
  }

  at(row: number, col: number): boolean {
    return this.cells[row * this.width + col] !== 0;
  }

  private stamp(row: number, col: number, radius: number, value: 0 | 1): void {
    const r = Math.max(0, radius);
    const r2 = r * r;
    const lo = (v: number) => Math.max(0, Math.ceil(v - r));
    const hiRow = Math.min(this.height - 1, Math.floor(row + r));
    const hiCol = Math.min(this.width - 1, Math.floor(col + r));
    for (let i = lo(row); i <= hiRow; i++) {
      for (let j = lo(col); j <= hiCol; j++) {
        const di = i - row;
        const dj = j - col;
        if (di * di + dj * dj <= r2) this.cells[i * this.width + j] = value;
      }
    }
  }

  paint(row: number, col: number, radius = 1): void {
    this.stamp(row, col, radius, 1);
  }

  erase(row: number, col: number, radius = 1): void {
    this.stamp(row, col, radius, 0);
  }

  clear(): void {
    this.cells.fill(0);
  }

  count(): number {
    let n = 0;
    for (let i = 0; i < this.cells.length; i++) n += this.cells[i];
    return n;
  }

  toWire(): WireArray {
    return encodeArray(this.cells, [this.height, this.width], "uint8");
  }

  toJobMask(id: string): { id: string; mask: WireArray } {
    return { id, mask: this.toWire() };
  }

  // Tint masked cells on top of an RGBA raster rendered at cell scale k.
  overlayOnto(pixels: Uint8ClampedArray, k: number, rgba: [number, number, number, number]): void {
    const [r, g, b, a] = rgba;
    const alpha = a / 255;
    for (let y = 0; y < this.height * k; y++) {
      const row = Math.floor(y / k);
      for (let x = 0; x < this.width * k; x++) {
        if (!this.at(row, Math.floor(x / k))) continue;
        const p = (y * this.width * k + x) * 4;
        pixels[p] = Math.round(pixels[p] * (1 - alpha) + r * alpha);
        pixels[p + 1] = Math.round(pixels[p + 1] * (1 - alpha) + g * alpha);
        pixels[p + 2] = Math.round(pixels[p + 2] * (1 - alpha) + b * alpha);
      }
    }
  }
}
