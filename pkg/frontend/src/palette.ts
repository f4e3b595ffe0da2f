// Diverging heatmap palette, the only pixel math the client performs.
// It must reproduce the server's raster exactly: t = min(|v| / bound, 1),
// fade = rint(255 * (1 - t)) with round-half-to-even, then
// v >= 0 -> (255, fade, fade) and v < 0 -> (fade, fade, 255).

export interface Raster {
  width: number;
  height: number;
  pixels: Uint8ClampedArray<ArrayBuffer>; // RGBA rows, top to bottom
}

// numpy's rint rounds halves to the nearest even integer; Math.round does
// not, and the difference shows up at real fade values like 229.5.
export function rintHalfToEven(x: number): number {
  const floor = Math.floor(x);
  const frac = x - floor;
  if (frac > 0.5) return floor + 1;
  if (frac < 0.5) return floor;
  return floor % 2 === 0 ? floor : floor + 1;
}

export function heatColor(value: number, bound: number): [number, number, number] {
  if (!(bound > 0)) throw new Error(`color bound must be > 0, got ${bound}`);
  const t = Math.min(Math.abs(value) / bound, 1.0);
  const fade = rintHalfToEven(255.0 * (1.0 - t));
  return value >= 0 ? [255, fade, fade] : [fade, fade, 255];
}

export function renderHeatmap(values: ArrayLike<number>, height: number, width: number, bound: number): Raster {
  if (values.length !== height * width) {
    throw new Error(`heatmap: ${values.length} values for ${height}x${width}`);
  }
  const pixels = new Uint8ClampedArray(height * width * 4);
  for (let i = 0; i < height * width; i++) {
    const [r, g, b] = heatColor(values[i], bound);
    pixels[i * 4] = r;
    pixels[i * 4 + 1] = g;
    pixels[i * 4 + 2] = b;
    pixels[i * 4 + 3] = 255;
  }
  return { width, height, pixels };
}

export function renderGrayscale(values: ArrayLike<number>, height: number, width: number): Raster {
  const pixels = new Uint8ClampedArray(height * width * 4);
  for (let i = 0; i < height * width; i++) {
    const v = Math.min(Math.max(values[i], 0), 1);
    const g = rintHalfToEven(v * 255.0);
    pixels[i * 4] = g;
    pixels[i * 4 + 1] = g;
    pixels[i * 4 + 2] = g;
    pixels[i * 4 + 3] = 255;
  }
  return { width, height, pixels };
}

// Nearest-neighbor upscale so a 28x28 map is visible on screen.
export function scaleRaster(raster: Raster, k: number): Raster {
  if (k <= 1) return raster;
  const { width, height, pixels } = raster;
  const out = new Uint8ClampedArray(width * k * height * k * 4);
  for (let y = 0; y < height * k; y++) {
    const sy = Math.floor(y / k);
    for (let x = 0; x < width * k; x++) {
      const sx = Math.floor(x / k);
      const src = (sy * width + sx) * 4;
      const dst = (y * width * k + x) * 4;
      out[dst] = pixels[src];
      out[dst + 1] = pixels[src + 1];
      out[dst + 2] = pixels[src + 2];
      out[dst + 3] = pixels[src + 3];
    }
  }
  return { width: width * k, height: height * k, pixels: out };
}

// Scores are displayed to four decimals everywhere in the UI.
export function formatScore(value: number): string {
  return value.toFixed(4);
}
