// Seeded random crop geometry. Each crop rectangle is drawn from a generator
// keyed by (seed, image id, crop index), so repeated exports of the same tree
// with the same seed produce identical candidate sets.

import { RasterImage } from './ppm.js';
import { Rng } from './rng.js';

export interface CropRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

const MIN_ASPECT = 3 / 4;
const MAX_ASPECT = 4 / 3;

export function cropRects(img: RasterImage, count: number, seed: number,
                          imageId: string, scaleMin: number, scaleMax: number): CropRect[] {
  if (!(0 < scaleMin && scaleMin <= scaleMax && scaleMax <= 1)) {
    throw new Error(`bad crop scale range [${scaleMin}, ${scaleMax}]`);
  }
  const rects: CropRect[] = [];
  for (let i = 0; i < count; i++) {
    const rng = new Rng(`${seed}:${imageId}:crop${i}`);
    rects.push(sampleRect(img, rng, scaleMin, scaleMax));
  }
  return rects;
}

function sampleRect(img: RasterImage, rng: Rng, scaleMin: number, scaleMax: number): CropRect {
  const area = img.width * img.height;
  for (let attempt = 0; attempt < 10; attempt++) {
    const targetArea = area * rng.uniform(scaleMin, scaleMax);
    const aspect = rng.uniform(MIN_ASPECT, MAX_ASPECT);
    const w = Math.round(Math.sqrt(targetArea * aspect));
    const h = Math.round(Math.sqrt(targetArea / aspect));
    if (w >= 1 && h >= 1 && w <= img.width && h <= img.height) {
      return {
        x: rng.int(0, img.width - w),
        y: rng.int(0, img.height - h),
        w,
        h,
      };
    }
  }
  // aspect never fits (extreme image shapes): fall back to the full frame
  return { x: 0, y: 0, w: img.width, h: img.height };
}

export function cropImage(img: RasterImage, rect: CropRect): RasterImage {
  const pixels = new Uint8Array(rect.w * rect.h * 3);
  for (let y = 0; y < rect.h; y++) {
    const srcOff = ((rect.y + y) * img.width + rect.x) * 3;
    pixels.set(img.pixels.subarray(srcOff, srcOff + rect.w * 3), y * rect.w * 3);
  }
  return { width: rect.w, height: rect.h, pixels };
}
