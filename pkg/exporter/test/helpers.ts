import { mkdirSync } from 'node:fs';
import { join } from 'node:path';

import { RasterImage, writePpm } from '../src/ppm.js';
import { Rng } from '../src/rng.js';

/** A little scene: class-colored rectangle on a textured background. */
export function makeImage(width: number, height: number, key: string,
                          color: [number, number, number]): RasterImage {
  const rng = new Rng('image:' + key);
  const pixels = new Uint8Array(width * height * 3);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = rng.int(40, 120);
  }
  const w = Math.max(2, Math.floor(width / 3));
  const h = Math.max(2, Math.floor(height / 3));
  const x0 = rng.int(0, width - w);
  const y0 = rng.int(0, height - h);
  for (let y = y0; y < y0 + h; y++) {
    for (let x = x0; x < x0 + w; x++) {
      const p = (y * width + x) * 3;
      pixels[p] = color[0];
      pixels[p + 1] = color[1];
      pixels[p + 2] = color[2];
    }
  }
  return { width, height, pixels };
}

const PALETTE: [number, number, number][] = [
  [220, 40, 40],
  [40, 220, 40],
  [40, 40, 220],
  [220, 220, 40],
];

/** Lay out <root>/<class>/<image>.ppm and return the class names. */
export function makeTree(root: string, classes: number, perClass: number,
                         size = 32): string[] {
  const names: string[] = [];
  for (let c = 0; c < classes; c++) {
    const name = `class_${c}`;
    names.push(name);
    const dir = join(root, name);
    mkdirSync(dir, { recursive: true });
    for (let i = 0; i < perClass; i++) {
      writePpm(join(dir, `img_${i}.ppm`),
               makeImage(size, size, `${name}/${i}`, PALETTE[c % PALETTE.length]));
    }
  }
  return names;
}
