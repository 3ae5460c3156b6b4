// Minimal binary PPM (P6, maxval 255) reader/writer. PPM keeps the offline
// path dependency-free; other formats are decoded by the clip backend's own
// image loader when that encoder is selected.

import { readFileSync, writeFileSync } from 'node:fs';

export interface RasterImage {
  width: number;
  height: number;
  /** RGB interleaved, length = width * height * 3. */
  pixels: Uint8Array;
}

export function readPpm(path: string): RasterImage {
  const data = readFileSync(path);
  let pos = 0;

  const token = (): string => {
    // skip whitespace and '#' comment lines
    while (pos < data.length) {
      const ch = data[pos];
      if (ch === 0x23) {
        while (pos < data.length && data[pos] !== 0x0a) pos++;
      } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < data.length && !isSpace(data[pos])) pos++;
    return data.subarray(start, pos).toString('ascii');
  };

  const magic = token();
  if (magic !== 'P6') {
    throw new Error(`${path}: expected P6 PPM, got ${JSON.stringify(magic)}`);
  }
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0) || !(height > 0)) {
    throw new Error(`${path}: bad dimensions ${width}x${height}`);
  }
  if (maxval !== 255) {
    throw new Error(`${path}: only maxval 255 is supported, got ${maxval}`);
  }
  pos++; // single whitespace after the header
  const need = width * height * 3;
  if (data.length - pos < need) {
    throw new Error(`${path}: truncated pixel data`);
  }
  return { width, height, pixels: new Uint8Array(data.subarray(pos, pos + need)) };
}

export function writePpm(path: string, img: RasterImage): void {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, 'ascii');
  writeFileSync(path, Buffer.concat([header, Buffer.from(img.pixels)]));
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}
