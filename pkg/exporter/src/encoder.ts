// Encoders turn a raster image into one global feature plus N patch-level
// features, and a prompt string into a text feature of the same dimension.
//
// Two backends:
//   patchstats  self-contained and fully offline: per-patch color/texture
//               statistics pushed through a fixed seeded random projection.
//               Deterministic, fast, and good enough to exercise the whole
//               export pipeline and file format. Not a pretrained model.
//   clip        a real pretrained vision-language model via
//               @xenova/transformers. Needs the package installed and model
//               weights available locally; any load problem surfaces as
//               EncoderLoadError.

import { RasterImage } from './ppm.js';
import { Rng } from './rng.js';

export interface EncodedImage {
  global: Float32Array;
  locals: Float32Array[];
}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  readonly tokens: number;
  /** Which layer the patch-level features come from; recorded in manifests. */
  readonly localSource: string;
  encodeImage(img: RasterImage): Promise<EncodedImage>;
  encodeText(text: string): Promise<Float32Array>;
}

export class EncoderLoadError extends Error {}

export interface EncoderOptions {
  dim?: number; // patchstats output dimension
  grid?: number; // patchstats patch grid (tokens = grid^2)
  model?: string; // clip model id or local path
}

export async function createEncoder(kind: string, opts: EncoderOptions = {}): Promise<Encoder> {
  if (kind === 'patchstats') {
    return new PatchStatsEncoder(opts.dim ?? 64, opts.grid ?? 4);
  }
  if (kind === 'clip') {
    return ClipEncoder.load(opts.model ?? 'Xenova/clip-vit-base-patch32');
  }
  throw new EncoderLoadError(`unknown encoder ${JSON.stringify(kind)}`);
}

// ---- offline backend ----

const STATS_PER_PATCH = 12;

export class PatchStatsEncoder implements Encoder {
  readonly name = 'patchstats';
  readonly localSource = 'per-patch color/texture statistics, seeded projection';
  readonly dim: number;
  readonly tokens: number;
  private readonly grid: number;
  private readonly projection: Float32Array; // dim x STATS_PER_PATCH

  constructor(dim = 64, grid = 4) {
    if (dim < 1 || grid < 1) throw new EncoderLoadError(`bad patchstats shape dim=${dim} grid=${grid}`);
    this.dim = dim;
    this.grid = grid;
    this.tokens = grid * grid;
    const rng = new Rng('patchstats-projection-v1');
    this.projection = new Float32Array(dim * STATS_PER_PATCH);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = rng.normal() / Math.sqrt(STATS_PER_PATCH);
    }
  }

  async encodeImage(img: RasterImage): Promise<EncodedImage> {
    const locals: Float32Array[] = [];
    for (let gy = 0; gy < this.grid; gy++) {
      for (let gx = 0; gx < this.grid; gx++) {
        const x0 = Math.floor((gx * img.width) / this.grid);
        const x1 = Math.max(x0 + 1, Math.floor(((gx + 1) * img.width) / this.grid));
        const y0 = Math.floor((gy * img.height) / this.grid);
        const y1 = Math.max(y0 + 1, Math.floor(((gy + 1) * img.height) / this.grid));
        const stats = patchStats(img, x0, y0, Math.min(x1, img.width), Math.min(y1, img.height),
                                 gx / this.grid, gy / this.grid);
        locals.push(this.project(stats));
      }
    }
    const global = new Float32Array(this.dim);
    for (const row of locals) for (let i = 0; i < this.dim; i++) global[i] += row[i] / locals.length;
    return { global: normalize(global), locals };
  }

  async encodeText(text: string): Promise<Float32Array> {
    // stable pseudo-embedding per prompt string
    const rng = new Rng('patchstats-text:' + text);
    const out = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) out[i] = rng.normal();
    return normalize(out);
  }

  private project(stats: Float64Array): Float32Array {
    const out = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      let acc = 0;
      for (let j = 0; j < STATS_PER_PATCH; j++) {
        acc += this.projection[i * STATS_PER_PATCH + j] * stats[j];
      }
      out[i] = acc;
    }
    return normalize(out);
  }
}

function patchStats(img: RasterImage, x0: number, y0: number, x1: number, y1: number,
                    relX: number, relY: number): Float64Array {
  const stats = new Float64Array(STATS_PER_PATCH);
  const n = (x1 - x0) * (y1 - y0);
  const mean = [0, 0, 0];
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      const p = (y * img.width + x) * 3;
      mean[0] += img.pixels[p];
      mean[1] += img.pixels[p + 1];
      mean[2] += img.pixels[p + 2];
    }
  }
  for (let c = 0; c < 3; c++) mean[c] /= n;
  const varc = [0, 0, 0];
  let gradX = 0;
  let gradY = 0;
  let lumaTop = 0;
  let lumaLeft = 0;
  let lumaAll = 0;
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      const p = (y * img.width + x) * 3;
      const r = img.pixels[p];
      const g = img.pixels[p + 1];
      const b = img.pixels[p + 2];
      for (let c = 0; c < 3; c++) {
        const dv = img.pixels[p + c] - mean[c];
        varc[c] += dv * dv;
      }
      const luma = 0.299 * r + 0.587 * g + 0.114 * b;
      lumaAll += luma;
      if (y - y0 < (y1 - y0) / 2) lumaTop += luma;
      if (x - x0 < (x1 - x0) / 2) lumaLeft += luma;
      if (x + 1 < x1) {
        const q = (y * img.width + x + 1) * 3;
        gradX += Math.abs(0.299 * img.pixels[q] + 0.587 * img.pixels[q + 1] + 0.114 * img.pixels[q + 2] - luma);
      }
      if (y + 1 < y1) {
        const q = ((y + 1) * img.width + x) * 3;
        gradY += Math.abs(0.299 * img.pixels[q] + 0.587 * img.pixels[q + 1] + 0.114 * img.pixels[q + 2] - luma);
      }
    }
  }
  stats[0] = mean[0] / 255;
  stats[1] = mean[1] / 255;
  stats[2] = mean[2] / 255;
  stats[3] = Math.sqrt(varc[0] / n) / 255;
  stats[4] = Math.sqrt(varc[1] / n) / 255;
  stats[5] = Math.sqrt(varc[2] / n) / 255;
  stats[6] = gradX / (n * 255);
  stats[7] = gradY / (n * 255);
  stats[8] = (2 * lumaTop - lumaAll) / (n * 255); // vertical asymmetry
  stats[9] = (2 * lumaLeft - lumaAll) / (n * 255); // horizontal asymmetry
  stats[10] = relX;
  stats[11] = relY;
  return stats;
}

function normalize(v: Float32Array): Float32Array {
  let norm = 0;
  for (const x of v) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm < 1e-12) {
    // degenerate patch (all-black constant); nudge the first coordinate so
    // downstream cosine math stays defined
    const out = new Float32Array(v.length);
    out[0] = 1;
    return out;
  }
  const out = new Float32Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

// ---- pretrained backend ----

export class ClipEncoder implements Encoder {
  readonly name = 'clip';
  readonly localSource = 'final-block vision patch tokens';
  readonly dim: number;
  readonly tokens: number;

  private constructor(
    private readonly lib: any,
    private readonly processor: any,
    private readonly visionModel: any,
    private readonly tokenizer: any,
    private readonly textModel: any,
    dim: number,
    tokens: number,
  ) {
    this.dim = dim;
    this.tokens = tokens;
  }

  static async load(model: string): Promise<ClipEncoder> {
    let lib: any;
    try {
      lib = await import('@xenova/transformers');
    } catch (err) {
      throw new EncoderLoadError(
        'clip backend needs the optional @xenova/transformers package; ' +
        `import failed: ${(err as Error).message}`,
      );
    }
    try {
      lib.env.allowRemoteModels = false; // weights must already be local
      const processor = await lib.AutoProcessor.from_pretrained(model);
      const visionModel = await lib.CLIPVisionModelWithProjection.from_pretrained(model);
      const tokenizer = await lib.AutoTokenizer.from_pretrained(model);
      const textModel = await lib.CLIPTextModelWithProjection.from_pretrained(model);
      const cfg = visionModel.config;
      const patches = Math.floor(cfg.image_size / cfg.patch_size) ** 2;
      return new ClipEncoder(lib, processor, visionModel, tokenizer, textModel,
                             cfg.projection_dim, patches);
    } catch (err) {
      throw new EncoderLoadError(`cannot load model ${model}: ${(err as Error).message}`);
    }
  }

  async encodeImage(img: RasterImage): Promise<EncodedImage> {
    const raw = new this.lib.RawImage(img.pixels, img.width, img.height, 3);
    const inputs = await this.processor(raw);
    const out = await this.visionModel({ ...inputs, output_hidden_states: true });
    const global = Float32Array.from(out.image_embeds.data as Iterable<number>);
    const hidden = out.last_hidden_state ?? out.hidden_states?.at(-1);
    if (!hidden) {
      throw new EncoderLoadError('vision model exposes no patch-token states');
    }
    const [, seq, width] = hidden.dims;
    const data = hidden.data as Float32Array;
    const locals: Float32Array[] = [];
    for (let t = 1; t < seq; t++) { // skip the pooled class token
      const row = new Float32Array(Math.min(width, this.dim));
      for (let i = 0; i < row.length; i++) row[i] = data[t * width + i];
      locals.push(row.length === this.dim ? row : padTo(row, this.dim));
    }
    return { global: padTo(global, this.dim), locals };
  }

  async encodeText(text: string): Promise<Float32Array> {
    const tokens = this.tokenizer(text, { padding: true, truncation: true });
    const out = await this.textModel(tokens);
    return padTo(Float32Array.from(out.text_embeds.data as Iterable<number>), this.dim);
  }
}

function padTo(v: Float32Array, dim: number): Float32Array {
  if (v.length === dim) return v;
  const out = new Float32Array(dim);
  out.set(v.subarray(0, dim));
  return out;
}
