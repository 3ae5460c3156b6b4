// LPFS v1 writer: the binary feature container the detection toolkit reads.
//
//   magic "LPFSTOR1"
//   payload: u32 version=1, d, N, C, recordCount, cropSetCount (little endian)
//            C x class name (u32 byte length + UTF-8)
//            records: id string, i32 label, (1+N)*d float32, global first
//            crop sets: parent id, i32 label, u32 m, m records
//   trailing u32 CRC-32 of the payload
//
// A plain-text `<path>.manifest` sidecar lists counts and the split role.

import { writeFileSync } from 'node:fs';

export interface FeatureRecord {
  imageId: string;
  label: number; // class index, or -1 for OOD/unlabeled
  global: Float32Array; // (d)
  locals: Float32Array[]; // N x (d)
}

export interface CropCandidateSet {
  parentImageId: string;
  label: number;
  candidates: FeatureRecord[];
}

export interface FeatureStore {
  d: number;
  N: number;
  classNames: string[];
  records: FeatureRecord[];
  cropSets: CropCandidateSet[];
}

const MAGIC = 'LPFSTOR1';
const VERSION = 1;

export function encodeStore(store: FeatureStore): Buffer {
  validateStore(store);
  const chunks: Buffer[] = [];
  const head = Buffer.alloc(24);
  head.writeUInt32LE(VERSION, 0);
  head.writeUInt32LE(store.d, 4);
  head.writeUInt32LE(store.N, 8);
  head.writeUInt32LE(store.classNames.length, 12);
  head.writeUInt32LE(store.records.length, 16);
  head.writeUInt32LE(store.cropSets.length, 20);
  chunks.push(head);
  for (const name of store.classNames) chunks.push(packString(name));
  for (const rec of store.records) chunks.push(packRecord(rec, store.d, store.N));
  for (const cs of store.cropSets) {
    chunks.push(packString(cs.parentImageId));
    const meta = Buffer.alloc(8);
    meta.writeInt32LE(cs.label, 0);
    meta.writeUInt32LE(cs.candidates.length, 4);
    chunks.push(meta);
    for (const cand of cs.candidates) chunks.push(packRecord(cand, store.d, store.N));
  }
  const payload = Buffer.concat(chunks);
  const tail = Buffer.alloc(4);
  tail.writeUInt32LE(crc32(payload), 0);
  return Buffer.concat([Buffer.from(MAGIC, 'ascii'), payload, tail]);
}

export function writeStore(store: FeatureStore, path: string, role?: string): void {
  writeFileSync(path, encodeStore(store));
  const lines: Record<string, string | number> = {
    format: 'LPFS',
    version: VERSION,
    d: store.d,
    N: store.N,
    C: store.classNames.length,
    records: store.records.length,
    crop_sets: store.cropSets.length,
  };
  if (role) lines['role'] = role;
  writeManifest(path + '.manifest', lines);
}

export function writeManifest(path: string, entries: Record<string, string | number>): void {
  const text = Object.entries(entries)
    .map(([k, v]) => `${k}=${v}`)
    .join('\n');
  writeFileSync(path, text + '\n');
}

function packString(s: string): Buffer {
  const raw = Buffer.from(s, 'utf-8');
  const out = Buffer.alloc(4 + raw.length);
  out.writeUInt32LE(raw.length, 0);
  raw.copy(out, 4);
  return out;
}

function packRecord(rec: FeatureRecord, d: number, N: number): Buffer {
  const id = packString(rec.imageId);
  const body = Buffer.alloc(4 + 4 * d * (1 + N));
  body.writeInt32LE(rec.label, 0);
  let off = 4;
  for (const v of rec.global) {
    body.writeFloatLE(v, off);
    off += 4;
  }
  for (const row of rec.locals) {
    for (const v of row) {
      body.writeFloatLE(v, off);
      off += 4;
    }
  }
  return Buffer.concat([id, body]);
}

export function validateStore(store: FeatureStore): void {
  if (store.d < 1 || store.N < 1 || store.classNames.length < 1) {
    throw new Error(`invalid store shape d=${store.d} N=${store.N} C=${store.classNames.length}`);
  }
  const check = (rec: FeatureRecord, where: string) => {
    if (rec.global.length !== store.d) {
      throw new Error(`${where} ${rec.imageId}: global length ${rec.global.length} != d=${store.d}`);
    }
    if (rec.locals.length !== store.N) {
      throw new Error(`${where} ${rec.imageId}: ${rec.locals.length} locals != N=${store.N}`);
    }
    for (const row of rec.locals) {
      if (row.length !== store.d) {
        throw new Error(`${where} ${rec.imageId}: local row length ${row.length} != d=${store.d}`);
      }
    }
    for (const v of rec.global) assertFinite(v, rec.imageId);
    for (const row of rec.locals) for (const v of row) assertFinite(v, rec.imageId);
    if (rec.label < -1 || rec.label >= store.classNames.length) {
      throw new Error(`${where} ${rec.imageId}: label ${rec.label} out of range`);
    }
  };
  for (const rec of store.records) check(rec, 'record');
  for (const cs of store.cropSets) {
    for (const cand of cs.candidates) {
      check(cand, 'crop candidate');
      if (cand.label !== cs.label) {
        throw new Error(`crop candidate ${cand.imageId}: label ${cand.label} != set label ${cs.label}`);
      }
    }
  }
}

function assertFinite(v: number, id: string): void {
  if (!Number.isFinite(v)) throw new Error(`record ${id}: non-finite feature value`);
}

// table-based CRC-32 (IEEE), matching zlib
const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}
