/**
 * Reader for the engine's persisted split artifacts: the binary row-id index
 * (`<fingerprint>.idx`) and its JSON sidecar.
 */

import { readFileSync } from 'node:fs';
import { join } from 'node:path';

const MAGIC = 'FBIDX001';

export interface SplitRowIds {
  train: bigint[];
  val: bigint[];
  test: bigint[];
}

export interface SplitSidecar {
  fingerprint: string;
  sizes: { train: number; val: number; test: number };
  per_date_counts: Record<string, Record<string, number>>;
  class_map: { known: string[]; unknown: string[]; unknown_id: number };
}

export function readSplitIndex(storePath: string, fingerprint: string): SplitRowIds {
  const buf = readFileSync(join(storePath, 'splits', `${fingerprint}.idx`));
  if (buf.subarray(0, 8).toString('latin1') !== MAGIC) {
    throw new Error(`bad split index magic in ${fingerprint}.idx`);
  }
  const nTrain = Number(buf.readBigUInt64LE(8));
  const nVal = Number(buf.readBigUInt64LE(16));
  const nTest = Number(buf.readBigUInt64LE(24));
  let off = 32;
  const block = (n: number): bigint[] => {
    const out: bigint[] = new Array(n);
    for (let i = 0; i < n; i += 1) {
      out[i] = buf.readBigUInt64LE(off);
      off += 8;
    }
    return out;
  };
  return { train: block(nTrain), val: block(nVal), test: block(nTest) };
}

export function readSplitSidecar(storePath: string, fingerprint: string): SplitSidecar {
  const raw = readFileSync(join(storePath, 'splits', `${fingerprint}.json`), 'utf-8');
  return JSON.parse(raw) as SplitSidecar;
}

export interface StoreManifest {
  dataset_id: string;
  schema_version: number;
  l_ppi: number;
  stat_names: string[];
  dates: { date: string; rows: number }[];
  classes: Record<string, number>;
  total_rows: number;
  checksums: Record<string, string>;
}

export function readManifest(storePath: string): StoreManifest {
  const raw = readFileSync(join(storePath, 'manifest.json'), 'utf-8');
  return JSON.parse(raw) as StoreManifest;
}
