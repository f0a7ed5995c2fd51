/**
 * Accessor layer over the engine: open a store, set a config, initialize,
 * then read train/validation/test tables or iterate deterministic batch
 * loaders. Contains zero splitting or scaling logic of its own; everything
 * delegates to the engine through its CLI and persisted file formats, so
 * every value obtainable here equals the engine's own output.
 */

import { existsSync, mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { runFlowbench } from './flowbenchCli.js';
import { shuffleOrder } from './hash.js';
import { readManifest, readSplitIndex, readSplitSidecar } from './splitIndex.js';
import type { SplitRowIds, SplitSidecar, StoreManifest } from './splitIndex.js';
import { copyTable, tableFromCsv } from './table.js';
import type { FlowTable } from './table.js';

export type SizeTier = 'XS' | 'S' | 'M' | 'L' | 'ORIG';
export type SplitName = 'train' | 'val' | 'test';
export type ScalerKind = 'standard' | 'robust' | 'minmax' | 'none';

export interface DatasetConfig {
  trainPeriod: string | string[];
  testPeriod: string | string[];
  valApproach?: 'split-from-train' | 'separate-dates';
  valPeriod?: string | string[];
  valFraction?: number;
  appSelection?: 'all-known' | 'top-x' | 'explicit-unknown' | 'fixed';
  topX?: number;
  knownApps?: string[];
  unknownApps?: string[];
  trainDateWeights?: number[];
  trainSize?: number;
  valSize?: number;
  testSize?: number;
  tierTargets?: Partial<Record<Exclude<SizeTier, 'ORIG'>, number>>;
  seed?: number;
  strictTimeOrder?: boolean;
  /** serve scaled features (engine-fitted scalers) instead of raw values */
  scaled?: boolean;
  fitFraction?: number;
  psizesScaler?: ScalerKind;
  iptScaler?: ScalerKind;
  fstatsScaler?: ScalerKind;
  psizesMaxClip?: number;
  iptMinClip?: number;
  iptMaxClip?: number;
  fstatsQuantileClipQ?: number;
}

export interface Batch {
  ppiSizes: number[][];
  ppiIptMs: number[][];
  ppiDirs: number[][];
  flowStats: number[][];
  labelId: number[];
  date: string[];
  rowId: bigint[];
}

export interface LoaderOptions {
  batchSize: number;
  shuffle?: boolean;
  seed?: number;
  epoch?: number;
}

function tomlString(value: string): string {
  return `"${value.replaceAll('\\', '\\\\').replaceAll('"', '\\"')}"`;
}

function tomlValue(value: unknown): string {
  if (typeof value === 'string') return tomlString(value);
  if (typeof value === 'boolean') return value ? 'true' : 'false';
  if (typeof value === 'number') return Number.isInteger(value) ? String(value) : String(value);
  if (Array.isArray(value)) return `[${value.map(tomlValue).join(', ')}]`;
  throw new Error(`cannot render ${typeof value} as TOML`);
}

function configToToml(datasetId: string, sizeTier: SizeTier, config: DatasetConfig): string {
  const lines: string[] = [];
  const put = (key: string, value: unknown) => {
    if (value !== undefined) lines.push(`${key} = ${tomlValue(value)}`);
  };
  put('dataset_id', datasetId);
  put('size_tier', sizeTier);
  put('train_period', config.trainPeriod);
  put('test_period', config.testPeriod);
  put('val_approach', config.valApproach);
  put('val_period', config.valPeriod);
  put('val_fraction', config.valFraction);
  put('app_selection', config.appSelection);
  put('top_x', config.topX);
  put('known_apps', config.knownApps);
  put('unknown_apps', config.unknownApps);
  put('train_date_weights', config.trainDateWeights);
  put('train_size', config.trainSize);
  put('val_size', config.valSize);
  put('test_size', config.testSize);
  put('seed', config.seed);
  put('strict_time_order', config.strictTimeOrder);
  put('fit_fraction', config.fitFraction);
  put('psizes_scaler', config.psizesScaler);
  put('ipt_scaler', config.iptScaler);
  put('fstats_scaler', config.fstatsScaler);
  put('psizes_max_clip', config.psizesMaxClip);
  put('ipt_min_clip', config.iptMinClip);
  put('ipt_max_clip', config.iptMaxClip);
  put('fstats_quantile_clip_q', config.fstatsQuantileClipQ);
  if (config.tierTargets) {
    const entries = Object.entries(config.tierTargets).map(([k, v]) => `${k} = ${v}`);
    lines.push(`tier_targets = { ${entries.join(', ')} }`);
  }
  return lines.join('\n') + '\n';
}

export class BoundDataset {
  readonly manifest: StoreManifest;
  private config?: DatasetConfig;
  private configPath?: string;
  private splitFingerprint?: string;
  private rowIds?: SplitRowIds;
  private sidecar?: SplitSidecar;
  private tables: Partial<Record<SplitName, FlowTable>> = {};

  constructor(
    readonly storePath: string,
    readonly sizeTier: SizeTier,
    private readonly binary = 'flowbench',
  ) {
    this.manifest = readManifest(storePath);
  }

  /**
   * Validate the config, materialize (or reuse) the split, and fit (or
   * cache-hit) the scalers. Accessors work after this returns.
   */
  setDatasetConfigAndInitialize(config: DatasetConfig): void {
    const workDir = mkdtempSync(join(tmpdir(), 'flowbench-bindings-'));
    const configPath = join(workDir, 'config.toml');
    writeFileSync(configPath, configToToml(this.manifest.dataset_id, this.sizeTier, config), 'utf-8');

    const out = runFlowbench(
      ['split', '--store', this.storePath, '--config', configPath],
      this.binary,
    );
    const m = /^(?:materialized|reusing cached) split ([0-9a-f]{64})/m.exec(out);
    if (!m) {
      throw new Error(`could not find the split fingerprint in engine output:\n${out}`);
    }
    runFlowbench(['fit-scalers', '--store', this.storePath, '--config', configPath], this.binary);

    this.config = config;
    this.configPath = configPath;
    this.splitFingerprint = m[1]!;
    this.rowIds = readSplitIndex(this.storePath, this.splitFingerprint);
    this.sidecar = readSplitSidecar(this.storePath, this.splitFingerprint);
    this.tables = {};
  }

  get fingerprint(): string {
    return this.initialized().splitFingerprint!;
  }

  get classMap(): SplitSidecar['class_map'] {
    return this.initialized().sidecar!.class_map;
  }

  splitSizes(): SplitSidecar['sizes'] {
    return this.initialized().sidecar!.sizes;
  }

  private initialized(): this {
    if (!this.splitFingerprint || !this.rowIds || !this.configPath) {
      throw new Error('dataset is not initialized; call setDatasetConfigAndInitialize first');
    }
    return this;
  }

  private fetchTable(split: SplitName): FlowTable {
    this.initialized();
    const cached = this.tables[split];
    if (cached) return cached;
    const workDir = mkdtempSync(join(tmpdir(), 'flowbench-export-'));
    const outPath = join(workDir, `${split}.csv`);
    const args = [
      'export',
      '--store', this.storePath,
      '--config', this.configPath!,
      '--split', split,
      '--out', outPath,
    ];
    if (this.config?.scaled) args.push('--scaled');
    runFlowbench(args, this.binary);
    const table = tableFromCsv(readFileSync(outPath, 'utf-8'), this.rowIds![split]);
    this.tables[split] = table;
    return table;
  }

  getTrainTable(): FlowTable {
    return copyTable(this.fetchTable('train'));
  }

  getValTable(): FlowTable {
    return copyTable(this.fetchTable('val'));
  }

  getTestTable(): FlowTable {
    return copyTable(this.fetchTable('test'));
  }

  /**
   * Iterable over batches for one epoch. With shuffle, the order is the
   * engine's own epoch permutation for (seed, epoch); without it, ascending
   * row id. The split is covered exactly once; the last batch may be short.
   */
  getLoader(split: SplitName, options: LoaderOptions): Iterable<Batch> {
    const { batchSize } = options;
    if (!Number.isInteger(batchSize) || batchSize < 1) {
      throw new Error('batchSize must be a positive integer');
    }
    const table = this.fetchTable(split);
    const seed = BigInt(options.seed ?? this.config?.seed ?? 42);
    const epoch = BigInt(options.epoch ?? 0);
    const rowIds = this.rowIds![split];
    const posByRow = new Map(rowIds.map((r, i) => [r, i] as const));
    const order = options.shuffle
      ? shuffleOrder(seed, epoch, rowIds).map((r) => posByRow.get(r)!)
      : rowIds.map((_, i) => i);

    return {
      *[Symbol.iterator](): Iterator<Batch> {
        for (let start = 0; start < order.length; start += batchSize) {
          const chunk = order.slice(start, start + batchSize);
          yield {
            ppiSizes: chunk.map((i) => [...table.ppiSizes[i]!]),
            ppiIptMs: chunk.map((i) => [...table.ppiIptMs[i]!]),
            ppiDirs: chunk.map((i) => [...table.ppiDirs[i]!]),
            flowStats: chunk.map((i) => [...table.flowStats[i]!]),
            labelId: chunk.map((i) => table.labelId[i]!),
            date: chunk.map((i) => table.date[i]!),
            rowId: chunk.map((i) => table.rowId[i]!),
          };
        }
      },
    };
  }

  /** Internal: the engine-ordered row positions for one epoch (test support). */
  epochOrder(split: SplitName, seed: number, epoch: number): number[] {
    this.initialized();
    const rowIds = this.rowIds![split];
    const posByRow = new Map(rowIds.map((r, i) => [r, i] as const));
    return shuffleOrder(BigInt(seed), BigInt(epoch), rowIds).map((r) => posByRow.get(r)!);
  }
}

export function openDataset(dataRoot: string, size: SizeTier, binary = 'flowbench'): BoundDataset {
  if (!existsSync(join(dataRoot, 'manifest.json'))) {
    throw new Error(`no store at ${dataRoot} (missing manifest.json)`);
  }
  return new BoundDataset(dataRoot, size, binary);
}
