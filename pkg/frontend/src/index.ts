export { openDataset, BoundDataset } from './dataset.js';
export type { Batch, DatasetConfig, LoaderOptions, SizeTier, SplitName } from './dataset.js';
export type { FlowTable } from './table.js';
export { toCanonicalCsv, tableFromCsv } from './table.js';
export { readManifest, readSplitIndex, readSplitSidecar } from './splitIndex.js';
export { FlowbenchCliError, runFlowbench } from './flowbenchCli.js';
export { mix64, deriveKey, shuffleOrder } from './hash.js';
export { pyFloat } from './pyfloat.js';
