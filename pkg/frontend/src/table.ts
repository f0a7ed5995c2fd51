/**
 * The native table object served by the bindings: one row per flow, packet
 * sequences as variable-length arrays (valid prefix only), flow statistics
 * as named scalar columns. Values are exactly what the engine exported;
 * toCanonicalCsv() reproduces the engine's serialization byte for byte.
 */

import { columnIsFloat, formatNumber, formatSequence, parseCsv, quoteMinimal } from './csv.js';

export interface FlowTable {
  readonly length: number;
  readonly statNames: readonly string[];
  readonly date: string[];
  readonly label: string[];
  readonly labelId: number[];
  readonly ppiSizes: number[][];
  readonly ppiIptMs: number[][];
  readonly ppiDirs: number[][];
  /** [n][F], aligned with statNames */
  readonly flowStats: number[][];
  /** row ids from the persisted split index, ascending */
  readonly rowId: bigint[];
  /** which columns carried float-typed text in the export */
  readonly floatColumns: ReadonlySet<string>;
}

const FIXED = ['date', 'label', 'ppi_sizes', 'ppi_ipt_ms', 'ppi_dirs'] as const;

export function tableFromCsv(text: string, rowIds: readonly bigint[]): FlowTable {
  const { header, rows } = parseCsv(text);
  for (let i = 0; i < FIXED.length; i += 1) {
    if (header[i] !== FIXED[i]) {
      throw new Error(`unexpected CSV header: ${header.join(',')}`);
    }
  }
  if (header[header.length - 1] !== 'label_id') {
    throw new Error('export CSV is missing the label_id column');
  }
  const statNames = header.slice(FIXED.length, header.length - 1);
  if (rows.length !== rowIds.length) {
    throw new Error(`CSV has ${rows.length} rows but the split index has ${rowIds.length}`);
  }

  const floatColumns = new Set<string>();
  const colCells = (idx: number) => rows.map((r) => r[idx] ?? '');
  if (columnIsFloat(colCells(2))) floatColumns.add('ppi_sizes');
  if (columnIsFloat(colCells(3))) floatColumns.add('ppi_ipt_ms');
  statNames.forEach((name, j) => {
    if (columnIsFloat(colCells(FIXED.length + j))) floatColumns.add(name);
  });

  const parseSeq = (cell: string): number[] =>
    cell === '' ? [] : cell.split(';').map((tok) => Number(tok));

  const table: FlowTable = {
    length: rows.length,
    statNames,
    date: rows.map((r) => r[0]!),
    label: rows.map((r) => r[1]!),
    labelId: rows.map((r) => Number(r[r.length - 1]!)),
    ppiSizes: rows.map((r) => parseSeq(r[2]!)),
    ppiIptMs: rows.map((r) => parseSeq(r[3]!)),
    ppiDirs: rows.map((r) => parseSeq(r[4]!)),
    flowStats: rows.map((r) => statNames.map((_, j) => Number(r[FIXED.length + j]!))),
    rowId: [...rowIds],
    floatColumns,
  };
  return table;
}

export function canonicalHeader(table: FlowTable): string {
  return [...FIXED, ...table.statNames, 'label_id'].join(',');
}

function rowLine(table: FlowTable, i: number): string {
  const f = table.floatColumns;
  const cells: string[] = [
    table.date[i]!,
    quoteMinimal(table.label[i]!),
    formatSequence(table.ppiSizes[i]!, f.has('ppi_sizes')),
    formatSequence(table.ppiIptMs[i]!, f.has('ppi_ipt_ms')),
    formatSequence(table.ppiDirs[i]!, false),
  ];
  table.statNames.forEach((name, j) => {
    cells.push(formatNumber(table.flowStats[i]![j]!, f.has(name)));
  });
  cells.push(String(table.labelId[i]));
  return cells.join(',');
}

/** Byte-exact reproduction of the engine's export serialization. */
export function toCanonicalCsv(table: FlowTable, order?: readonly number[]): string {
  const lines = [canonicalHeader(table)];
  const indices = order ?? table.date.map((_, i) => i);
  for (const i of indices) {
    lines.push(rowLine(table, i));
  }
  return lines.join('\n') + '\n';
}

/** Deep copy so callers can never corrupt the cached table. */
export function copyTable(table: FlowTable): FlowTable {
  return {
    length: table.length,
    statNames: [...table.statNames],
    date: [...table.date],
    label: [...table.label],
    labelId: [...table.labelId],
    ppiSizes: table.ppiSizes.map((s) => [...s]),
    ppiIptMs: table.ppiIptMs.map((s) => [...s]),
    ppiDirs: table.ppiDirs.map((s) => [...s]),
    flowStats: table.flowStats.map((s) => [...s]),
    rowId: [...table.rowId],
    floatColumns: new Set(table.floatColumns),
  };
}
