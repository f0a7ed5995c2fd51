/**
 * Parser and canonical serializer for the engine's CSV exchange format.
 *
 * Canonical form (what the engine's export writes and what checksum parity
 * is measured against): LF line endings, RFC 4180 minimal quoting, integers
 * bare, floats in Python-repr form, packet sequences semicolon-joined inside
 * one field. Whether a column is integer- or float-typed is detected from
 * the source text (floats always carry '.' or an exponent), so raw and
 * scaled exports both round-trip byte for byte.
 */

import { pyFloat } from './pyfloat.js';

export interface ParsedCsv {
  header: string[];
  rows: string[][];
}

export function parseCsv(text: string): ParsedCsv {
  const rows: string[][] = [];
  let row: string[] = [];
  let field = '';
  let inQuotes = false;
  let i = 0;
  const push = () => {
    row.push(field);
    field = '';
  };
  const endRow = () => {
    push();
    rows.push(row);
    row = [];
  };
  while (i < text.length) {
    const c = text[i]!;
    if (inQuotes) {
      if (c === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i += 2;
          continue;
        }
        inQuotes = false;
        i += 1;
        continue;
      }
      field += c;
      i += 1;
      continue;
    }
    if (c === '"') {
      inQuotes = true;
      i += 1;
    } else if (c === ',') {
      push();
      i += 1;
    } else if (c === '\n') {
      endRow();
      i += 1;
    } else if (c === '\r') {
      i += 1; // tolerate, never emit
    } else {
      field += c;
      i += 1;
    }
  }
  if (field !== '' || row.length > 0) {
    endRow();
  }
  if (rows.length === 0) {
    throw new Error('empty CSV document');
  }
  const header = rows.shift()!;
  return { header, rows };
}

export function quoteMinimal(field: string): string {
  if (/[",\r\n]/.test(field)) {
    return `"${field.replaceAll('"', '""')}"`;
  }
  return field;
}

const FLOATISH = /[.eE]/;

/** True when any non-empty cell (or sequence element) is float-typed text. */
export function columnIsFloat(cells: Iterable<string>): boolean {
  for (const cell of cells) {
    if (cell === '') continue;
    for (const tok of cell.split(';')) {
      if (tok !== '' && FLOATISH.test(tok)) return true;
    }
  }
  return false;
}

export function formatNumber(value: number, float: boolean): string {
  return float ? pyFloat(value) : String(value);
}

export function formatSequence(values: readonly number[], float: boolean): string {
  return values.map((v) => formatNumber(v, float)).join(';');
}
