/**
 * Canonical float text matching the engine's CSV serialization.
 *
 * The engine writes floats as Python's repr: shortest round-trip decimal,
 * fixed notation for 1e-4 <= |x| < 1e16 (with a trailing ".0" on integral
 * values), scientific with a two-digit-minimum exponent otherwise.
 * JavaScript's Number-to-string is also shortest round-trip, so only the
 * formatting differs; this adapter closes that gap.
 */

export function pyFloat(value: number): string {
  if (!Number.isFinite(value)) {
    throw new Error(`cannot serialize non-finite float ${value}`);
  }
  if (value === 0) {
    return Object.is(value, -0) ? '-0.0' : '0.0';
  }
  const abs = Math.abs(value);
  if (abs >= 1e16 || abs < 1e-4) {
    const s = value.toExponential(); // shortest digits per ES spec
    const m = /^(-?\d(?:\.\d+)?)e([+-])(\d+)$/.exec(s);
    if (!m) {
      throw new Error(`unexpected exponential form ${s}`);
    }
    return `${m[1]}e${m[2]}${m[3]!.padStart(2, '0')}`;
  }
  const s = String(value);
  if (!s.includes('.')) {
    return `${s}.0`;
  }
  return s;
}

/** Integers print bare; everything else goes through pyFloat. */
export function pyNumber(value: number, isFloatColumn: boolean): string {
  if (!isFloatColumn && Number.isInteger(value)) {
    return String(value);
  }
  return pyFloat(value);
}
