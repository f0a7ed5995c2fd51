/**
 * Stable 64-bit hash priorities, bit-for-bit compatible with the engine.
 *
 * The engine orders every deterministic sampling decision (batch shuffling
 * included) by splitmix64 priorities of a derived key and the row id. This
 * module reproduces that arithmetic with BigInt so loaders built here iterate
 * in exactly the engine's order for equal (seed, epoch).
 */

const MASK64 = (1n << 64n) - 1n;
export const GOLDEN64 = 0x9e3779b97f4a7c15n;
const MULT_A = 0xbf58476d1ce4e5b9n;
const MULT_B = 0x94d049bb133111ebn;

/** Purpose tag for batch shuffling; must match the engine's constant. */
export const PURPOSE_SHUFFLE = 7n;

export function mix64(value: bigint): bigint {
  let z = value & MASK64;
  z = ((z ^ (z >> 30n)) * MULT_A) & MASK64;
  z = ((z ^ (z >> 27n)) * MULT_B) & MASK64;
  return z ^ (z >> 31n);
}

export function deriveKey(...parts: bigint[]): bigint {
  let key = GOLDEN64;
  for (const part of parts) {
    key = mix64(key ^ ((part + GOLDEN64) & MASK64));
  }
  return key;
}

export function priority(key: bigint, rowId: bigint): bigint {
  return mix64(rowId ^ key);
}

/**
 * Deterministic epoch permutation: sort row ids on hash(seed, epoch, row_id),
 * ties (astronomically rare) broken by row id.
 */
export function shuffleOrder(seed: bigint, epoch: bigint, rowIds: readonly bigint[]): bigint[] {
  const key = deriveKey(PURPOSE_SHUFFLE, seed, epoch);
  return rowIds
    .map((r) => ({ r, p: priority(key, r) }))
    .sort((a, b) => (a.p < b.p ? -1 : a.p > b.p ? 1 : a.r < b.r ? -1 : a.r > b.r ? 1 : 0))
    .map((x) => x.r);
}
