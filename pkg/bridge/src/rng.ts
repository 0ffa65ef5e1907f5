/**
 * SplitMix64 counter generator, matching the pipeline's documented spec:
 *
 *   state' = (state + 0x9E3779B97F4A7C15) mod 2^64
 *   z = state'
 *   z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
 *   z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
 *   out = z ^ (z >> 31)
 *
 * Bounded draws reject values above the largest multiple of the bound.
 */

import { createHash } from "crypto";

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MUL1 = 0xbf58476d1ce4e5b9n;
const MUL2 = 0x94d049bb133111ebn;

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint) {
    this.state = seed & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + GAMMA) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * MUL1) & MASK64;
    z = ((z ^ (z >> 27n)) * MUL2) & MASK64;
    return z ^ (z >> 31n);
  }

  /** Uniform integer in [0, n) via rejection sampling. */
  nextBelow(n: number): number {
    if (n <= 0) throw new Error("bound must be positive");
    const bound = BigInt(n);
    const limit = MASK64 + 1n - ((MASK64 + 1n) % bound);
    for (;;) {
      const v = this.nextU64();
      if (v < limit) return Number(v % bound);
    }
  }
}

/** 64-bit seed from the SHA-256 of the "|"-joined string parts. */
export function deriveSeed(...parts: Array<string | number>): bigint {
  const joined = parts.map(String).join("|");
  const digest = createHash("sha256").update(joined, "utf8").digest();
  return digest.readBigUInt64BE(0);
}
