import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { editDistance, wordCount } from "../src/editDistance.js";

interface Vector {
  a: string;
  b: string;
  distance: number;
}

const vectors: Vector[] = JSON.parse(
  readFileSync(new URL("./fixtures/edit_distance_vectors.json", import.meta.url), "utf-8"),
);

describe("editDistance", () => {
  it("matches the server on the shared 20-vector set", () => {
    expect(vectors).toHaveLength(20);
    for (const { a, b, distance } of vectors) {
      expect(editDistance(a, b), JSON.stringify([a, b])).toBe(distance);
    }
  });

  it("is symmetric and zero on identity", () => {
    for (const { a, b } of vectors) {
      expect(editDistance(a, b)).toBe(editDistance(b, a));
      expect(editDistance(a, a)).toBe(0);
    }
  });

  it("counts code points, not UTF-16 units", () => {
    expect(editDistance("🦉", "")).toBe(1);
    expect(editDistance("🦉", "🦊")).toBe(1);
  });

  it("handles classic textbook cases", () => {
    expect(editDistance("kitten", "sitting")).toBe(3);
    expect(editDistance("", "abc")).toBe(3);
  });
});

describe("wordCount", () => {
  it("counts maximal non-whitespace runs like the server", () => {
    expect(wordCount("")).toBe(0);
    expect(wordCount("one")).toBe(1);
    expect(wordCount("  spaced   out\twords\n")).toBe(3);
    expect(wordCount("a photo of a dog")).toBe(5);
  });
});
