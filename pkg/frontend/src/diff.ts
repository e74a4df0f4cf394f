/** Word-level caption diff for display, longest-common-subsequence based. */

export type DiffTag = "same" | "removed" | "added";

export interface DiffToken {
  tag: DiffTag;
  word: string;
}

export function tokenize(caption: string): string[] {
  return caption.toLowerCase().split(/\s+/).filter((w) => w.length > 0);
}

export function diffCaptions(original: string, edited: string): DiffToken[] {
  const a = tokenize(original);
  const b = tokenize(edited);
  // lcs[i][j]: longest common subsequence length of a[i:], b[j:]
  const lcs: number[][] = Array.from({ length: a.length + 1 }, () =>
    new Array<number>(b.length + 1).fill(0));
  for (let i = a.length - 1; i >= 0; i--) {
    for (let j = b.length - 1; j >= 0; j--) {
      lcs[i]![j] = a[i] === b[j]
        ? lcs[i + 1]![j + 1]! + 1
        : Math.max(lcs[i + 1]![j]!, lcs[i]![j + 1]!);
    }
  }
  const out: DiffToken[] = [];
  let i = 0;
  let j = 0;
  while (i < a.length && j < b.length) {
    if (a[i] === b[j]) {
      out.push({ tag: "same", word: a[i]! });
      i++;
      j++;
    } else if (lcs[i + 1]![j]! >= lcs[i]![j + 1]!) {
      out.push({ tag: "removed", word: a[i]! });
      i++;
    } else {
      out.push({ tag: "added", word: b[j]! });
      j++;
    }
  }
  for (; i < a.length; i++) out.push({ tag: "removed", word: a[i]! });
  for (; j < b.length; j++) out.push({ tag: "added", word: b[j]! });
  return out;
}

export function captionsEqual(original: string, edited: string): boolean {
  const a = tokenize(original);
  const b = tokenize(edited);
  return a.length === b.length && a.every((w, k) => w === b[k]);
}
