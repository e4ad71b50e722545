/** Viridis-class colormap: 17 anchor colors, linear interpolation between. */
const ANCHORS: [number, number, number][] = [
  [68, 1, 84],
  [72, 26, 108],
  [71, 47, 125],
  [65, 68, 135],
  [57, 86, 140],
  [49, 104, 142],
  [42, 120, 142],
  [35, 136, 142],
  [31, 152, 139],
  [34, 168, 132],
  [53, 183, 121],
  [84, 197, 104],
  [122, 209, 81],
  [165, 219, 54],
  [210, 226, 27],
  [253, 231, 37],
  [253, 231, 37],
];

export function viridis(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t)) * (ANCHORS.length - 2);
  const k = Math.floor(x);
  const f = x - k;
  const a = ANCHORS[k];
  const b = ANCHORS[k + 1];
  return [
    Math.round(a[0] + f * (b[0] - a[0])),
    Math.round(a[1] + f * (b[1] - a[1])),
    Math.round(a[2] + f * (b[2] - a[2])),
  ];
}

/** Map a value to [0, 1] over a fixed range (clamping outside). */
export function normalize(value: number, lo: number, hi: number): number {
  if (hi <= lo) return 0;
  return Math.min(1, Math.max(0, (value - lo) / (hi - lo)));
}

/** Pinned color ranges per field kind, for cross-run comparability. */
export const FIELD_RANGES: Record<string, [number, number]> = {
  s: [0, 1],
  p: [0, 1],
  k: [0.01, 4],
};
