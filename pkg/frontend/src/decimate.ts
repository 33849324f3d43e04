// Min-max decimation for the signal plot: above the point budget, each bin
// contributes its minimum and maximum so spikes survive downsampling. Raw
// data is untouched — exports always use the full sample set.

export interface Point {
  t: number;
  v: number;
}

export const DECIMATION_THRESHOLD = 5000;

export function decimateMinMax(points: Point[], budget = DECIMATION_THRESHOLD): Point[] {
  if (points.length <= budget) return points;
  const bins = Math.max(1, Math.floor(budget / 2));
  const perBin = points.length / bins;
  const out: Point[] = [];
  for (let b = 0; b < bins; b++) {
    const start = Math.floor(b * perBin);
    const end = Math.min(points.length, Math.floor((b + 1) * perBin));
    if (start >= end) continue;
    let min = points[start];
    let max = points[start];
    for (let i = start + 1; i < end; i++) {
      if (points[i].v < min.v) min = points[i];
      if (points[i].v > max.v) max = points[i];
    }
    // keep time order within the bin
    if (min.t <= max.t) {
      out.push(min);
      if (min !== max) out.push(max);
    } else {
      out.push(max);
      out.push(min);
    }
  }
  return out;
}

/** Insert null-separated segments where the gap exceeds maxGap (gap markers). */
export function splitOnGaps(points: Point[], maxGapNs: number): Point[][] {
  const segments: Point[][] = [];
  let current: Point[] = [];
  for (const p of points) {
    const prev = current[current.length - 1];
    if (prev && p.t - prev.t > maxGapNs) {
      segments.push(current);
      current = [];
    }
    current.push(p);
  }
  if (current.length) segments.push(current);
  return segments;
}
