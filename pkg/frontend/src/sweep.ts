// Geometry for the rotation-sweep chart: one polyline per class score, a
// step line for the model's prediction, and the slider linkage. All pure
// functions so the canvas drawing code stays trivial.

import type { SweepResult } from "./api";

export interface ChartGeometry {
  width: number;
  height: number;
  pad: number;
  xFor(angle: number): number;
  yFor(score: number): number;
}

export function chartGeometry(trace: SweepResult, width: number, height: number, pad = 32): ChartGeometry {
  if (trace.parameter.length === 0) throw new Error("empty sweep trace");
  const x0 = trace.parameter[0];
  const x1 = trace.parameter[trace.parameter.length - 1];
  const span = x1 > x0 ? x1 - x0 : 1;
  return {
    width,
    height,
    pad,
    // scores live in [-1, 1]; top of the plot is +1
    xFor: (angle) => pad + ((angle - x0) / span) * (width - 2 * pad),
    yFor: (score) => pad + ((1 - score) / 2) * (height - 2 * pad),
  };
}

export function classPolyline(trace: SweepResult, geom: ChartGeometry, column: number): [number, number][] {
  return trace.parameter.map((angle, i) => [geom.xFor(angle), geom.yFor(trace.protoshot[i][column])]);
}

export interface PredictionStep {
  fromAngle: number;
  toAngle: number;
  predicted: number;
}

// Runs of constant prediction; each run is one horizontal segment of the
// step line.
export function predictionSteps(trace: SweepResult): PredictionStep[] {
  const steps: PredictionStep[] = [];
  const n = trace.parameter.length;
  let start = 0;
  for (let i = 1; i <= n; i++) {
    if (i === n || trace.predicted[i] !== trace.predicted[start]) {
      steps.push({
        fromAngle: trace.parameter[start],
        toAngle: trace.parameter[i - 1],
        predicted: trace.predicted[start],
      });
      start = i;
    }
  }
  return steps;
}

export interface Highlight {
  index: number;
  angle: number;
  scores: number[]; // per class column, same order as trace.classes
  predicted: number;
}

// The slider's integer position n selects trace point n exactly.
export function highlightFor(trace: SweepResult, sliderIndex: number): Highlight {
  const n = trace.parameter.length;
  const index = Math.min(Math.max(Math.trunc(sliderIndex), 0), n - 1);
  return {
    index,
    angle: trace.parameter[index],
    scores: trace.classes.map((_, col) => trace.protoshot[index][col]),
    predicted: trace.predicted[index],
  };
}

export interface PreviewTransform {
  rotateDegrees: number;
  identity: boolean;
}

// The preview canvas rotates the raw query for display only; at 0 degrees
// it must show the query exactly as served.
export function previewRotation(angle: number): PreviewTransform {
  const deg = ((angle % 360) + 360) % 360;
  return { rotateDegrees: deg, identity: deg === 0 };
}
