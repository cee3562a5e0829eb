/**
 * External-metric reference implementation: mean squared error on [0, 1]
 * intensities, registered lower-better in the harness. One request per
 * stdin line: {"restored": path, "reference": path, "metric": name};
 * answer: {"value": mse}. Dimension mismatch or unreadable input emits an
 * error object and exits nonzero.
 */

import * as fs from "node:fs";

import { decodePng, toRgb } from "./png";
import { runLineProtocol } from "./protocol";

interface MetricRequest {
  restored: string;
  reference: string;
  metric: string;
}

export function mse(restoredPath: string, referencePath: string): number {
  const a = decodePng(fs.readFileSync(restoredPath));
  const b = decodePng(fs.readFileSync(referencePath));
  if (a.width !== b.width || a.height !== b.height) {
    throw new Error(
      `dimension mismatch: ${a.width}x${a.height} vs ${b.width}x${b.height}`
    );
  }
  const ra = toRgb(a);
  const rb = toRgb(b);
  let total = 0;
  for (let i = 0; i < ra.length; i++) {
    const d = (ra[i] - rb[i]) / 255;
    total += d * d;
  }
  return total / ra.length;
}

if (require.main === module) {
  runLineProtocol((request) => {
    const req = request as MetricRequest;
    if (!req.restored || !req.reference) {
      throw new Error("metric request needs restored and reference paths");
    }
    return { value: mse(req.restored, req.reference) };
  });
}
