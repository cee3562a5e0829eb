/**
 * Deterministic heuristic policy provider.
 *
 * Orders the available tasks by a fixed priority and picks the middle tool
 * of each pool (ceil(m/2), 1-indexed). Answers a full pipeline in
 * single-shot mode, the first remaining step in step-wise mode, and stop
 * when nothing is left. Deliberately simple: it exists to prove the
 * subprocess seam, not to make good decisions.
 */

import { runLineProtocol } from "./protocol";

const PRIORITY = ["lowlight", "dehaze", "derain", "desnow", "deblur", "denoise", "dejpeg"];

interface Available {
  task: string;
  tools: string[];
}

interface PolicyRequest {
  image: string;
  prompt: string;
  history: Array<{ kind: string; task: string; tool: string }>;
  available: Available[];
  mode: "single-shot" | "step-wise";
}

interface Step {
  task: string;
  tool: string;
}

export function decide(request: PolicyRequest): { action: string; steps?: Step[] } {
  const pools = new Map<string, string[]>();
  for (const entry of request.available ?? []) {
    if (entry.tools.length > 0) pools.set(entry.task, entry.tools);
  }
  const known = PRIORITY.filter((t) => pools.has(t));
  const extras = [...pools.keys()].filter((t) => !PRIORITY.includes(t)).sort();
  const ordered = [...known, ...extras];
  if (ordered.length === 0) return { action: "stop" };

  const steps = ordered.map((task) => {
    const tools = pools.get(task)!;
    return { task, tool: tools[Math.ceil(tools.length / 2) - 1] };
  });
  if (request.mode === "single-shot") return { action: "pipeline", steps };
  return { action: "step", steps: steps.slice(0, 1) };
}

if (require.main === module) {
  runLineProtocol((request) => {
    if (typeof request !== "object" || request === null || !("mode" in request)) {
      throw new Error("policy request needs a mode field");
    }
    return decide(request as PolicyRequest);
  });
}
