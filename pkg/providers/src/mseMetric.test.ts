import assert from "node:assert/strict";
import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { test } from "node:test";

import { mse } from "./mseMetric";
import { encodePng } from "./png";

const SCRIPT = path.join(__dirname, "mseMetric.js");

function writePng(dir: string, name: string, w: number, h: number, value: number): string {
  const p = path.join(dir, name);
  fs.writeFileSync(p, encodePng(w, h, new Uint8Array(w * h * 3).fill(value)));
  return p;
}

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "mse-metric-"));
}

test("identical images give zero", () => {
  const dir = tmpdir();
  const a = writePng(dir, "a.png", 8, 8, 120);
  assert.equal(mse(a, a), 0);
});

test("black vs white gives one", () => {
  const dir = tmpdir();
  const black = writePng(dir, "black.png", 8, 8, 0);
  const white = writePng(dir, "white.png", 8, 8, 255);
  assert.ok(Math.abs(mse(black, white) - 1.0) < 1e-12);
});

test("dimension mismatch throws", () => {
  const dir = tmpdir();
  const a = writePng(dir, "a.png", 8, 8, 0);
  const b = writePng(dir, "b.png", 9, 8, 0);
  assert.throws(() => mse(a, b), /dimension mismatch/);
});

test("subprocess protocol round-trips 100 requests", () => {
  const dir = tmpdir();
  const black = writePng(dir, "black.png", 8, 8, 0);
  const white = writePng(dir, "white.png", 8, 8, 255);
  const req = JSON.stringify({ restored: black, reference: white, metric: "mse" });
  const proc = spawnSync(process.execPath, [SCRIPT], {
    input: Array(100).fill(req).join("\n") + "\n",
    encoding: "utf8",
  });
  assert.equal(proc.status, 0);
  const replies = proc.stdout.trim().split("\n");
  assert.equal(replies.length, 100);
  for (const line of replies) {
    assert.ok(Math.abs(JSON.parse(line).value - 1.0) < 1e-12);
  }
});

test("mismatch over the protocol emits error JSON and exits nonzero", () => {
  const dir = tmpdir();
  const a = writePng(dir, "a.png", 8, 8, 0);
  const b = writePng(dir, "b.png", 10, 8, 0);
  const proc = spawnSync(process.execPath, [SCRIPT], {
    input: JSON.stringify({ restored: a, reference: b, metric: "mse" }) + "\n",
    encoding: "utf8",
  });
  assert.notEqual(proc.status, 0);
  const obj = JSON.parse(proc.stdout.trim().split("\n")[0]);
  assert.match(obj.error, /dimension mismatch/);
});
