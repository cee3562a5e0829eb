/**
 * Line-delimited JSON loop shared by the policy and metric providers:
 * one request per stdin line, one JSON response per line on stdout,
 * never anything non-JSON on stdout. A malformed request or a handler
 * failure emits one error object and exits nonzero.
 */

import * as readline from "node:readline";

export function runLineProtocol(handler: (request: any) => unknown): void {
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    const trimmed = line.trim();
    if (!trimmed) return;
    let request: unknown;
    try {
      request = JSON.parse(trimmed);
    } catch (err) {
      fail(`malformed request: ${(err as Error).message}`);
      return;
    }
    try {
      process.stdout.write(JSON.stringify(handler(request)) + "\n");
    } catch (err) {
      fail((err as Error).message);
    }
  });
}

function fail(message: string): void {
  process.stdout.write(JSON.stringify({ error: message }) + "\n");
  process.exit(1);
}
