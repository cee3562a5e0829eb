/**
 * External-tool reference implementation: copies the input image to the
 * output path unchanged. Usage: identityTool.js <input> <output>
 * Exit 0 on success, 1 on any I/O failure.
 */

import * as fs from "node:fs";

function main(argv: string[]): number {
  if (argv.length !== 2) {
    process.stderr.write("usage: identityTool <input.png> <output.png>\n");
    return 1;
  }
  const [input, output] = argv;
  try {
    fs.copyFileSync(input, output);
    return 0;
  } catch (err) {
    process.stderr.write(`copy failed: ${(err as Error).message}\n`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
