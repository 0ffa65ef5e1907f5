#!/usr/bin/env node
/**
 * qzlora-bridge: LoRA trainer wrapper + inference shim.
 *
 *   qzlora-bridge train --manifest m.cfg --dataset dir --output model [--stub]
 *   qzlora-bridge serve --port 8193 [--model-tag tag] [--stub]
 *
 * Exit codes: 0 ok, 2 manifest/validation error, 3 toolchain error.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { ManifestError } from "./manifest";
import { serve } from "./server";
import { ToolchainError, trainFromManifest } from "./train";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command("train", "train a LoRA from a manifest", (cmd) =>
      cmd
        .option("manifest", { type: "string", demandOption: true })
        .option("dataset", { type: "string", demandOption: true })
        .option("output", { type: "string", demandOption: true })
        .option("stub", { type: "boolean", default: false }),
    )
    .command("serve", "run the image-backend HTTP service", (cmd) =>
      cmd
        .option("port", { type: "number", default: 8193 })
        .option("model-tag", { type: "string", default: "sd-1.5" })
        .option("stub", { type: "boolean", default: false }),
    )
    .demandCommand(1)
    .strict()
    .parse();

  const command = argv._[0];
  if (command === "train") {
    try {
      const result = trainFromManifest(
        argv.manifest as string,
        argv.dataset as string,
        argv.output as string,
        { stub: Boolean(argv.stub) },
      );
      console.log(JSON.stringify(result, null, 2));
      return 0;
    } catch (err) {
      console.error(String(err));
      if (err instanceof ManifestError) return 2;
      if (err instanceof ToolchainError) return 3;
      return 3;
    }
  }

  if (command === "serve") {
    const port = argv.port as number;
    try {
      await serve(port, { stub: Boolean(argv.stub), modelTag: argv["model-tag"] as string });
    } catch (err) {
      console.error(`cannot listen on port ${port}: ${err}`);
      return 2;
    }
    console.log(`qzlora-bridge serving on :${port} (${argv.stub ? "stub" : "real"} mode)`);
    return new Promise(() => undefined); // run until killed
  }

  return 2;
}

main().then(
  (code) => {
    if (code !== 0) process.exitCode = code;
  },
  (err) => {
    console.error(String(err));
    process.exitCode = 3;
  },
);
