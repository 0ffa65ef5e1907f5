/**
 * Trainer wrapper honoring the pipeline command contract. Stub mode validates
 * the manifest/dataset and writes a placeholder model file; real mode shells
 * out to the fine-tuning toolchain configured via QZLORA_BRIDGE_TRAIN_CMD
 * (a command template with {manifest}, {dataset_dir}, {output} placeholders).
 */

import { spawnSync } from "child_process";
import * as fs from "fs";
import * as path from "path";

import { loadManifest, ManifestError, validateDataset } from "./manifest";

export const TRAIN_CMD_ENV = "QZLORA_BRIDGE_TRAIN_CMD";

export interface BridgeResult {
  exitCode: number;
  outputModelPath: string;
  wallTime: number;
  toolchainVersions: Record<string, string>;
}

export class ToolchainError extends Error {}

function versions(): Record<string, string> {
  return { node: process.version, "qzlora-bridge": "0.1.0" };
}

export function trainFromManifest(
  manifestPath: string,
  datasetDir: string,
  output: string,
  opts: { stub: boolean },
): BridgeResult {
  const start = Date.now();
  const manifest = loadManifest(manifestPath);
  validateDataset(manifest, datasetDir);
  if (path.resolve(output) !== path.resolve(manifest.output)) {
    throw new ManifestError(
      `output ${output} does not match manifest output ${manifest.output}`,
    );
  }
  fs.mkdirSync(path.dirname(path.resolve(output)), { recursive: true });

  if (opts.stub) {
    const summary = validateDataset(manifest, datasetDir);
    const placeholder = {
      model_format: "qzlora-bridge-stub-lora-v1",
      base_model: manifest.baseModel,
      instance_token: manifest.instanceToken,
      image_count: summary.imageCount,
      epochs: manifest.epochs,
    };
    fs.writeFileSync(output, JSON.stringify(placeholder, null, 2) + "\n", "utf8");
  } else {
    const template = process.env[TRAIN_CMD_ENV];
    if (!template) {
      throw new ToolchainError(
        `real mode needs ${TRAIN_CMD_ENV} (command template with {manifest}, {dataset_dir}, {output})`,
      );
    }
    for (const placeholder of ["{manifest}", "{dataset_dir}", "{output}"]) {
      if (!template.includes(placeholder)) {
        throw new ToolchainError(`${TRAIN_CMD_ENV} missing placeholder ${placeholder}`);
      }
    }
    const argv = template
      .split(/\s+/)
      .filter(Boolean)
      .map((token) =>
        token
          .replace("{manifest}", manifestPath)
          .replace("{dataset_dir}", datasetDir)
          .replace("{output}", output),
      );
    const run = spawnSync(argv[0], argv.slice(1), { stdio: "inherit" });
    if (run.error) throw new ToolchainError(String(run.error));
    if (run.status !== 0) throw new ToolchainError(`toolchain exited ${run.status}`);
  }

  // Contract: exit 0 implies the model file exists and is nonempty.
  const stats = fs.statSync(output, { throwIfNoEntry: false });
  if (!stats || stats.size === 0) {
    throw new ToolchainError(`no model produced at ${output}`);
  }
  return {
    exitCode: 0,
    outputModelPath: output,
    wallTime: (Date.now() - start) / 1000,
    toolchainVersions: versions(),
  };
}
