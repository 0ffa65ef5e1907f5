import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { describe, expect, it } from "vitest";

import { ManifestError } from "../src/manifest";
import { trainFromManifest } from "../src/train";

function workspace(pairs: number): { manifestPath: string; dataset: string; output: string } {
  const root = fs.mkdtempSync(path.join(os.tmpdir(), "bridge-train-"));
  const dataset = path.join(root, "5_gujia");
  fs.mkdirSync(dataset);
  for (let i = 0; i < pairs; i++) {
    fs.writeFileSync(path.join(dataset, `${i}_img.png`), Buffer.from([0x89, i]));
    fs.writeFileSync(path.join(dataset, `${i}_img.txt`), "caption");
  }
  const output = path.join(root, "models", "out.safetensors");
  const manifestPath = path.join(root, "manifest.cfg");
  fs.writeFileSync(
    manifestPath,
    [
      "topic_id = gujia",
      "condition = qzlora-top-2/realistic",
      `dataset_dir = ${dataset}`,
      "instance_token = gujia",
      "epochs = 20",
      "num_repeats = 5",
      "batch_size = 1",
      "learning_rate = 0.0001",
      "optimizer = AdamW8bit",
      "resolution = 512",
      "base_model = sd-1.5",
      `output = ${output}`,
      "",
    ].join("\n"),
  );
  return { manifestPath, dataset, output };
}

describe("trainFromManifest (stub mode)", () => {
  it("writes a placeholder model and reports success", () => {
    const { manifestPath, dataset, output } = workspace(2);
    const result = trainFromManifest(manifestPath, dataset, output, { stub: true });
    expect(result.exitCode).toBe(0);
    expect(fs.statSync(output).size).toBeGreaterThan(0);
    const model = JSON.parse(fs.readFileSync(output, "utf8"));
    expect(model.model_format).toBe("qzlora-bridge-stub-lora-v1");
    expect(model.image_count).toBe(2);
    expect(result.toolchainVersions.node).toBe(process.version);
  });

  it("rejects dataset count mismatches", () => {
    const { manifestPath, dataset, output } = workspace(2);
    fs.writeFileSync(path.join(dataset, "orphan.png"), Buffer.from([1]));
    expect(() => trainFromManifest(manifestPath, dataset, output, { stub: true })).toThrow(
      ManifestError,
    );
    expect(fs.existsSync(output)).toBe(false);
  });

  it("rejects an output path that disagrees with the manifest", () => {
    const { manifestPath, dataset } = workspace(1);
    expect(() =>
      trainFromManifest(manifestPath, dataset, "/tmp/elsewhere.safetensors", { stub: true }),
    ).toThrow(ManifestError);
  });
});
