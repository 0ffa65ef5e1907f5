import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { describe, expect, it } from "vitest";

import { ManifestError, parseManifest, validateDataset } from "../src/manifest";

const VALID = `topic_id = gujia
condition = qzlora-top-2/realistic
dataset_dir = DATASET
instance_token = gujia
epochs = 20
num_repeats = 5
batch_size = 1
learning_rate = 0.0001
optimizer = AdamW8bit
resolution = 512
base_model = sd-1.5
output = OUTPUT
`;

function tempDataset(pairs: number, orphanImages = 0): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "bridge-ds-"));
  for (let i = 0; i < pairs; i++) {
    fs.writeFileSync(path.join(dir, `${i}_img.png`), Buffer.from([0x89, i]));
    fs.writeFileSync(path.join(dir, `${i}_img.txt`), "caption");
  }
  for (let i = 0; i < orphanImages; i++) {
    fs.writeFileSync(path.join(dir, `orphan${i}.png`), Buffer.from([1]));
  }
  return dir;
}

describe("parseManifest", () => {
  it("parses every field with types", () => {
    const manifest = parseManifest(VALID);
    expect(manifest.topicId).toBe("gujia");
    expect(manifest.epochs).toBe(20);
    expect(manifest.numRepeats).toBe(5);
    expect(manifest.batchSize).toBe(1);
    expect(manifest.learningRate).toBeCloseTo(1e-4, 12);
    expect(manifest.resolution).toBe(512);
    expect(manifest.baseModel).toBe("sd-1.5");
  });

  it("rejects missing keys", () => {
    expect(() => parseManifest(VALID.replace(/^epochs.*\n/m, ""))).toThrow(ManifestError);
  });

  it("rejects nonpositive hyperparameters", () => {
    expect(() => parseManifest(VALID.replace("epochs = 20", "epochs = 0"))).toThrow(ManifestError);
    expect(() =>
      parseManifest(VALID.replace("learning_rate = 0.0001", "learning_rate = -1")),
    ).toThrow(ManifestError);
  });

  it("rejects malformed lines", () => {
    expect(() => parseManifest(VALID + "dangling\n")).toThrow(ManifestError);
  });
});

describe("validateDataset", () => {
  it("accepts matched pairs", () => {
    const dir = tempDataset(3);
    const manifest = parseManifest(VALID.replace("DATASET", dir));
    expect(validateDataset(manifest, dir)).toEqual({ imageCount: 3, captionCount: 3 });
  });

  it("rejects count mismatches", () => {
    const dir = tempDataset(3, 1);
    const manifest = parseManifest(VALID.replace("DATASET", dir));
    expect(() => validateDataset(manifest, dir)).toThrow(/3 captions/);
  });

  it("rejects a dataset dir that disagrees with the manifest", () => {
    const dir = tempDataset(2);
    const other = tempDataset(2);
    const manifest = parseManifest(VALID.replace("DATASET", dir));
    expect(() => validateDataset(manifest, other)).toThrow(/does not match/);
  });
});
