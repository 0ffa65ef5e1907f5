/**
 * Flat `key = value` training manifest: parsing and dataset validation.
 * The key set mirrors the pipeline's manifest writer exactly.
 */

import * as fs from "fs";
import * as path from "path";

export interface TrainingManifest {
  topicId: string;
  condition: string;
  datasetDir: string;
  instanceToken: string;
  epochs: number;
  numRepeats: number;
  batchSize: number;
  learningRate: number;
  optimizer: string;
  resolution: number;
  baseModel: string;
  output: string;
}

export class ManifestError extends Error {}

const REQUIRED_KEYS = [
  "topic_id", "condition", "dataset_dir", "instance_token", "epochs",
  "num_repeats", "batch_size", "learning_rate", "optimizer", "resolution",
  "base_model", "output",
] as const;

const IMAGE_SUFFIXES = new Set([".jpg", ".jpeg", ".png", ".webp"]);

function parsePositiveInt(values: Record<string, string>, key: string): number {
  const parsed = Number(values[key]);
  if (!Number.isInteger(parsed) || parsed <= 0) {
    throw new ManifestError(`${key} must be a positive integer, got "${values[key]}"`);
  }
  return parsed;
}

export function parseManifest(text: string): TrainingManifest {
  const values: Record<string, string> = {};
  for (const rawLine of text.split(/\r?\n/)) {
    const line = rawLine.trim();
    if (!line || line.startsWith("#")) continue;
    const eq = line.indexOf("=");
    if (eq < 0) throw new ManifestError(`malformed manifest line: "${line}"`);
    values[line.slice(0, eq).trim()] = line.slice(eq + 1).trim();
  }
  const missing = REQUIRED_KEYS.filter((key) => !(key in values));
  if (missing.length) {
    throw new ManifestError(`manifest missing keys: ${missing.join(", ")}`);
  }
  const learningRate = Number(values.learning_rate);
  if (!Number.isFinite(learningRate) || learningRate <= 0) {
    throw new ManifestError(`learning_rate must be positive, got "${values.learning_rate}"`);
  }
  return {
    topicId: values.topic_id,
    condition: values.condition,
    datasetDir: values.dataset_dir,
    instanceToken: values.instance_token,
    epochs: parsePositiveInt(values, "epochs"),
    numRepeats: parsePositiveInt(values, "num_repeats"),
    batchSize: parsePositiveInt(values, "batch_size"),
    learningRate,
    optimizer: values.optimizer,
    resolution: parsePositiveInt(values, "resolution"),
    baseModel: values.base_model,
    output: values.output,
  };
}

export function loadManifest(manifestPath: string): TrainingManifest {
  let text: string;
  try {
    text = fs.readFileSync(manifestPath, "utf8");
  } catch (err) {
    throw new ManifestError(`cannot read manifest ${manifestPath}: ${err}`);
  }
  return parseManifest(text);
}

export interface DatasetSummary {
  imageCount: number;
  captionCount: number;
}

/** The dataset must hold matched image/caption pairs and agree with the
 * manifest's dataset_dir. */
export function validateDataset(manifest: TrainingManifest, datasetDir: string): DatasetSummary {
  if (path.resolve(datasetDir) !== path.resolve(manifest.datasetDir)) {
    throw new ManifestError(
      `dataset dir ${datasetDir} does not match manifest dataset_dir ${manifest.datasetDir}`,
    );
  }
  let entries: string[];
  try {
    entries = fs.readdirSync(datasetDir);
  } catch (err) {
    throw new ManifestError(`cannot read dataset dir ${datasetDir}: ${err}`);
  }
  let imageCount = 0;
  let captionCount = 0;
  for (const name of entries) {
    const ext = path.extname(name).toLowerCase();
    if (IMAGE_SUFFIXES.has(ext)) imageCount++;
    else if (ext === ".txt") captionCount++;
  }
  if (imageCount === 0 || imageCount !== captionCount) {
    throw new ManifestError(
      `dataset mismatch in ${datasetDir}: ${imageCount} images vs ${captionCount} captions`,
    );
  }
  return { imageCount, captionCount };
}
