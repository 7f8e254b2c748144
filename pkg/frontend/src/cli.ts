#!/usr/bin/env node
/**
 * Embedding-export command line tool.
 *
 * Reads a dataset JSON file, collects the vocabulary of its entity
 * texts, and writes the subset of a word2vec-text embedding table that
 * covers it. Tokens missing from the source table are reported on
 * stderr and omitted from the output, so the result always loads
 * cleanly into the trainer.
 *
 * Usage:
 *   embed-export --dataset data.json --model source.vec --out subset.vec
 */

import { readFileSync, writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";
import { parseArgs } from "node:util";

import {
  FormatError,
  datasetVocabulary,
  formatEmbeddingText,
  loadDataset,
  parseEmbeddingText,
  subsetTable,
} from "./format.js";

const USAGE =
  "usage: embed-export --dataset <data.json> --model <table.vec> --out <subset.vec> [--quiet]";

export interface ExportStats {
  vocabulary: number;
  written: number;
  missing: string[];
}

export function runExport(
  datasetPath: string,
  modelPath: string,
  outPath: string,
): ExportStats {
  const dataset = loadDataset(readFileSync(datasetPath, "utf-8"));
  const vocabulary = datasetVocabulary(dataset);
  const source = parseEmbeddingText(readFileSync(modelPath, "utf-8"));
  const { table, missing } = subsetTable(source, vocabulary);
  writeFileSync(outPath, formatEmbeddingText(table), "utf-8");
  return { vocabulary: vocabulary.length, written: table.tokens.length, missing };
}

export function main(argv: string[]): number {
  let values: { dataset?: string; model?: string; out?: string; quiet?: boolean; help?: boolean };
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        dataset: { type: "string" },
        model: { type: "string" },
        out: { type: "string" },
        quiet: { type: "boolean", default: false },
        help: { type: "boolean", short: "h", default: false },
      },
      allowPositionals: false,
    }));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    console.error(USAGE);
    return 2;
  }
  if (values.help) {
    console.log(USAGE);
    return 0;
  }
  if (!values.dataset || !values.model || !values.out) {
    console.error("error: --dataset, --model and --out are all required");
    console.error(USAGE);
    return 2;
  }

  try {
    const stats = runExport(values.dataset, values.model, values.out);
    for (const token of stats.missing) {
      console.warn(`warning: token ${JSON.stringify(token)} not in source table; omitted`);
    }
    if (!values.quiet) {
      console.log(
        `wrote ${stats.written}/${stats.vocabulary} vocabulary tokens to ${values.out}` +
          (stats.missing.length ? ` (${stats.missing.length} missing)` : ""),
      );
    }
    return 0;
  } catch (err) {
    if (err instanceof FormatError || (err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
