/**
 * Embedding-table text format and dataset vocabulary extraction.
 *
 * The table format is the word2vec text layout: a header line `N D`
 * followed by one `token v1 ... vD` line per token, single-space
 * separated, UTF-8. Vector values are kept as their original strings
 * so that subsetting a table never perturbs a number.
 */

export class FormatError extends Error {}

export interface RawEntity {
  box: [number, number, number, number];
  text: string;
  class?: string | null;
}

export interface RawDocument {
  id: string;
  width: number;
  height: number;
  entities: RawEntity[];
  links: unknown[];
  regions?: unknown[];
}

export interface Dataset {
  documents: RawDocument[];
}

export interface EmbeddingTable {
  dim: number;
  tokens: string[];
  /** token -> raw value strings, each of length `dim` */
  rows: Map<string, string[]>;
}

/** Lowercase whitespace tokenization; must stay in sync with the trainer. */
export function tokenize(text: string): string[] {
  return text.toLowerCase().split(/\s+/).filter((t) => t.length > 0);
}

export function loadDataset(content: string): Dataset {
  let parsed: unknown;
  try {
    parsed = JSON.parse(content);
  } catch (err) {
    throw new FormatError(`dataset is not valid JSON: ${(err as Error).message}`);
  }
  const documents = (parsed as { documents?: unknown }).documents;
  if (!Array.isArray(documents)) {
    throw new FormatError("dataset must be an object with a 'documents' array");
  }
  for (const doc of documents) {
    const d = doc as RawDocument;
    if (typeof d.id !== "string" || !Array.isArray(d.entities)) {
      throw new FormatError("each document needs an 'id' and an 'entities' array");
    }
    for (const entity of d.entities) {
      if (typeof entity.text !== "string") {
        throw new FormatError(`document ${d.id}: every entity needs a 'text' string`);
      }
    }
  }
  return { documents: documents as RawDocument[] };
}

/** Sorted unique tokens over every entity text in the dataset. */
export function datasetVocabulary(dataset: Dataset): string[] {
  const seen = new Set<string>();
  for (const doc of dataset.documents) {
    for (const entity of doc.entities) {
      for (const token of tokenize(entity.text)) {
        seen.add(token);
      }
    }
  }
  return [...seen].sort();
}

export function parseEmbeddingText(content: string): EmbeddingTable {
  const lines = content.split("\n");
  if (lines.length > 0 && lines[lines.length - 1] === "") {
    lines.pop();
  }
  if (lines.length === 0) {
    throw new FormatError("empty embedding file");
  }
  const header = lines[0].trim().split(/\s+/);
  if (header.length !== 2) {
    throw new FormatError(`malformed header ${JSON.stringify(lines[0])}, expected 'N D'`);
  }
  const count = Number(header[0]);
  const dim = Number(header[1]);
  if (!Number.isInteger(count) || !Number.isInteger(dim) || count < 0 || dim < 1) {
    throw new FormatError(`header declares invalid sizes ${lines[0]}`);
  }

  const rows = new Map<string, string[]>();
  const tokens: string[] = [];
  for (let i = 1; i < lines.length; i++) {
    const parts = lines[i].split(" ");
    if (parts.length !== dim + 1) {
      throw new FormatError(`line ${i + 1}: expected ${dim + 1} fields, got ${parts.length}`);
    }
    const token = parts[0];
    const values = parts.slice(1);
    for (const v of values) {
      if (!Number.isFinite(Number(v)) || v.trim() === "") {
        throw new FormatError(`line ${i + 1}: non-numeric vector entry ${JSON.stringify(v)}`);
      }
    }
    if (rows.has(token)) {
      throw new FormatError(`line ${i + 1}: duplicate token ${JSON.stringify(token)}`);
    }
    rows.set(token, values);
    tokens.push(token);
  }
  if (rows.size !== count) {
    throw new FormatError(`header declares ${count} tokens but ${rows.size} were read`);
  }
  return { dim, tokens, rows };
}

export interface SubsetResult {
  table: EmbeddingTable;
  /** vocabulary tokens absent from the source table, sorted */
  missing: string[];
}

/** Restrict a table to `vocabulary`; tokens keep the source value strings. */
export function subsetTable(source: EmbeddingTable, vocabulary: string[]): SubsetResult {
  const tokens: string[] = [];
  const missing: string[] = [];
  const rows = new Map<string, string[]>();
  for (const token of [...vocabulary].sort()) {
    const row = source.rows.get(token);
    if (row === undefined) {
      missing.push(token);
    } else {
      tokens.push(token);
      rows.set(token, row);
    }
  }
  return { table: { dim: source.dim, tokens, rows }, missing };
}

export function formatEmbeddingText(table: EmbeddingTable): string {
  const lines = [`${table.tokens.length} ${table.dim}`];
  for (const token of table.tokens) {
    const row = table.rows.get(token);
    if (row === undefined || row.length !== table.dim) {
      throw new FormatError(`token ${JSON.stringify(token)} has no ${table.dim}-value row`);
    }
    lines.push(`${token} ${row.join(" ")}`);
  }
  return lines.join("\n") + "\n";
}
