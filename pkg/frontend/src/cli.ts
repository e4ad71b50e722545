#!/usr/bin/env node
/**
 * plotkit - batch figures from ensflow run artifacts.
 *
 *   plotkit heatmap --in snapshot.csv --out fig.png [--field s|p|k]
 *                   [--diff other.csv] [--range lo,hi] [--cell-pixels N]
 *   plotkit rmse    --in run1/rmse.csv run2/rmse.csv --out rmse.svg
 *                   [--labels a b ...] [--variable s|p|u]
 */

import { plotHeatmap } from "./heatmap";
import { plotRmse } from "./rmse";

interface Parsed {
  positional: string[];
  flags: Map<string, string[]>;
}

function parseArgs(argv: string[]): Parsed {
  const positional: string[] = [];
  const flags = new Map<string, string[]>();
  let current: string | null = null;
  for (const arg of argv) {
    if (arg.startsWith("--")) {
      current = arg.slice(2);
      if (!flags.has(current)) flags.set(current, []);
    } else if (current) {
      flags.get(current)!.push(arg);
    } else {
      positional.push(arg);
    }
  }
  return { positional, flags };
}

function one(parsed: Parsed, name: string, fallback?: string): string {
  const vals = parsed.flags.get(name);
  if (!vals || vals.length === 0) {
    if (fallback !== undefined) return fallback;
    throw new Error(`missing required flag --${name}`);
  }
  if (vals.length > 1) throw new Error(`flag --${name} expects one value`);
  return vals[0];
}

function usage(): never {
  console.error(
    "usage:\n" +
      "  plotkit heatmap --in snapshot.csv --out fig.png [--field s|p|k] " +
      "[--diff other.csv] [--range lo,hi] [--cell-pixels N]\n" +
      "  plotkit rmse --in rmse.csv [rmse.csv ...] --out fig.svg " +
      "[--labels ...] [--variable s|p|u]",
  );
  process.exit(2);
}

export function main(argv: string[]): void {
  const [command, ...rest] = argv;
  if (!command) usage();
  const parsed = parseArgs(rest);

  if (command === "heatmap") {
    const rangeRaw = parsed.flags.get("range")?.[0];
    let range: [number, number] | undefined;
    if (rangeRaw) {
      const parts = rangeRaw.split(",").map(Number);
      if (parts.length !== 2 || parts.some(Number.isNaN)) {
        throw new Error(`--range expects "lo,hi", got "${rangeRaw}"`);
      }
      range = [parts[0], parts[1]];
    }
    plotHeatmap({
      input: one(parsed, "in"),
      output: one(parsed, "out"),
      field: one(parsed, "field", "s"),
      diffInput: parsed.flags.get("diff")?.[0],
      range,
      cellPixels: Number(one(parsed, "cell-pixels", "8")),
    });
    return;
  }

  if (command === "rmse") {
    const inputs = parsed.flags.get("in") ?? [];
    const variable = one(parsed, "variable", "s");
    if (variable !== "s" && variable !== "p" && variable !== "u") {
      throw new Error(`--variable expects s, p or u, got "${variable}"`);
    }
    plotRmse({
      inputs,
      output: one(parsed, "out"),
      labels: parsed.flags.get("labels"),
      variable,
    });
    return;
  }

  usage();
}

if (require.main === module) {
  try {
    main(process.argv.slice(2));
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(1);
  }
}
