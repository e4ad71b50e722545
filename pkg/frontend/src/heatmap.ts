import * as fs from "fs";

import { FIELD_RANGES, normalize, viridis } from "./color";
import { CellGrid, readCellCsv } from "./csv";
import { encodePng } from "./png";

export interface HeatmapJob {
  input: string;
  output: string;
  field: string;
  /** second snapshot for an |a - b| error map */
  diffInput?: string;
  range?: [number, number];
  cellPixels?: number;
}

function fieldValues(grid: CellGrid, field: string, path: string): Float64Array {
  const values = grid.fields.get(field);
  if (!values) {
    const have = [...grid.fields.keys()].join(", ");
    throw new Error(`${path}: no field "${field}" (have: ${have})`);
  }
  return values;
}

export function renderCells(
  nx: number,
  ny: number,
  values: Float64Array,
  range: [number, number],
  cellPixels: number,
): { width: number; height: number; rgb: Uint8Array } {
  const width = nx * cellPixels;
  const height = ny * cellPixels;
  const rgb = new Uint8Array(width * height * 3);
  for (let j = 0; j < ny; j++) {
    for (let i = 0; i < nx; i++) {
      const [r, g, b] = viridis(normalize(values[i + nx * j], range[0], range[1]));
      // j counts upward from the domain bottom; image rows go top-down
      const top = (ny - 1 - j) * cellPixels;
      for (let py = 0; py < cellPixels; py++) {
        let off = ((top + py) * width + i * cellPixels) * 3;
        for (let px = 0; px < cellPixels; px++) {
          rgb[off] = r;
          rgb[off + 1] = g;
          rgb[off + 2] = b;
          off += 3;
        }
      }
    }
  }
  return { width, height, rgb };
}

/** Render one snapshot field (or the |a - b| error map) to a PNG file. */
export function plotHeatmap(job: HeatmapJob): void {
  const grid = readCellCsv(job.input);
  let values = fieldValues(grid, job.field, job.input);
  let range = job.range ?? FIELD_RANGES[job.field] ?? [0, 1];
  if (job.diffInput) {
    const other = readCellCsv(job.diffInput);
    if (other.nx !== grid.nx || other.ny !== grid.ny) {
      throw new Error(
        `grid mismatch: ${job.input} is ${grid.nx}x${grid.ny}, ` +
          `${job.diffInput} is ${other.nx}x${other.ny}`,
      );
    }
    const b = fieldValues(other, job.field, job.diffInput);
    const diff = new Float64Array(values.length);
    for (let k = 0; k < diff.length; k++) diff[k] = Math.abs(values[k] - b[k]);
    values = diff;
    range = job.range ?? [0, Math.max(...diff, 1e-12)];
  }
  const { width, height, rgb } = renderCells(
    grid.nx,
    grid.ny,
    values,
    range,
    job.cellPixels ?? 8,
  );
  fs.writeFileSync(job.output, encodePng(width, height, rgb));
}
