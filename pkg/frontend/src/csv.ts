import * as fs from "fs";

export class CsvError extends Error {
  constructor(file: string, line: number, message: string) {
    super(`${file}:${line}: ${message}`);
  }
}

export interface CellGrid {
  nx: number;
  ny: number;
  /** column name -> row-major values, index i + nx * j */
  fields: Map<string, Float64Array>;
}

/** Parse a cell-field snapshot (header `i,j,<name>...`, one row per cell). */
export function readCellCsv(path: string): CellGrid {
  const lines = fs.readFileSync(path, "utf-8").split(/\r?\n/);
  if (lines.length === 0 || !lines[0].startsWith("i,j,")) {
    throw new CsvError(path, 1, `expected header "i,j,<fields>", got "${lines[0] ?? ""}"`);
  }
  const names = lines[0].split(",").slice(2);
  const rows: { i: number; j: number; vals: number[] }[] = [];
  let nx = 0;
  let ny = 0;
  for (let ln = 1; ln < lines.length; ln++) {
    const line = lines[ln].trim();
    if (!line) continue;
    const parts = line.split(",");
    if (parts.length !== 2 + names.length) {
      throw new CsvError(path, ln + 1, `expected ${2 + names.length} columns, got ${parts.length}`);
    }
    const i = Number(parts[0]);
    const j = Number(parts[1]);
    const vals = parts.slice(2).map(Number);
    if (!Number.isInteger(i) || !Number.isInteger(j) || vals.some((v) => Number.isNaN(v))) {
      throw new CsvError(path, ln + 1, `malformed numeric row "${line}"`);
    }
    rows.push({ i, j, vals });
    nx = Math.max(nx, i + 1);
    ny = Math.max(ny, j + 1);
  }
  if (rows.length !== nx * ny) {
    throw new CsvError(path, lines.length, `grid is ${nx} x ${ny} but file has ${rows.length} cells`);
  }
  const fields = new Map<string, Float64Array>(
    names.map((n) => [n, new Float64Array(nx * ny)]),
  );
  for (const row of rows) {
    names.forEach((n, k) => {
      fields.get(n)![row.i + nx * row.j] = row.vals[k];
    });
  }
  return { nx, ny, fields };
}

export interface RmseSeries {
  steps: number[];
  times: number[];
  rmseS: number[];
  rmseP: number[];
  rmseU: number[];
}

const RMSE_HEADER = "step,time,rmse_s,rmse_p,rmse_u";

export function readRmseCsv(path: string): RmseSeries {
  const lines = fs.readFileSync(path, "utf-8").split(/\r?\n/);
  if (lines[0] !== RMSE_HEADER) {
    throw new CsvError(path, 1, `expected header "${RMSE_HEADER}", got "${lines[0] ?? ""}"`);
  }
  const out: RmseSeries = { steps: [], times: [], rmseS: [], rmseP: [], rmseU: [] };
  for (let ln = 1; ln < lines.length; ln++) {
    const line = lines[ln].trim();
    if (!line) continue;
    const parts = line.split(",").map(Number);
    if (parts.length !== 5 || parts.some((v) => Number.isNaN(v))) {
      throw new CsvError(path, ln + 1, `malformed rmse row "${line}"`);
    }
    out.steps.push(parts[0]);
    out.times.push(parts[1]);
    out.rmseS.push(parts[2]);
    out.rmseP.push(parts[3]);
    out.rmseU.push(parts[4]);
  }
  return out;
}
