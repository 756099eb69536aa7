/**
 * The embedding-table file format:
 *
 *     dim N
 *     name<TAB>f1 f2 ... fN
 *
 * floats printed with 9 significant digits. The reader here exists for
 * round-trip tests; the format's primary consumer parses it elsewhere.
 */

export class TableError extends Error {}

/** A float with 9 significant digits, trailing zeros trimmed. */
export function fmt9(x: number): string {
  if (!Number.isFinite(x)) {
    throw new TableError(`non-finite value in table: ${x}`);
  }
  if (x === 0) {
    return "0";
  }
  let s = x.toPrecision(9);
  if (s.includes("e")) {
    const [mant, exp] = s.split("e");
    const m = mant.includes(".") ? mant.replace(/0+$/, "").replace(/\.$/, "") : mant;
    return m + "e" + exp;
  }
  if (s.includes(".")) {
    s = s.replace(/0+$/, "").replace(/\.$/, "");
  }
  return s;
}

export function renderTable(rows: Array<[string, number[]]>, dim: number): string {
  const lines = [`dim ${dim}`];
  for (const [name, vec] of rows) {
    if (name === "" || /[\t\n\r]/.test(name)) {
      throw new TableError(`bad row name: ${JSON.stringify(name)}`);
    }
    if (vec.length !== dim) {
      throw new TableError(`row ${name} has ${vec.length} values, expected ${dim}`);
    }
    lines.push(name + "\t" + vec.map(fmt9).join(" "));
  }
  return lines.join("\n") + "\n";
}

export function parseTable(text: string): { dim: number; rows: Map<string, number[]> } {
  const lines = text.split("\n");
  const header = /^dim (\d+)$/.exec(lines[0] ?? "");
  if (!header) {
    throw new TableError("missing dim header");
  }
  const dim = Number(header[1]);
  const rows = new Map<string, number[]>();
  for (const line of lines.slice(1)) {
    if (line === "") {
      continue;
    }
    const tab = line.indexOf("\t");
    if (tab < 0) {
      throw new TableError(`row without a tab: ${line.slice(0, 40)}`);
    }
    const name = line.slice(0, tab);
    const vec = line
      .slice(tab + 1)
      .split(" ")
      .map(Number);
    if (vec.length !== dim || vec.some((x) => !Number.isFinite(x))) {
      throw new TableError(`bad row for ${name}`);
    }
    if (rows.has(name)) {
      throw new TableError(`duplicate row ${name}`);
    }
    rows.set(name, vec);
  }
  return { dim, rows };
}
