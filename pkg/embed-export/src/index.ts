export { EncoderError, cosine, encode, modelDim, normalizePhrase } from "./encoder";
export { Manifest, ManifestError, parseManifest } from "./manifest";
export { ExportResult, exportEmbeddings, exportFromFile } from "./export";
export { TableError, fmt9, parseTable, renderTable } from "./table";
