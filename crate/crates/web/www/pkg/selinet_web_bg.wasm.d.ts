/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const attention_heatmap: (a: number, b: number, c: number) => [number, number, number, number];
export const attention_pooled: (a: number, b: number, c: number) => [number, number, number, number];
export const boost_scores: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const emotion_names: () => [number, number];
export const emotion_sentiments: () => [number, number, number, number];
export const quantize_roundtrip: (a: number, b: number) => [number, number, number, number];
export const sample_weights: (a: number, b: number, c: number) => [number, number];
export const sentiment_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
