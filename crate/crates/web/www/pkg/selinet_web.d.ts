/* tslint:disable */
/* eslint-disable */

/**
 * Attention weights (49, row-major) for a painted salience grid. At
 * sharpness 0 every location gets 1/49; larger values concentrate the
 * weight on the brightest cells.
 */
export function attention_heatmap(cells: Float32Array, sharpness: number): Float32Array;

/**
 * Attention-pooled `[salience, column, row]`: the weighted centre of
 * attention on the grid plus the salience it collected.
 */
export function attention_pooled(cells: Float32Array, sharpness: number): Float32Array;

/**
 * Boosted emotion scores under the bundled emotion→sentiment mapping.
 */
export function boost_scores(emotions: Float32Array, sentiments: Float32Array, k: number, threshold: number): Float32Array;

export function emotion_names(): string[];

/**
 * Sentiment index of every emotion under the bundled mapping.
 */
export function emotion_sentiments(): Uint32Array;

/**
 * Int8 round trip of `values`: `[scale, zero_point, max_abs_error,
 * dequantized...]`.
 */
export function quantize_roundtrip(values: Float32Array): Float32Array;

/**
 * Weights in a bell shape plus one outlier: `n` values from a smooth
 * deterministic sequence spread over `±spread`, with the last replaced by
 * `outlier`. Widening the range with the outlier coarsens the grid for all.
 */
export function sample_weights(n: number, spread: number, outlier: number): Float32Array;

export function sentiment_names(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly attention_heatmap: (a: number, b: number, c: number) => [number, number, number, number];
    readonly attention_pooled: (a: number, b: number, c: number) => [number, number, number, number];
    readonly boost_scores: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly emotion_names: () => [number, number];
    readonly emotion_sentiments: () => [number, number, number, number];
    readonly quantize_roundtrip: (a: number, b: number) => [number, number, number, number];
    readonly sample_weights: (a: number, b: number, c: number) => [number, number];
    readonly sentiment_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
