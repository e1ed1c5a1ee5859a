/* tslint:disable */
/* eslint-disable */

/**
 * Simulate `n` transitions, select a partition, and return the fitted and
 * true next-state masses on a coarse board.
 */
export function fit_heatmap(name: string, n: number, seed: number, depth: number, penalty_l: number): string;

/**
 * Exact mixing coefficients of a random fully connected chain against the
 * geometric bound.
 */
export function mixing_curve(eps0: number, kernel_seed: number, lags: number): string;

/**
 * Size of the selected partition and its loss for each penalty constant.
 */
export function penalty_sweep(name: string, n: number, seed: number, depth: number, ls: Float64Array): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly fit_heatmap: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly mixing_curve: (a: number, b: number, c: number) => [number, number];
    readonly penalty_sweep: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
    readonly __wbindgen_exn_store: (a: number) => void;
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
