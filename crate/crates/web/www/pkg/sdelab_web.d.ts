/* tslint:disable */
/* eslint-disable */

/**
 * Probability-flow paths from prior draws to data: `steps + 1` rows of
 * `(t, x_1 … x_paths)`, starting at `t = t_max`.
 */
export function flowPaths(kind: string, paths: number, steps: number, seed: number, right_weight: number, half_gap: number): Float64Array;

/**
 * Rows of `(t, discrete_std, continuous_std, discrete_mean_coeff,
 * continuous_mean_coeff)`, one per discrete scale.
 */
export function kernelCurves(kind: string, steps: number): Float64Array;

/**
 * PC samples of a 1D two-mode mixture binned on `[-gap-2, gap+2]`:
 * `bins` centers, then sampled density, then exact density.
 */
export function pcHistogram(kind: string, steps: number, corrector_steps: number, snr: number, n: number, seed: number, right_weight: number, half_gap: number, bins: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly flowPaths: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly kernelCurves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly pcHistogram: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
