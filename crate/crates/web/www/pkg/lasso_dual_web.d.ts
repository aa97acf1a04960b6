/* tslint:disable */
/* eslint-disable */

/**
 * Pretty-printed config of a built-in scenario.
 */
export function builtin_config(name: string): string;

/**
 * Names of the built-in scenarios, newline separated.
 */
export function builtin_names(): string;

/**
 * Runs the config's `estimate` task and returns the result record.
 */
export function estimate(config_json: string): string;

/**
 * Runs the config's `path` task and returns the result record.
 */
export function path(config_json: string): string;

/**
 * Solves at `mu_frac * mu_max` and returns amplitudes and dual magnitudes per grid angle.
 */
export function spectrum(config_json: string, mu_frac: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly builtin_config: (a: number, b: number) => [number, number, number, number];
    readonly builtin_names: () => [number, number];
    readonly estimate: (a: number, b: number) => [number, number, number, number];
    readonly path: (a: number, b: number) => [number, number, number, number];
    readonly spectrum: (a: number, b: number, c: number) => [number, number, number, number];
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
