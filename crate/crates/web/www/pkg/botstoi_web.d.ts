/* tslint:disable */
/* eslint-disable */

/**
 * Clean and degraded audio with their STOI label.
 */
export class Degraded {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly clean: Float32Array;
    readonly degraded: Float32Array;
    readonly sample_rate: number;
    readonly snr_db: number;
    readonly stoi: number;
}

/**
 * Synthesises three seconds of speech, applies one degradation and scores it.
 *
 * `kind` is a noise colour (`white`, `pink`, `brown`, `babble`, ...) with
 * `amount` as SNR in dB, `reverb` with `amount` as T60 in seconds, `radio`
 * with `amount` as SNR, `clipping` with `amount` as the clip level relative
 * to the peak, or `telephone`.
 */
export function degrade_and_score(kind: string, amount: number, seed: bigint): Degraded;

/**
 * Log-magnitude spectrogram, row-major `frames x bins` with `bins` from
 * [`spectrogram_bins`].
 */
export function spectrogram(samples: Float32Array): Float32Array;

export function spectrogram_bins(): number;

/**
 * STOI of one utterance in `color` noise at each SNR in `snrs_db`.
 */
export function stoi_vs_snr(color: string, snrs_db: Float64Array, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_degraded_free: (a: number, b: number) => void;
    readonly degrade_and_score: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly degraded_clean: (a: number) => [number, number];
    readonly degraded_degraded: (a: number) => [number, number];
    readonly degraded_sample_rate: (a: number) => number;
    readonly degraded_snr_db: (a: number) => number;
    readonly degraded_stoi: (a: number) => number;
    readonly spectrogram: (a: number, b: number) => [number, number, number, number];
    readonly spectrogram_bins: () => number;
    readonly stoi_vs_snr: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
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
