/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_degraded_free: (a: number, b: number) => void;
export const degrade_and_score: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const degraded_clean: (a: number) => [number, number];
export const degraded_degraded: (a: number) => [number, number];
export const degraded_sample_rate: (a: number) => number;
export const degraded_snr_db: (a: number) => number;
export const degraded_stoi: (a: number) => number;
export const spectrogram: (a: number, b: number) => [number, number, number, number];
export const spectrogram_bins: () => number;
export const stoi_vs_snr: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
