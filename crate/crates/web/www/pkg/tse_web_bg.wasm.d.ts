/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const mix_speakers: (a: bigint, b: bigint, c: number, d: number, e: number) => [number, number, number, number];
export const sample_rate: () => number;
export const soft_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const speaker_f0: (a: bigint) => number;
export const synth_voice: (a: bigint, b: bigint, c: number, d: number) => [number, number, number, number];
export const worst_weights: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
