/* tslint:disable */
/* eslint-disable */

/**
 * Mix two synthetic speakers and low-pass noise at the requested ratios.
 *
 * Returns `[sir, snr, sdr_of_mixture, mixture..., target...]`: three
 * measured values followed by two signals of equal length.
 */
export function mix_speakers(target_seed: bigint, interferer_seed: bigint, sir_db: number, snr_db: number, duration_s: number): Float64Array;

export function sample_rate(): number;

/**
 * Soft loss at `n_points` temperatures log-spaced over [`tau_min`, `tau_max`].
 */
export function soft_curve(losses: Float64Array, tau_min: number, tau_max: number, n_points: number): Float64Array;

/**
 * Base pitch in Hz of the speaker drawn from `speaker_seed`.
 */
export function speaker_f0(speaker_seed: bigint): number;

/**
 * One utterance of a synthetic speaker. Different `utterance_seed`s give
 * the same voice with utterance-level variation scaled by `variability`
 * (0 gives identical voice parameters every time).
 */
export function synth_voice(speaker_seed: bigint, utterance_seed: bigint, duration_s: number, variability: number): Float64Array;

/**
 * Soft worst-enrollment weights for `losses` at temperature `tau`,
 * followed by the soft loss, the hard (max) loss and the mean.
 */
export function worst_weights(losses: Float64Array, tau: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly mix_speakers: (a: bigint, b: bigint, c: number, d: number, e: number) => [number, number, number, number];
    readonly sample_rate: () => number;
    readonly soft_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly speaker_f0: (a: bigint) => number;
    readonly synth_voice: (a: bigint, b: bigint, c: number, d: number) => [number, number, number, number];
    readonly worst_weights: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
