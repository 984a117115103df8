/* tslint:disable */
/* eslint-disable */

/**
 * One document before and after anonymization, as RGBA buffers for a canvas.
 */
export class Rendered {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    anonymized_rgba(): Uint8Array;
    /**
     * JSON array of `{x, y, w, h, kind, selected}`.
     */
    boxes_json(): string;
    original_rgba(): Uint8Array;
    readonly height: number;
    readonly width: number;
}

export function anonymize_document(label: number, seed: number, method: string, degree: number): Rendered;

export function class_names(): string;

export function crop_batch(adaption: string, globals: number, locals: number, seed: number, width: number, height: number): string;

export function degree_sweep(n_docs: number, method: string, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_rendered_free: (a: number, b: number) => void;
    readonly anonymize_document: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly class_names: () => [number, number];
    readonly crop_batch: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly degree_sweep: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly rendered_anonymized_rgba: (a: number) => [number, number];
    readonly rendered_boxes_json: (a: number) => [number, number];
    readonly rendered_height: (a: number) => number;
    readonly rendered_original_rgba: (a: number) => [number, number];
    readonly rendered_width: (a: number) => number;
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
