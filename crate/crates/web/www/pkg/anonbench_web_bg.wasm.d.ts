/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_rendered_free: (a: number, b: number) => void;
export const anonymize_document: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const class_names: () => [number, number];
export const crop_batch: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const degree_sweep: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const rendered_anonymized_rgba: (a: number) => [number, number];
export const rendered_boxes_json: (a: number) => [number, number];
export const rendered_height: (a: number) => number;
export const rendered_original_rgba: (a: number) => [number, number];
export const rendered_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
