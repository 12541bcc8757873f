import { readFileSync, readdirSync } from "node:fs";
import { fileURLToPath } from "node:url";
import path from "node:path";
import type { RunHeader } from "../src/api.js";

// recorded request/response pairs produced by the service test suite
export type GoldenCase = {
    name: string;
    method: string;
    path: string;
    query: Record<string, string>;
    auth: string | null;
    form: Record<string, string>;
    status: number;
    body: unknown;
};

const GOLDEN_DIR = path.resolve(
    path.dirname(fileURLToPath(import.meta.url)),
    "..", "..", "tests", "fixtures", "golden",
);

export function loadGoldens(): Map<string, GoldenCase> {
    const out = new Map<string, GoldenCase>();
    for (const file of readdirSync(GOLDEN_DIR).sort()) {
        if (!file.endsWith(".json")) continue;
        const doc = JSON.parse(readFileSync(path.join(GOLDEN_DIR, file), "utf8"));
        out.set(doc.name, doc as GoldenCase);
    }
    return out;
}

export function golden(name: string): GoldenCase {
    const c = loadGoldens().get(name);
    if (!c) throw new Error(`no golden case named ${name}`);
    return c;
}

/** Deterministic JSON bytes: object keys sorted, no whitespace. */
export function canonicalJson(value: unknown): Buffer {
    const normalize = (v: unknown): unknown => {
        if (Array.isArray(v)) return v.map(normalize);
        if (v !== null && typeof v === "object") {
            const entries = Object.entries(v as Record<string, unknown>)
                .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
                .map(([k, val]) => [k, normalize(val)]);
            return Object.fromEntries(entries);
        }
        return v;
    };
    return Buffer.from(JSON.stringify(normalize(value)), "utf8");
}

/**
 * Rebuild a run header from a rendered results row. Inverse of the table's
 * cell formatting: empty End and Events cells mean null, every other field
 * is carried verbatim.
 */
export function rowToHeader(tr: HTMLTableRowElement): RunHeader {
    const cells = Array.from(tr.querySelectorAll("td")).map(
        (td) => td.textContent ?? "",
    );
    if (cells.length !== 10) throw new Error(`row has ${cells.length} cells`);
    return {
        partition: cells[0]!,
        run_number: Number(cells[1]),
        start_time: cells[2]!,
        end_time: cells[3] === "" ? null : cells[3]!,
        status: cells[4]! as RunHeader["status"],
        num_events: cells[5] === "" ? null : Number(cells[5]),
        max_events: Number(cells[6]),
        trigger_type: cells[7]!,
        detector_mask: cells[8]!,
        beam_type: cells[9]!,
    };
}

type Handler = (url: URL, init?: RequestInit) => Response | Promise<Response>;

/** fetch stand-in routing to a handler and counting every call. */
export function mockFetch(handler: Handler) {
    const calls: URL[] = [];
    const impl = async (url: string, init?: RequestInit): Promise<Response> => {
        const parsed = new URL(url, "http://testhost");
        calls.push(parsed);
        return handler(parsed, init);
    };
    return { impl, calls };
}

export function jsonResponse(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
        status,
        headers: { "Content-Type": "application/json" },
    });
}
