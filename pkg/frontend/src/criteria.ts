// Search form state and its mapping onto /api/v1/runs query parameters.
// Every shape the form can emit must pass the server's parameter parser,
// so the grammar here mirrors the server exactly.

export type SortKey = "run_number" | "start_time" | "num_events";
export type SortDir = "asc" | "desc";

export const SORT_KEYS: SortKey[] = ["run_number", "start_time", "num_events"];
export const KNOWN_TRIGGERS = ["Cosmic", "Calibration", "Physics"];

export type FormState = {
    status: "" | "Good" | "Bad";
    maxEvents: string;
    startFrom: string;
    startTo: string;
    beamType: string;
    triggerType: string;
    sort: "" | SortKey;
    dir: SortDir;
};

export const EMPTY_FORM: FormState = {
    status: "",
    maxEvents: "",
    startFrom: "",
    startTo: "",
    beamType: "",
    triggerType: "",
    sort: "",
    dir: "desc",
};

const ISO_RE = /^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{3}Z$/;

/** Expand a datetime-local value to full ISO-8601 UTC with milliseconds. */
export function isoFromLocalInput(value: string): string {
    // datetime-local omits seconds and millis when they are zero
    let v = value;
    if (/^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}$/.test(v)) v += ":00";
    if (/^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}$/.test(v)) v += ".000";
    const iso = v + "Z";
    if (!ISO_RE.test(iso)) throw new Error(`bad date value ${value}`);
    return iso;
}

/** Inline validation; returns an error message or null when submittable. */
export function validateForm(f: FormState): string | null {
    if (f.maxEvents !== "" && !/^\d+$/.test(f.maxEvents)) {
        return "max events must be a non-negative integer";
    }
    for (const v of [f.startFrom, f.startTo]) {
        if (v === "") continue;
        try {
            isoFromLocalInput(v);
        } catch {
            return "dates must be complete date and time values";
        }
    }
    if (f.startFrom !== "" && f.startTo !== "") {
        if (isoFromLocalInput(f.startFrom) > isoFromLocalInput(f.startTo)) {
            return "start of the date range is after its end";
        }
    }
    return null;
}

/**
 * Build the query for a validated form. Fields left at their defaults are
 * omitted; choosing a sort key emits both sort and dir so the pair always
 * travels together.
 */
export function formToParams(f: FormState): URLSearchParams {
    const q = new URLSearchParams();
    if (f.status) q.set("status", f.status);
    if (f.maxEvents !== "") q.set("max_events", f.maxEvents);
    if (f.startFrom !== "") q.set("start_from", isoFromLocalInput(f.startFrom));
    if (f.startTo !== "") q.set("start_to", isoFromLocalInput(f.startTo));
    if (f.beamType !== "") q.set("beam_type", f.beamType);
    if (f.triggerType !== "") q.set("trigger_type", f.triggerType);
    if (f.sort !== "") {
        q.set("sort", f.sort);
        q.set("dir", f.dir);
    }
    return q;
}
