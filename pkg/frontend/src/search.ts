import type { ApiClient, RunHeader } from "./api.js";
import {
    EMPTY_FORM,
    FormState,
    KNOWN_TRIGGERS,
    SORT_KEYS,
    formToParams,
    validateForm,
} from "./criteria.js";
import { ResultsTable } from "./table.js";

/**
 * The search screen: a criteria form over the run repository and the
 * results table it fills. Responses arriving out of order are dropped by
 * comparing a per-submit sequence number, so a slow early query can never
 * overwrite the rows of a later one.
 */
export class SearchScreen {
    public root: HTMLElement;
    public table: ResultsTable;
    private form: HTMLFormElement;
    private error: HTMLElement;
    private seq = 0;
    public lastRuns: RunHeader[] = [];

    constructor(private api: ApiClient) {
        this.root = document.createElement("section");
        this.root.className = "search-screen";
        this.form = document.createElement("form");
        this.form.innerHTML = `
            <label>Run status
                <select name="status">
                    <option value=""></option>
                    <option>Good</option>
                    <option>Bad</option>
                </select>
            </label>
            <label>Max events at most
                <input name="max_events" type="number" min="0" step="1">
            </label>
            <label>Started from
                <input name="start_from" type="datetime-local" step="0.001">
            </label>
            <label>Started until
                <input name="start_to" type="datetime-local" step="0.001">
            </label>
            <label>Beam type
                <input name="beam_type" type="text">
            </label>
            <label>Trigger type
                <input name="trigger_type" list="trigger-options">
                <datalist id="trigger-options">
                    ${KNOWN_TRIGGERS.map((t) => `<option value="${t}">`).join("")}
                </datalist>
            </label>
            <label>Sort by
                <select name="sort">
                    <option value="">newest first</option>
                    ${SORT_KEYS.map((k) => `<option>${k}</option>`).join("")}
                </select>
            </label>
            <label>Direction
                <select name="dir">
                    <option>desc</option>
                    <option>asc</option>
                </select>
            </label>
            <button type="submit">Search</button>
        `;
        this.error = document.createElement("p");
        this.error.className = "form-error";
        this.error.hidden = true;
        this.table = new ResultsTable();
        this.root.appendChild(this.form);
        this.root.appendChild(this.error);
        this.root.appendChild(this.table.root);
        this.form.addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.submit();
        });
    }

    readForm(): FormState {
        const get = (name: string) =>
            (this.form.elements.namedItem(name) as HTMLInputElement | HTMLSelectElement)
                .value;
        return {
            status: get("status") as FormState["status"],
            maxEvents: get("max_events"),
            startFrom: get("start_from"),
            startTo: get("start_to"),
            beamType: get("beam_type"),
            triggerType: get("trigger_type"),
            sort: get("sort") as FormState["sort"],
            dir: get("dir") as FormState["dir"],
        };
    }

    setForm(state: Partial<FormState>) {
        const full = { ...EMPTY_FORM, ...state };
        const set = (name: string, value: string) => {
            (this.form.elements.namedItem(name) as HTMLInputElement).value = value;
        };
        set("status", full.status);
        set("max_events", full.maxEvents);
        set("start_from", full.startFrom);
        set("start_to", full.startTo);
        set("beam_type", full.beamType);
        set("trigger_type", full.triggerType);
        set("sort", full.sort);
        set("dir", full.dir);
    }

    /** Validate, then query; invalid forms show inline text and send nothing. */
    async submit(): Promise<void> {
        const state = this.readForm();
        const problem = validateForm(state);
        if (problem !== null) {
            this.error.textContent = problem;
            this.error.hidden = false;
            return;
        }
        this.error.hidden = true;
        const mySeq = ++this.seq;
        const runs = await this.api.searchRuns(formToParams(state));
        if (mySeq !== this.seq) return; // a newer search already landed
        this.lastRuns = runs;
        this.table.render(runs);
    }
}
