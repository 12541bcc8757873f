import type { RunHeader } from "./api.js";

export const COLUMNS = [
    "Partition",
    "Run Number",
    "Start",
    "End",
    "Status",
    "Events",
    "MaxEvents",
    "Trigger",
    "DetectorMask",
    "Beam",
] as const;

const esc = (s: string) =>
    s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

const num = (n: number | null) => (n === null ? "" : String(n));

export class ResultsTable {
    public root: HTMLTableElement;
    private body: HTMLTableSectionElement;
    public onOpenRun?: (partition: string, runNumber: number) => void;

    constructor() {
        this.root = document.createElement("table");
        this.root.className = "results";
        const head = document.createElement("thead");
        head.innerHTML =
            "<tr>" + COLUMNS.map((c) => `<th>${c}</th>`).join("") + "</tr>";
        this.root.appendChild(head);
        this.body = document.createElement("tbody");
        this.root.appendChild(this.body);
    }

    render(runs: RunHeader[]) {
        this.body.textContent = "";
        for (const run of runs) {
            const tr = document.createElement("tr");
            tr.innerHTML = [
                `<td>${esc(run.partition)}</td>`,
                `<td><a href="#/runs/${encodeURIComponent(run.partition)}/` +
                    `${run.run_number}">${run.run_number}</a></td>`,
                `<td>${esc(run.start_time)}</td>`,
                `<td>${esc(run.end_time ?? "")}</td>`,
                `<td>${esc(run.status)}</td>`,
                `<td>${num(run.num_events)}</td>`,
                `<td>${num(run.max_events)}</td>`,
                `<td>${esc(run.trigger_type)}</td>`,
                `<td>${esc(run.detector_mask)}</td>`,
                `<td>${esc(run.beam_type)}</td>`,
            ].join("");
            tr.addEventListener("click", () => {
                this.onOpenRun?.(run.partition, run.run_number);
            });
            this.body.appendChild(tr);
        }
    }

    rows(): HTMLTableRowElement[] {
        return Array.from(this.body.querySelectorAll("tr"));
    }
}
