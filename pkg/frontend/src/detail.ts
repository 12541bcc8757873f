import type {
    ApiClient,
    AttachmentMeta,
    CommentRecord,
    IsRecord,
    MrsRecord,
    RunDetail,
    Sequenced,
} from "./api.js";
import { CommentForm } from "./comment.js";
import type { Session } from "./session.js";

// media types shown in the page or a new window; anything else downloads
export const INLINE_TYPES = [
    "text/plain",
    "image/png",
    "image/jpeg",
    "application/pdf",
];

const esc = (s: string) =>
    s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

type TabName = "mrs" | "is" | "comments";

export class RunDetailScreen {
    public root: HTMLElement;
    public detail: RunDetail | null = null;
    public commentForm: CommentForm;
    private header: HTMLElement;
    private tabBar: HTMLElement;
    private panes: Record<TabName, HTMLElement>;
    private active: TabName = "mrs";

    constructor(
        private api: ApiClient,
        session: Session,
        public partition: string,
        public runNumber: number,
    ) {
        this.root = document.createElement("section");
        this.root.className = "run-detail";
        this.header = document.createElement("div");
        this.header.className = "run-header";
        this.tabBar = document.createElement("nav");
        this.panes = {
            mrs: document.createElement("div"),
            is: document.createElement("div"),
            comments: document.createElement("div"),
        };
        for (const name of ["mrs", "is", "comments"] as TabName[]) {
            const b = document.createElement("button");
            b.textContent = name;
            b.dataset.tab = name;
            b.addEventListener("click", () => this.showTab(name));
            this.tabBar.appendChild(b);
            this.panes[name].className = `pane pane-${name}`;
            this.panes[name].hidden = name !== this.active;
        }
        this.commentForm = new CommentForm(api, session, partition, runNumber);
        this.commentForm.onPosted = () => void this.load();
        this.root.append(
            this.header,
            this.tabBar,
            this.panes.mrs,
            this.panes.is,
            this.panes.comments,
        );
    }

    showTab(name: TabName) {
        this.active = name;
        for (const t of ["mrs", "is", "comments"] as TabName[]) {
            this.panes[t].hidden = t !== name;
        }
    }

    async load(): Promise<void> {
        this.detail = await this.api.runDetail(this.partition, this.runNumber);
        this.renderHeader();
        this.renderMrs(this.detail.mrs);
        this.renderIs(this.detail.is_objects);
        this.renderComments(this.detail.comments);
    }

    private renderHeader() {
        const h = this.detail!.header;
        this.header.innerHTML = `
            <h2>${esc(h.partition)} run ${h.run_number}</h2>
            <p>${esc(h.start_time)} to ${esc(h.end_time ?? "still open")},
               status ${esc(h.status)},
               ${h.num_events ?? "?"} of ${h.max_events} events,
               trigger ${esc(h.trigger_type)},
               mask ${esc(h.detector_mask)},
               beam ${esc(h.beam_type) || "none"}</p>`;
    }

    private renderMrs(rows: Sequenced<MrsRecord>[]) {
        const pane = this.panes.mrs;
        pane.textContent = "";
        const table = document.createElement("table");
        table.innerHTML =
            "<thead><tr><th>Time</th><th>Severity</th><th>Application</th>" +
            "<th>Name</th><th>Text</th></tr></thead>";
        const body = document.createElement("tbody");
        for (const { record } of rows) {
            const tr = document.createElement("tr");
            tr.innerHTML =
                `<td>${esc(record.timestamp)}</td>` +
                `<td>${esc(record.severity)}</td>` +
                `<td>${esc(record.application)}</td>` +
                `<td>${esc(record.message_name)}</td>` +
                `<td>${esc(record.text)}</td>`;
            body.appendChild(tr);
        }
        table.appendChild(body);
        pane.appendChild(table);
    }

    private renderIs(rows: Sequenced<IsRecord>[]) {
        const pane = this.panes.is;
        pane.textContent = "";
        for (const { record } of rows) {
            const details = document.createElement("details");
            const summary = document.createElement("summary");
            summary.textContent =
                `${record.object_name} (${record.class_name}) at ${record.timestamp}`;
            details.appendChild(summary);
            const list = document.createElement("ul");
            for (const attr of record.attributes) {
                const li = document.createElement("li");
                const shown =
                    typeof attr.value === "string"
                        ? attr.value
                        : JSON.stringify(attr.value);
                li.textContent = `${attr.name}: ${shown} (${attr.type}${
                    attr.elem ? " of " + attr.elem : ""})`;
                list.appendChild(li);
            }
            details.appendChild(list);
            pane.appendChild(details);
        }
    }

    attachmentNode(att: AttachmentMeta): HTMLElement {
        const url = this.api.attachmentUrl(att.digest);
        if (att.media_type.startsWith("image/") && INLINE_TYPES.includes(att.media_type)) {
            const img = document.createElement("img");
            img.src = url;
            img.alt = att.filename;
            img.dataset.digest = att.digest;
            return img;
        }
        const a = document.createElement("a");
        a.href = url;
        a.textContent = `${att.filename} (${att.media_type}, ${att.size_bytes} bytes)`;
        a.dataset.digest = att.digest;
        if (INLINE_TYPES.includes(att.media_type)) {
            a.target = "_blank"; // shown by the browser in another window
        } else {
            a.setAttribute("download", att.filename);
        }
        return a;
    }

    private renderComments(rows: Sequenced<CommentRecord>[]) {
        const pane = this.panes.comments;
        pane.textContent = "";
        const list = document.createElement("div");
        list.className = "comment-list";
        for (const { record } of rows) {
            list.appendChild(this.commentNode(record));
        }
        pane.appendChild(list);
        pane.appendChild(this.commentForm.root);
    }

    commentNode(record: CommentRecord): HTMLElement {
        const div = document.createElement("article");
        div.className = "comment";
        div.dataset.commentId = String(record.comment_id);
        const head = document.createElement("p");
        head.textContent =
            `#${record.comment_id} ${record.author} (${record.origin}) ` +
            record.created_at;
        const body = document.createElement("p");
        body.textContent = record.text;
        div.append(head, body);
        for (const att of record.attachments) {
            div.appendChild(this.attachmentNode(att));
        }
        return div;
    }
}
