import type { ApiClient, CommentResult, UploadFile } from "./api.js";
import type { Session } from "./session.js";

// Blob.arrayBuffer is missing from older engines, FileReader is everywhere
function fileBytes(f: File): Promise<Uint8Array> {
    if (typeof f.arrayBuffer === "function") {
        return f.arrayBuffer().then((b) => new Uint8Array(b));
    }
    return new Promise((resolve, reject) => {
        const reader = new FileReader();
        reader.onload = () => resolve(new Uint8Array(reader.result as ArrayBuffer));
        reader.onerror = () => reject(reader.error);
        reader.readAsArrayBuffer(f);
    });
}

/**
 * Text plus multi-file comment entry. Posting requires the Writer role;
 * the form simply does not render for anyone below it. On success the
 * owner's callback refreshes the surrounding comment list.
 */
export class CommentForm {
    public root: HTMLElement;
    public onPosted?: (result: CommentResult) => void;
    private textArea: HTMLTextAreaElement;
    private fileInput: HTMLInputElement;
    private status: HTMLElement;

    constructor(
        private api: ApiClient,
        private session: Session,
        private partition: string,
        private runNumber: number,
    ) {
        this.root = document.createElement("form");
        this.root.className = "comment-form";
        this.textArea = document.createElement("textarea");
        this.textArea.name = "text";
        this.textArea.rows = 3;
        this.fileInput = document.createElement("input");
        this.fileInput.type = "file";
        this.fileInput.multiple = true;
        const button = document.createElement("button");
        button.type = "submit";
        button.textContent = "Add comment";
        this.status = document.createElement("p");
        this.status.className = "comment-status";
        this.status.hidden = true;
        this.root.append(this.textArea, this.fileInput, button, this.status);
        this.root.hidden = !session.hasRole("Writer");
        this.root.addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.submit();
        });
    }

    async submit(): Promise<void> {
        if (!this.session.hasRole("Writer")) return;
        const text = this.textArea.value;
        const files: UploadFile[] = [];
        for (const f of Array.from(this.fileInput.files ?? [])) {
            files.push({
                filename: f.name,
                mediaType: f.type || "application/octet-stream",
                bytes: await fileBytes(f),
            });
        }
        if (!text.trim() && files.length === 0) {
            this.report("a comment needs text or a file");
            return;
        }
        try {
            const result = await this.api.postComment(
                this.partition,
                this.runNumber,
                text,
                files,
            );
            this.textArea.value = "";
            this.fileInput.value = "";
            this.report(`comment ${result.comment_id} added`);
            this.onPosted?.(result);
        } catch (err) {
            this.report(err instanceof Error ? err.message : String(err));
        }
    }

    private report(message: string) {
        this.status.textContent = message;
        this.status.hidden = false;
    }
}
