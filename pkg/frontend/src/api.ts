// Typed client for the bookkeeping service JSON API (/api/v1).
// The app talks to the service exclusively through this module.

export type RunStatus = "Good" | "Bad" | "Open";

export type RunHeader = {
    partition: string;
    run_number: number;
    start_time: string;
    end_time: string | null;
    status: RunStatus;
    num_events: number | null;
    max_events: number;
    trigger_type: string;
    beam_type: string;
    detector_mask: string;
};

export type MrsRecord = {
    message_name: string;
    severity: string;
    application: string;
    text: string;
    timestamp: string;
    qualifiers: string[];
};

export type IsAttribute = {
    name: string;
    type: string;
    value: unknown;
    elem?: string;
};

export type IsRecord = {
    server: string;
    object_name: string;
    class_name: string;
    attributes: IsAttribute[];
    timestamp: string;
};

export type AttachmentMeta = {
    filename: string;
    media_type: string;
    size_bytes: number;
    digest: string;
};

export type CommentRecord = {
    comment_id: number;
    author: string;
    created_at: string;
    text: string;
    origin: string;
    attachments: AttachmentMeta[];
};

export type Sequenced<T> = { seq: number; record: T };

export type RunDetail = {
    header: RunHeader;
    mrs: Sequenced<MrsRecord>[];
    is_objects: Sequenced<IsRecord>[];
    comments: Sequenced<CommentRecord>[];
};

export type LoginResult = {
    token: string;
    username: string;
    role: "Reader" | "Writer" | "Admin";
    expires_in: number;
};

export type CommentResult = {
    comment_id: number;
    attachments: AttachmentMeta[];
};

export type UploadFile = {
    filename: string;
    mediaType: string;
    bytes: Uint8Array;
};

export class ApiError extends Error {
    constructor(
        public status: number,
        public code: string,
        message: string,
        public field?: string,
    ) {
        super(message);
    }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function raise(res: Response): Promise<never> {
    let code = "HTTP_" + res.status;
    let message = res.statusText;
    let field: string | undefined;
    try {
        const body = await res.json();
        if (body && body.error) {
            code = body.error.code ?? code;
            message = body.error.message ?? message;
            field = body.error.field;
        }
    } catch {
        // non-JSON error body, keep the status line
    }
    throw new ApiError(res.status, code, message, field);
}

export class ApiClient {
    token: string | null = null;

    constructor(
        public baseUrl: string,
        private fetchImpl: FetchLike = (url, init) => fetch(url, init),
    ) {
        this.baseUrl = baseUrl.replace(/\/+$/, "");
    }

    private headers(): Record<string, string> {
        return this.token ? { Authorization: `Bearer ${this.token}` } : {};
    }

    private async getJson<T>(path: string): Promise<T> {
        const res = await this.fetchImpl(this.baseUrl + path, {
            headers: this.headers(),
        });
        if (!res.ok) await raise(res);
        return (await res.json()) as T;
    }

    async partitions(): Promise<string[]> {
        const body = await this.getJson<{ partitions: string[] }>("/api/v1/partitions");
        return body.partitions;
    }

    async searchRuns(params: URLSearchParams): Promise<RunHeader[]> {
        const qs = params.toString();
        const body = await this.getJson<{ runs: RunHeader[] }>(
            "/api/v1/runs" + (qs ? "?" + qs : ""),
        );
        return body.runs;
    }

    async runDetail(partition: string, runNumber: number): Promise<RunDetail> {
        const p = encodeURIComponent(partition);
        return this.getJson<RunDetail>(`/api/v1/runs/${p}/${runNumber}`);
    }

    async login(username: string, password: string): Promise<LoginResult> {
        const res = await this.fetchImpl(this.baseUrl + "/api/v1/auth/login", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ username, password }),
        });
        if (!res.ok) await raise(res);
        const out = (await res.json()) as LoginResult;
        this.token = out.token;
        return out;
    }

    // Multipart body is assembled by hand so the client depends only on
    // fetch taking a byte buffer; field "text" plus one "files" part per upload.
    async postComment(
        partition: string,
        runNumber: number,
        text: string,
        files: UploadFile[],
    ): Promise<CommentResult> {
        const boundary = "obkform" + Math.random().toString(36).slice(2);
        const enc = new TextEncoder();
        const parts: Uint8Array[] = [];
        const push = (s: string) => parts.push(enc.encode(s));
        if (text) {
            push(`--${boundary}\r\n`);
            push('Content-Disposition: form-data; name="text"\r\n\r\n');
            push(text + "\r\n");
        }
        for (const f of files) {
            push(`--${boundary}\r\n`);
            push(
                'Content-Disposition: form-data; name="files"; ' +
                    `filename="${f.filename.replace(/"/g, "%22")}"\r\n`,
            );
            push(`Content-Type: ${f.mediaType}\r\n\r\n`);
            parts.push(f.bytes);
            push("\r\n");
        }
        push(`--${boundary}--\r\n`);
        let size = 0;
        for (const p of parts) size += p.length;
        const body = new Uint8Array(size);
        let off = 0;
        for (const p of parts) {
            body.set(p, off);
            off += p.length;
        }
        const p = encodeURIComponent(partition);
        const res = await this.fetchImpl(
            this.baseUrl + `/api/v1/runs/${p}/${runNumber}/comments`,
            {
                method: "POST",
                headers: {
                    ...this.headers(),
                    "Content-Type": `multipart/form-data; boundary=${boundary}`,
                },
                body,
            },
        );
        if (!res.ok) await raise(res);
        return (await res.json()) as CommentResult;
    }

    attachmentUrl(digest: string): string {
        return this.baseUrl + "/api/v1/attachments/" + digest;
    }

    async fetchAttachment(digest: string): Promise<Uint8Array> {
        const res = await this.fetchImpl(this.attachmentUrl(digest), {
            headers: this.headers(),
        });
        if (!res.ok) await raise(res);
        return new Uint8Array(await res.arrayBuffer());
    }

    async createUser(
        username: string,
        password: string,
        role: string,
    ): Promise<{ username: string; role: string }> {
        return this.postJson("/api/v1/admin/users", { username, password, role });
    }

    async createRepository(
        backend: string,
        root?: string,
    ): Promise<{ root: string; backend: string; serving: boolean }> {
        const body: Record<string, string> = { backend };
        if (root) body.root = root;
        return this.postJson("/api/v1/admin/repositories", body);
    }

    private async postJson<T>(path: string, payload: unknown): Promise<T> {
        const res = await this.fetchImpl(this.baseUrl + path, {
            method: "POST",
            headers: { ...this.headers(), "Content-Type": "application/json" },
            body: JSON.stringify(payload),
        });
        if (!res.ok) await raise(res);
        return (await res.json()) as T;
    }
}
