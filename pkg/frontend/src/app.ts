import { ApiClient } from "./api.js";
import { AdminScreen } from "./admin.js";
import { RunDetailScreen } from "./detail.js";
import { SearchScreen } from "./search.js";
import { Session } from "./session.js";

export type AppConfig = {
    apiBaseUrl: string;
};

/** Hash-routed shell: #/ search, #/runs/P/N detail, #/admin admin. */
export class App {
    public root: HTMLElement;
    public api: ApiClient;
    public session: Session;
    private outlet: HTMLElement;

    constructor(config: AppConfig) {
        this.api = new ApiClient(config.apiBaseUrl);
        this.session = new Session(this.api);
        this.root = document.createElement("div");
        this.root.className = "obk-app";
        const nav = document.createElement("nav");
        nav.innerHTML =
            '<a href="#/">Search</a> <a href="#/admin">Admin</a>';
        this.outlet = document.createElement("main");
        this.root.append(nav, this.outlet);
        window.addEventListener("hashchange", () => void this.route());
    }

    async route(): Promise<void> {
        const hash = window.location.hash || "#/";
        const detail = hash.match(/^#\/runs\/([^/]+)\/(\d+)$/);
        this.outlet.textContent = "";
        if (detail) {
            const screen = new RunDetailScreen(
                this.api,
                this.session,
                decodeURIComponent(detail[1]!),
                Number(detail[2]),
            );
            this.outlet.appendChild(screen.root);
            await screen.load();
        } else if (hash === "#/admin") {
            this.outlet.appendChild(new AdminScreen(this.api, this.session).root);
        } else {
            const screen = new SearchScreen(this.api);
            this.outlet.appendChild(screen.root);
            await screen.submit();
        }
    }
}
