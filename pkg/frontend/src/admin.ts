import type { ApiClient } from "./api.js";
import type { Session } from "./session.js";

/**
 * Login plus the Admin-only panels: user management and repository
 * creation. The panels stay hidden below the Admin role; the server
 * enforces the same restriction on the endpoints themselves.
 */
export class AdminScreen {
    public root: HTMLElement;
    private loginForm: HTMLFormElement;
    private whoAmI: HTMLElement;
    private userPanel: HTMLElement;
    private repoPanel: HTMLElement;
    private message: HTMLElement;

    constructor(private api: ApiClient, private session: Session) {
        this.root = document.createElement("section");
        this.root.className = "admin-screen";

        this.loginForm = document.createElement("form");
        this.loginForm.className = "login-form";
        this.loginForm.innerHTML = `
            <label>Username <input name="username" autocomplete="username"></label>
            <label>Password <input name="password" type="password"
                   autocomplete="current-password"></label>
            <button type="submit">Log in</button>`;
        this.loginForm.addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.doLogin();
        });

        this.whoAmI = document.createElement("p");
        this.whoAmI.className = "whoami";

        this.userPanel = document.createElement("form");
        this.userPanel.className = "user-panel";
        this.userPanel.innerHTML = `
            <h3>Users</h3>
            <label>Username <input name="new_username"></label>
            <label>Password <input name="new_password" type="password"></label>
            <label>Role
                <select name="new_role">
                    <option>Reader</option>
                    <option>Writer</option>
                    <option>Admin</option>
                </select>
            </label>
            <button type="submit">Create or update</button>`;
        this.userPanel.addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.doCreateUser();
        });

        this.repoPanel = document.createElement("form");
        this.repoPanel.className = "repo-panel";
        this.repoPanel.innerHTML = `
            <h3>Repository</h3>
            <label>Backend
                <select name="backend">
                    <option>file</option>
                    <option>relational</option>
                </select>
            </label>
            <label>Root <input name="root" placeholder="served root if empty"></label>
            <button type="submit">Create repository</button>`;
        this.repoPanel.addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.doCreateRepository();
        });

        this.message = document.createElement("p");
        this.message.className = "admin-message";
        this.message.hidden = true;

        this.root.append(
            this.loginForm,
            this.whoAmI,
            this.userPanel,
            this.repoPanel,
            this.message,
        );
        session.onChange = () => this.refresh();
        this.refresh();
    }

    refresh() {
        const user = this.session.user;
        this.loginForm.hidden = user !== null;
        this.whoAmI.textContent = user
            ? `signed in as ${user.username} (${user.role})`
            : "not signed in";
        const isAdmin = this.session.hasRole("Admin");
        this.userPanel.hidden = !isAdmin;
        this.repoPanel.hidden = !isAdmin;
    }

    private field(form: HTMLElement, name: string): HTMLInputElement {
        return form.querySelector(`[name="${name}"]`) as HTMLInputElement;
    }

    private async doLogin() {
        try {
            const u = this.field(this.loginForm, "username").value;
            const p = this.field(this.loginForm, "password").value;
            await this.session.login(u, p);
            this.report("logged in");
        } catch (err) {
            this.report(err instanceof Error ? err.message : String(err));
        }
    }

    private async doCreateUser() {
        try {
            const out = await this.api.createUser(
                this.field(this.userPanel, "new_username").value,
                this.field(this.userPanel, "new_password").value,
                this.field(this.userPanel, "new_role").value,
            );
            this.report(`user ${out.username} has role ${out.role}`);
        } catch (err) {
            this.report(err instanceof Error ? err.message : String(err));
        }
    }

    private async doCreateRepository() {
        try {
            const out = await this.api.createRepository(
                this.field(this.repoPanel, "backend").value,
                this.field(this.repoPanel, "root").value || undefined,
            );
            this.report(
                `created ${out.backend} repository at ${out.root}` +
                    (out.serving ? ", now serving" : ""),
            );
        } catch (err) {
            this.report(err instanceof Error ? err.message : String(err));
        }
    }

    private report(message: string) {
        this.message.textContent = message;
        this.message.hidden = false;
    }
}
