import type { ApiClient, LoginResult } from "./api.js";

export type Role = "Reader" | "Writer" | "Admin";

const RANK: Record<Role, number> = { Reader: 0, Writer: 1, Admin: 2 };

/**
 * Login state shared by all screens. Controls hidden for a role are only a
 * convenience; the server enforces the same rules on every request.
 */
export class Session {
    user: LoginResult | null = null;
    onChange?: () => void;

    constructor(private api: ApiClient) {}

    async login(username: string, password: string): Promise<LoginResult> {
        this.user = await this.api.login(username, password);
        this.onChange?.();
        return this.user;
    }

    logout() {
        this.user = null;
        this.api.token = null;
        this.onChange?.();
    }

    hasRole(needed: Role): boolean {
        return this.user !== null && RANK[this.user.role] >= RANK[needed];
    }
}
