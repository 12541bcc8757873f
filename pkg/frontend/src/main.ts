import { App } from "./app.js";

const app = new App({
    apiBaseUrl: (window as any).OBK_API_BASE ?? window.location.origin,
});
document.body.appendChild(app.root);
void app.route();
