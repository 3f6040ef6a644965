import { createApp } from "./app";
import { loadConfig } from "./config";

const config = loadConfig();
const app = createApp(config);
app.listen(config.port, config.host, () => {
  console.log(
    `sidecar listening on http://${config.host}:${config.port} ` +
      `(embed=${config.embedModelId}, normalize=${config.normalizeModelId})`
  );
});
