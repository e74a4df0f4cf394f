import { defineConfig } from "vitest/config";

export default defineConfig({
  server: {
    port: 5173,
    // the studio talks to the inference service through /api
    proxy: {
      "/api": {
        target: process.env.STUDIO_API_URL ?? "http://127.0.0.1:8270",
        changeOrigin: true,
      },
    },
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
