import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // the integration suite replays full traces through a spawned service
    testTimeout: 180_000,
    hookTimeout: 120_000,
    pool: "forks",
  },
});
